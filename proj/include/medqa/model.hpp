#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "medqa/random.hpp"
#include "medqa/tensor.hpp"
#include "medqa/tokenizer.hpp"

namespace medqa {

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

enum class Mode { Train, Eval };

/// Anything the trainer, cross-validation and QA engine can drive: a set of
/// named parameters plus a forward pass from encodings to class logits.
class TrainableModel {
 public:
  virtual ~TrainableModel() = default;

  virtual std::size_t num_labels() const = 0;
  virtual std::size_t max_len() const = 0;

  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<const Parameter*> parameters() const = 0;

  /// Records the forward pass. `params` holds one Var per entry of parameters(),
  /// in the same order. `rng` drives dropout and may be null in Eval mode.
  virtual Var forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode mode,
                      Rng* rng) const = 0;

  virtual std::unique_ptr<TrainableModel> clone() const = 0;
};

/// Leaves for every parameter; only trainable ones request gradients when with_grad is set.
std::vector<Var> bind_parameters(Tape& tape, const TrainableModel& model, bool with_grad);

/// Evaluation-mode logits [batch × num_labels].
Tensor forward_logits(const TrainableModel& model, std::span<const Encoding> batch);

std::size_t count_parameters(const TrainableModel& model, bool trainable_only);

}  // namespace medqa
