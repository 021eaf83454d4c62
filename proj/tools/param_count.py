#!/usr/bin/env python3
"""Closed-form parameter counts for the encoder presets and their LoRA wraps.

Usage: param_count.py [vocab_size] [num_labels] [max_len]
"""
import sys

PRESETS = {
    "mini-roberta-base": (2, 64, 128),
    "mini-bert-uncased": (2, 64, 128),
    "mini-roberta-large": (4, 128, 256),
    "mini-bert-large-uncased": (4, 128, 256),
}


def encoder_params(layers, d, ff, vocab, max_len, labels):
    embeddings = vocab * d + max_len * d + 2 * d
    attention = 4 * (d * d + d) + 2 * d
    ffn = d * ff + ff + ff * d + d + 2 * d
    head = d * labels + labels
    return embeddings + layers * (attention + ffn) + head


def lora_trainable(layers, d, labels, rank=4, head=True):
    # query and value, both d -> d
    return layers * 2 * rank * (d + d) + (d * labels + labels if head else 0)


def main():
    vocab = int(sys.argv[1]) if len(sys.argv) > 1 else 60
    labels = int(sys.argv[2]) if len(sys.argv) > 2 else 40
    max_len = int(sys.argv[3]) if len(sys.argv) > 3 else 32
    for name, (layers, d, ff) in PRESETS.items():
        full = encoder_params(layers, d, ff, vocab, max_len, labels)
        lora = lora_trainable(layers, d, labels)
        wrapped = full + lora_trainable(layers, d, labels, head=False)
        print(f"{name}: full={full} wrapped_total={wrapped} lora_trainable={lora} fraction={lora / wrapped:.6f}")


if __name__ == "__main__":
    main()
