#!/usr/bin/env python3
"""Generates src/unicode_tables.cpp: case folding plus accent stripping,
whitespace and punctuation/symbol classes used by the tokenizer."""

import sys
import unicodedata


def strip_marks(s):
    return "".join(c for c in unicodedata.normalize("NFD", s) if not unicodedata.category(c).startswith("M"))


def fold(s):
    return strip_marks(strip_marks(s).lower())


def ranges(predicate):
    out, start = [], None
    for cp in range(0x110000):
        hit = not (0xD800 <= cp <= 0xDFFF) and predicate(chr(cp))
        if hit and start is None:
            start = cp
        if not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main(path):
    mapping = []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        s = chr(cp)
        f = fold(s)
        assert fold(f) == f, hex(cp)
        if f != s:
            assert len(f) <= 3, hex(cp)
            mapping.append((cp, [ord(c) for c in f]))
    space = ranges(lambda c: c.isspace())
    punct = ranges(lambda c: unicodedata.category(c)[0] in "PS")
    with open(path, "w", encoding="utf-8") as out:
        out.write("// Generated by tools/gen_unicode_tables.py (Unicode %s). Do not edit.\n\n" % unicodedata.unidata_version)
        out.write('#include "unicode_tables.hpp"\n\nnamespace medqa::unicode {\n\n')
        out.write("const FoldEntry kFoldTable[] = {\n")
        for cp, seq in mapping:
            padded = seq + [0] * (3 - len(seq))
            out.write("    {0x%X, %d, {0x%X, 0x%X, 0x%X}},\n" % (cp, len(seq), *padded))
        out.write("};\nconst std::size_t kFoldTableSize = sizeof(kFoldTable) / sizeof(kFoldTable[0]);\n\n")
        for name, rs in (("kSpaceRanges", space), ("kPunctRanges", punct)):
            out.write("const Range %s[] = {\n" % name)
            for a, b in rs:
                out.write("    {0x%X, 0x%X},\n" % (a, b))
            out.write("};\nconst std::size_t %sSize = sizeof(%s) / sizeof(%s[0]);\n\n" % (name, name, name))
        out.write("}  // namespace medqa::unicode\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.cpp")
