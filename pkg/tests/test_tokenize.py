from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sigrec.ingest import SanitizedFunction
from sigrec.tokenize import (
    PAD,
    PAD_ID,
    UNK,
    UNK_ID,
    SliceSpec,
    Vocabulary,
    build_vocab,
    encode,
    slice_function,
    split_instruction,
)

FN10 = SanitizedFunction(("b", "f"), [f"i{k}" for k in range(1, 11)])


def test_slice_head_tail():
    assert slice_function(FN10, SliceSpec(5, "head")) == ["i1", "i2", "i3", "i4", "i5"]
    assert slice_function(FN10, SliceSpec(5, "tail")) == ["i6", "i7", "i8", "i9", "i10"]


def test_slice_short_function():
    f = SanitizedFunction(("b", "g"), [f"i{k}" for k in range(30)])
    assert slice_function(f, SliceSpec(40, "head")) == f.instructions
    assert slice_function(f, SliceSpec(40, "tail")) == f.instructions


def test_slicespec_validation():
    with pytest.raises(ValueError):
        SliceSpec(0)
    with pytest.raises(ValueError):
        SliceSpec(5, "middle")


@given(st.lists(st.text(min_size=1, max_size=4), min_size=1, max_size=30), st.integers(1, 40))
def test_head_tail_agree_when_short(insns, size):
    spec_h, spec_t = SliceSpec(size, "head"), SliceSpec(size, "tail")
    if len(insns) <= size:
        assert slice_function(insns, spec_h) == slice_function(insns, spec_t)


def _top_level_commas(text):
    depth, n = 0, 0
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        n += ch == "," and depth == 0
    return n


@pytest.mark.parametrize(
    "insn,words",
    [
        ("mov a,b", ["mov", "a", "b", PAD]),
        ("ret", ["ret", PAD, PAD, PAD]),
        ("mov IMM(%rip),%rax", ["mov", "IMM(%rip)", "%rax", PAD]),
        ("lea IMM(%rax,%rbx,8),%rdx", ["lea", "IMM(%rax,%rbx,8)", "%rdx", PAD]),
        ("je IMM<FUNC>", ["je", "IMM<FUNC>", PAD, PAD]),
        ("shld %cl,%rax,%rbx,%rcx", ["shld", "%cl", "%rax", "%rbx"]),
    ],
)
def test_split_instruction_examples(insn, words):
    assert split_instruction(insn) == words


def test_split_matches_comma_oracle():
    insn = "mov IMM(%rip),%rax"
    ops = insn.split(None, 1)[1]
    assert len([w for w in split_instruction(insn) if w != PAD]) == 1 + _top_level_commas(ops) + 1


@given(st.text(alphabet="abcdmov%$(),IMM<>FUNC \t", min_size=1, max_size=40))
def test_split_always_four_words(insn):
    words = split_instruction(insn)
    assert len(words) == 4
    if insn.strip():
        assert words[0] != PAD
    assert all(w and not any(c.isspace() for c in w) for w in words)


def test_build_vocab_threshold_and_order():
    counts = Counter({"mov": 5, "%rax": 5, "IMM": 2})
    v = build_vocab(counts, min_count=3)
    assert v.itos == [PAD, UNK, "%rax", "mov"]
    assert v.counts[UNK_ID] == 2
    assert build_vocab(counts, min_count=1).itos == [PAD, UNK, "%rax", "mov", "IMM"]


def test_build_vocab_empty():
    with pytest.raises(ValueError):
        build_vocab([], 1)


def test_vocab_roundtrip(tmp_path):
    v = build_vocab(["a", "b", "b", PAD, "c"], min_count=1)
    for i in range(2, len(v)):
        assert v.id(v.token(i)) == i
    p = tmp_path / "vocab.tsv"
    v.save(p)
    lines = p.read_text().splitlines()
    assert lines[0] == f"{PAD}\t1" and lines[1].startswith(UNK + "\t")
    assert Vocabulary.load(p) == v


def test_encode_padding():
    v = build_vocab(["ret"], min_count=1)
    seq = encode(["ret"], v, SliceSpec(5))
    assert seq.ids.tolist() == [v.id("ret")] + [PAD_ID] * 19
    assert seq.true_token_count == 4


def test_encode_unknown_token():
    v = build_vocab(["mov", "%rax"], min_count=1)
    seq = encode(["mov %rbx"], v, SliceSpec(1))
    assert seq.ids.tolist() == [v.id("mov"), UNK_ID, PAD_ID, PAD_ID]


def test_encode_length_160():
    v = build_vocab(["nop"], min_count=1)
    seq = encode(["nop"] * 40, v, SliceSpec(40))
    assert len(seq) == 160 and seq.true_token_count == 160


@given(st.integers(1, 20), st.integers(0, 25))
def test_encode_length_property(size, n):
    v = build_vocab(["nop", "mov", "a"], min_count=1)
    insns = slice_function(["mov a,a"] * max(n, 1), SliceSpec(size))
    seq = encode(insns, v, SliceSpec(size))
    assert len(seq.ids) == 4 * size
    assert np.all(seq.ids[seq.true_token_count:] == PAD_ID)
