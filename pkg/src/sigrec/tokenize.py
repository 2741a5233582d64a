"""Head/tail slicing, four-word instruction splitting and vocabulary encoding."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD = "<PAD>"
UNK = "<UNK>"
PAD_ID = 0
UNK_ID = 1
WORDS_PER_INSN = 4
SIZE_GRID = (5, 10, 20, 40, 80, 120)


@dataclass(frozen=True)
class SliceSpec:
    size: int = 40
    location: str = "head"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"slice size must be >= 1, got {self.size}")
        if self.location not in ("head", "tail"):
            raise ValueError(f"location must be 'head' or 'tail', got {self.location!r}")

    @property
    def timesteps(self) -> int:
        return WORDS_PER_INSN * self.size


def slice_function(instructions: Sequence[str], spec: SliceSpec) -> list[str]:
    insns = list(getattr(instructions, "instructions", instructions))
    if spec.location == "head":
        return insns[: spec.size]
    return insns[-spec.size:]


def _split_top_level(text: str) -> list[str]:
    parts = []
    depth = 0
    start = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(depth - 1, 0)
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def split_instruction(instr: str) -> list[str]:
    """Split into mnemonic plus top-level operands, padded/truncated to four words.

    Whitespace inside an operand word (prefixed instructions such as
    ``rep stos %rax,%es:(%rdi)``) is replaced by ``_`` so that every word is
    a single whitespace-free token.
    """
    fields = instr.split(None, 1)
    if not fields:
        return [PAD] * WORDS_PER_INSN
    words = [fields[0]]
    if len(fields) > 1:
        for op in _split_top_level(fields[1]):
            op = "_".join(op.split())
            if op:
                words.append(op)
    words = words[:WORDS_PER_INSN]
    words.extend([PAD] * (WORDS_PER_INSN - len(words)))
    return words


def instruction_words(instructions: Iterable[str] | str) -> list[str]:
    if isinstance(instructions, str):
        instructions = [instructions]
    out = []
    for insn in instructions:
        out.extend(split_instruction(insn))
    return out


class Vocabulary:
    """Token <-> id map with PAD at id 0 and UNK at id 1."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int]):
        if len(tokens) < 2 or tokens[0] != PAD or tokens[1] != UNK:
            raise ValueError("vocabulary must start with PAD and UNK")
        if len(tokens) != len(counts):
            raise ValueError("tokens and counts differ in length")
        self.itos = list(tokens)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self.itos == other.itos
            and np.array_equal(self.counts, other.counts)
        )

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        get = self.stoi.get
        return [get(t, UNK_ID) for t in tokens]

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for tok, c in zip(self.itos, self.counts.tolist()):
            h.update(f"{tok}\t{c}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok, c in zip(self.itos, self.counts.tolist()):
                fh.write(f"{tok}\t{c}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, c = line.rpartition("\t")
                if not tok:
                    raise ValueError(f"{path}:{lineno}: expected token<TAB>count")
                tokens.append(tok)
                counts.append(int(c))
        return cls(tokens, counts)


def build_vocab(corpus: Iterable[str] | Counter, min_count: int = 5) -> Vocabulary:
    """Vocabulary over a token stream (or a ready token -> count mapping).

    PAD occurrences are tallied on the reserved PAD row; tokens below
    ``min_count`` are folded into the UNK count.
    """
    counter = Counter(corpus) if not isinstance(corpus, Counter) else corpus
    if not counter:
        raise ValueError("empty corpus")
    pad_count = counter.get(PAD, 0)
    unk_count = counter.get(UNK, 0)
    kept = []
    for tok, c in counter.items():
        if tok in (PAD, UNK):
            continue
        if c >= min_count:
            kept.append((tok, c))
        else:
            unk_count += c
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    tokens = [PAD, UNK] + [t for t, _ in kept]
    counts = [pad_count, unk_count] + [c for _, c in kept]
    return Vocabulary(tokens, counts)


@dataclass
class TokenSequence:
    ids: np.ndarray
    true_token_count: int

    def __len__(self):
        return len(self.ids)


def encode(instructions: Sequence[str], vocab: Vocabulary, spec: SliceSpec) -> TokenSequence:
    insns = list(instructions)
    if len(insns) > spec.size:
        raise ValueError(f"{len(insns)} instructions exceed slice size {spec.size}")
    ids = np.zeros(spec.timesteps, dtype=np.int64)
    words = instruction_words(insns)
    ids[: len(words)] = vocab.ids(words)
    return TokenSequence(ids, len(words))


def encode_functions(functions, vocab: Vocabulary, spec: SliceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Slice and encode a batch; returns (ids [N, 4*size], lengths [N])."""
    n = len(functions)
    ids = np.zeros((n, spec.timesteps), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, f in enumerate(functions):
        seq = encode(slice_function(f, spec), vocab, spec)
        ids[i] = seq.ids
        lengths[i] = seq.true_token_count
    return ids, lengths
