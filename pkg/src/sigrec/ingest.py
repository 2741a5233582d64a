"""Disassembly ingestion: objdump parsing, sanitization, dedup, labelling, splitting."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .labels import LabelError, SignatureLabel

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass
class RawFunction:
    name: str
    start_address: int
    instructions: list[str]


@dataclass
class SanitizedFunction:
    source_id: tuple[str, str]
    instructions: list[str]
    content_hash: str = ""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = content_hash(self.instructions)

    def __len__(self):
        return len(self.instructions)


@dataclass
class LabeledDataset:
    entries: list[tuple[SanitizedFunction, SignatureLabel]] = field(default_factory=list)
    split_seed: int = 0
    dropped: int = 0

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def functions(self) -> list[SanitizedFunction]:
        return [f for f, _ in self.entries]

    @property
    def labels(self) -> list[SignatureLabel]:
        return [lab for _, lab in self.entries]


# ---------------------------------------------------------------------------
# parsing

_HEADER_RE = re.compile(r"^(\S+)\s+<(.+)>:\s*$")
_INSN_RE = re.compile(r"^\s*([0-9a-fA-F]+):\t([^\t]*)(?:\t(.*))?$")
_HEX_RE = re.compile(r"^[0-9a-fA-F]+$")


def _normalize_insn(text: str) -> str:
    # drop objdump's trailing "# addr <sym>" annotation
    text = text.split("#", 1)[0]
    return " ".join(text.split())


def parse_listing(text: str) -> list[RawFunction]:
    """Split GNU objdump -d output into functions.

    Lines that carry only a byte column (continuations of long encodings)
    are skipped; section headers, the file banner and blank lines too.
    """
    functions: list[RawFunction] = []
    current: RawFunction | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("Disassembly of section") or "file format" in stripped:
            if stripped.startswith("Disassembly"):
                current = None
            continue
        m = _INSN_RE.match(line)
        if m:
            if current is None:
                raise ParseError("instruction outside any function", lineno)
            insn = m.group(3)
            if insn is None:
                continue
            insn = _normalize_insn(insn)
            if insn:
                current.instructions.append(insn)
            continue
        m = _HEADER_RE.match(stripped)
        if m:
            addr, name = m.groups()
            if not _HEX_RE.match(addr):
                raise ParseError(f"malformed function header address {addr!r}", lineno)
            current = RawFunction(name=name, start_address=int(addr, 16), instructions=[])
            functions.append(current)
            continue
        if current is not None and stripped == "...":
            continue
        raise ParseError(f"unrecognized line {stripped[:60]!r}", lineno)
    kept = [f for f in functions if f.instructions]
    if len(kept) != len(functions):
        log.debug("dropped %d empty functions", len(functions) - len(kept))
    return kept


def read_listings(path: str | Path) -> list[tuple[str, RawFunction]]:
    """Parse a listing file or every file below a directory.

    Returns (binary id, function) pairs; the binary id is the path relative
    to the given directory (or the file name).
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file())
        base = path
    else:
        files = [path]
        base = path.parent
    out = []
    for f in files:
        binary = f.relative_to(base).as_posix()
        try:
            funcs = parse_listing(f.read_text(encoding="utf-8", errors="replace"))
        except ParseError as exc:
            raise ParseError(f"{f}: {exc}") from None
        out.extend((binary, fn) for fn in funcs)
    return out


# ---------------------------------------------------------------------------
# sanitization

_SYMBOL_RE = re.compile(r"\s*<.*>")
_DOLLAR_RE = re.compile(r"\$-?(?:0x[0-9a-fA-F]+|[0-9]+)\b")
_HEXLIT_RE = re.compile(r"0x[0-9a-fA-F]+")
_BARE_TARGET_RE = re.compile(r"^(\S+(?:\s+\S+)*?\s+\*?)([0-9a-fA-F]+)(?=<FUNC>|$)")


def sanitize(instruction: str) -> str:
    s = " ".join(instruction.split())
    if "<" in s:
        s = _SYMBOL_RE.sub("<FUNC>", s, count=1)
    s = _DOLLAR_RE.sub("IMM", s)
    s = _HEXLIT_RE.sub("IMM", s)
    m = _BARE_TARGET_RE.match(s)
    if m:
        s = m.group(1) + "IMM" + s[m.end():]
    return s


def content_hash(instructions: Iterable[str]) -> str:
    return hashlib.md5("\n".join(instructions).encode("utf-8")).hexdigest()


def sanitize_function(binary: str, fn: RawFunction) -> SanitizedFunction:
    if not fn.instructions:
        raise ValueError(f"function {fn.name} has no instructions")
    return SanitizedFunction((binary, fn.name), [sanitize(i) for i in fn.instructions])


def dedup(functions: Iterable[SanitizedFunction]) -> list[SanitizedFunction]:
    seen: set[str] = set()
    out = []
    for f in functions:
        if f.content_hash in seen:
            continue
        seen.add(f.content_hash)
        out.append(f)
    return out


# ---------------------------------------------------------------------------
# labels

def read_label_records(path: str | Path) -> dict[tuple[str, str], dict]:
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["binary"]), str(rec["function"]))
                pc = int(rec["pc"])
                pts = list(rec.get("pts", []))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad label record: {exc}", lineno) from None
            if pc < 0:
                raise ParseError("pc must be >= 0", lineno)
            records[key] = {"pc": pc, "pts": pts}
    return records


def attach_labels(
    functions: Iterable[SanitizedFunction],
    labels: dict[tuple[str, str], dict],
    allow_others: bool = True,
    split_seed: int = 0,
) -> LabeledDataset:
    entries = []
    dropped = 0
    for f in functions:
        rec = labels.get(f.source_id)
        if rec is None:
            dropped += 1
            continue
        try:
            label = SignatureLabel.from_record(rec["pc"], rec["pts"], allow_others=allow_others)
        except LabelError as exc:
            raise LabelError(f"{f.source_id}: {exc}") from None
        entries.append((f, label))
    if dropped:
        log.info("dropped %d unlabeled functions", dropped)
    return LabeledDataset(entries, split_seed, dropped)


def split_dataset(dataset: LabeledDataset, ratio: float = 0.8, seed: int = 0):
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two entries to split")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratio * n)
    train = [dataset.entries[i] for i in perm[:n_train]]
    test = [dataset.entries[i] for i in perm[n_train:]]
    return LabeledDataset(train, seed), LabeledDataset(test, seed)


# ---------------------------------------------------------------------------
# dataset file

def write_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f, lab in dataset.entries:
            rec = {
                "source_id": list(f.source_id),
                "instructions": f.instructions,
                "pc": lab.pc,
                "pt1": lab.pt1,
                "pt2": lab.pt2,
                "pt3": lab.pt3,
                "hash": f.content_hash,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_dataset(path: str | Path) -> LabeledDataset:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                f = SanitizedFunction(tuple(rec["source_id"]), list(rec["instructions"]), rec["hash"])
                lab = SignatureLabel(rec["pc"], rec["pt1"], rec["pt2"], rec["pt3"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad dataset record: {exc}", lineno) from None
            entries.append((f, lab))
    return LabeledDataset(entries)


def ingest(paths, label_path, allow_others: bool = True):
    """Full pipeline: parse -> sanitize -> dedup -> label. Returns (dataset, counts)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    raw = []
    for p in paths:
        raw.extend(read_listings(p))
    sanitized = [sanitize_function(b, fn) for b, fn in raw]
    unique = dedup(sanitized)
    labels = read_label_records(label_path)
    ds = attach_labels(unique, labels, allow_others=allow_others)
    counts = {
        "parsed": len(raw),
        "deduped": len(unique),
        "labeled": len(ds),
        "dropped": ds.dropped,
    }
    return ds, counts
