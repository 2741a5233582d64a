"""Synthetic objdump-style functions with signature information planted at the head.

Each function opens with ``push %rbp`` and one argument spill per
parameter (the register picks the position, the spill form picks the type),
followed by label-independent filler. Nothing after the first ``pc + 1``
instructions (at most 10) depends on the label, so only head slices carry
signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import LabeledDataset, RawFunction, SanitizedFunction, sanitize
from .labels import PC_CLASSES, PT_CLASSES, SignatureLabel

ARG_REGS64 = ("rdi", "rsi", "rdx", "rcx", "r8", "r9")
ARG_REGS32 = ("edi", "esi", "edx", "ecx", "r8d", "r9d")
ARG_REGS8 = ("dil", "sil", "dl", "cl", "r8b", "r9b")

# spill template per source type; {r64}/{r32}/{r8} are the position's registers
SPILL = {
    "struct*": "mov %{r64},-0x{off:x}(%rbp)",
    "int": "mov %{r32},-0x{off:x}(%rbp)",
    "char*": "movq %{r64},-0x{off:x}(%rbp)",
    "void*": "mov %{r64},-0x{off:x}(%rsp)",
    "int*": "lea (%{r64}),%rax",
    "enum": "movl %{r32},-0x{off:x}(%rbp)",
    "char": "mov %{r8},-0x{off:x}(%rbp)",
    "void": "nop",
    "float": "movss %xmm{i},-0x{off:x}(%rbp)",
    "struct": "movdqu (%{r64}),%xmm{i}",
    "others": "movzwl %{r32},%eax",
}
STACK_ARG = "mov 0x{off:x}(%rbp),%eax"

_FILLER_REGS = ("rax", "rbx", "r12", "r13", "r14", "r15", "r10", "r11")
_FILLER = (
    "mov %{a},%{b}",
    "add ${imm},%{a}",
    "sub ${imm},%{a}",
    "mov 0x{disp:x}(%{a}),%{b}",
    "mov %{a},0x{disp:x}(%{b})",
    "lea 0x{disp:x}(%rip),%{a}",
    "cmp %{a},%{b}",
    "test %{a},%{a}",
    "je {tgt:x} <{fn}+0x{off:x}>",
    "jne {tgt:x} <{fn}+0x{off:x}>",
    "jmp {tgt:x} <{fn}+0x{off:x}>",
    "callq {tgt:x} <{callee}>",
    "xor %eax,%eax",
    "imul %{a},%{b}",
    "shl ${sh},%{a}",
    "movabs $0x{big:x},%{a}",
    "push %{a}",
    "pop %{a}",
    "nop",
)
_CALLEES = ("malloc@plt", "free@plt", "memcpy@plt", "strlen@plt", "helper", "check_bounds")


@dataclass
class SynthConfig:
    n_functions: int = 2000
    length: int = 200
    min_length: int | None = None
    seed: int = 0
    pc_weights: tuple[float, ...] | None = None


def _filler(rng, fn_name: str, addr: int) -> str:
    tmpl = _FILLER[rng.integers(len(_FILLER))]
    a, b = rng.choice(_FILLER_REGS, size=2)
    return tmpl.format(
        a=a,
        b=b,
        imm=hex(int(rng.integers(1, 4096))),
        disp=int(rng.integers(8, 4096)),
        tgt=addr + int(rng.integers(2, 512)),
        fn=fn_name,
        off=int(rng.integers(1, 512)),
        callee=_CALLEES[rng.integers(len(_CALLEES))],
        sh=hex(int(rng.integers(1, 8))),
        big=int(rng.integers(1 << 32, 1 << 48)),
    )


def _spill(position: int, type_name: str) -> str:
    off = 8 * (position + 1) + 4
    if position >= 6:
        return STACK_ARG.format(off=0x10 + 8 * (position - 6))
    return SPILL[type_name].format(
        r64=ARG_REGS64[position], r32=ARG_REGS32[position], r8=ARG_REGS8[position], i=position, off=off
    )


def random_label(rng, pc_weights=None) -> tuple[int, list[str]]:
    probs = None
    if pc_weights is not None:
        probs = np.asarray(pc_weights, dtype=float)
        probs = probs / probs.sum()
    pc_idx = int(rng.choice(len(PC_CLASSES), p=probs))
    pc = pc_idx if pc_idx < 9 else 9
    type_pool = [t for t in PT_CLASSES if t != "NULL"]
    pts = [type_pool[rng.integers(len(type_pool))] for _ in range(min(pc, 3))]
    return pc, pts


def make_function(rng, name: str, pc: int, pts: list[str], length: int, base_addr: int) -> RawFunction:
    insns = ["push %rbp"]
    for i in range(pc):
        type_name = pts[i] if i < len(pts) else "int"
        insns.append(_spill(i, type_name))
    insns = insns[: max(length, 1)]
    addr = base_addr
    while len(insns) < length:
        insns.append(_filler(rng, name, addr + 4 * len(insns)))
    return RawFunction(name=name, start_address=addr, instructions=insns)


def generate(config: SynthConfig):
    """Returns a list of (binary id, RawFunction, (pc, pts)) triples."""
    rng = np.random.default_rng(config.seed)
    out = []
    addr = 0x401000
    for i in range(config.n_functions):
        pc, pts = random_label(rng, config.pc_weights)
        length = config.length
        if config.min_length is not None:
            length = int(rng.integers(config.min_length, config.length + 1))
        fn = make_function(rng, f"fn_{i:05d}", pc, pts, length, addr)
        out.append((f"synth_{i % 4}.dis", fn, (pc, pts)))
        addr += 4 * length + 16
    return out


def synthetic_dataset(config: SynthConfig) -> LabeledDataset:
    entries = []
    for binary, fn, (pc, pts) in generate(config):
        f = SanitizedFunction((binary, fn.name), [sanitize(i) for i in fn.instructions])
        entries.append((f, SignatureLabel.from_record(pc, pts)))
    return LabeledDataset(entries, config.seed)


def _encode_bytes(rng, n):
    return " ".join(f"{b:02x}" for b in rng.integers(0, 256, size=n))


def to_listing(functions: list[RawFunction], binary: str = "a.out", seed: int = 0) -> str:
    """Render functions as GNU objdump -d text."""
    rng = np.random.default_rng(seed)
    lines = ["", f"{binary}:     file format elf64-x86-64", "", "", "Disassembly of section .text:", ""]
    for fn in functions:
        lines.append(f"{fn.start_address:016x} <{fn.name}>:")
        addr = fn.start_address
        for insn in fn.instructions:
            n = int(rng.integers(1, 8))
            mnem, _, ops = insn.partition(" ")
            text = f"{mnem:<6} {ops}".rstrip() if ops else mnem
            lines.append(f"  {addr:x}:\t{_encode_bytes(rng, n):<21}\t{text}")
            addr += n
        lines.append("")
    return "\n".join(lines) + "\n"


def write_corpus(config: SynthConfig, out_dir: str | Path, n_files: int = 2) -> tuple[Path, Path]:
    """Write listings under ``out_dir/asm`` and a label sidecar; returns both paths."""
    import json

    out_dir = Path(out_dir)
    asm_dir = out_dir / "asm"
    asm_dir.mkdir(parents=True, exist_ok=True)
    triples = generate(config)
    per_file: dict[str, list] = {}
    for i, (_, fn, lab) in enumerate(triples):
        per_file.setdefault(f"bin{i % n_files}.dis", []).append((fn, lab))
    label_path = out_dir / "labels.jsonl"
    with open(label_path, "w", encoding="utf-8", newline="\n") as lf:
        for k, (binary, items) in enumerate(sorted(per_file.items())):
            (asm_dir / binary).write_text(
                to_listing([fn for fn, _ in items], binary, seed=config.seed + k), encoding="utf-8"
            )
            for fn, (pc, pts) in items:
                lf.write(json.dumps({"binary": binary, "function": fn.name, "pc": pc, "pts": pts}) + "\n")
    return asm_dir, label_path


def markov_token_corpus(seed: int = 0, n_tokens: int = 10_000, n_states: int = 40, sent_len: int = 50,
                        twins=("X", "Y")) -> list[list[str]]:
    """Token sentences from a sparse random Markov chain.

    State 0 emits one of ``twins`` with equal probability, so the two twin
    tokens share exactly the same context distribution while every other
    token has its own.
    """
    rng = np.random.default_rng(seed)
    succ = rng.integers(0, n_states, size=(n_states, 3))
    sents = []
    total = 0
    while total < n_tokens:
        s = int(rng.integers(n_states))
        sent = []
        for _ in range(sent_len):
            if s == 0:
                sent.append(twins[0] if rng.random() < 0.5 else twins[1])
            else:
                sent.append(f"t{s}")
            s = int(succ[s, rng.integers(3)])
        sents.append(sent)
        total += len(sent)
    return sents
