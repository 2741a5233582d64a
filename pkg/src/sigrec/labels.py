"""Label taxonomies for parameter count and parameter type recovery."""

from __future__ import annotations

from dataclasses import dataclass

PC_CLASSES = ("0", "1", "2", "3", "4", "5", "6", "7", "8", "others")
PT_CLASSES = (
    "struct*",
    "int",
    "char*",
    "void*",
    "int*",
    "enum",
    "char",
    "void",
    "float",
    "struct",
    "others",
    "NULL",
)

TASKS = ("pc", "pt1", "pt2", "pt3")
TASK_CLASSES = {
    "pc": PC_CLASSES,
    "pt1": PT_CLASSES,
    "pt2": PT_CLASSES,
    "pt3": PT_CLASSES,
}
NUM_CLASSES = {task: len(classes) for task, classes in TASK_CLASSES.items()}

_PT_INDEX = {name: i for i, name in enumerate(PT_CLASSES)}
_PC_INDEX = {name: i for i, name in enumerate(PC_CLASSES)}


class LabelError(ValueError):
    pass


def pc_class(count: int) -> str:
    """Map a raw parameter count onto the ten-way bucket (9 and above -> others)."""
    if count < 0:
        raise LabelError(f"negative parameter count {count}")
    return str(count) if count <= 8 else "others"


def pt_class(name: str | None, allow_others: bool = True) -> str:
    if name is None:
        return "NULL"
    name = name.strip()
    if name in _PT_INDEX and name != "NULL":
        return name
    if not allow_others:
        raise LabelError(f"unknown parameter type {name!r}")
    return "others"


@dataclass(frozen=True)
class SignatureLabel:
    pc: str
    pt1: str
    pt2: str
    pt3: str

    def __post_init__(self):
        if self.pc not in _PC_INDEX:
            raise LabelError(f"bad pc class {self.pc!r}")
        pts = (self.pt1, self.pt2, self.pt3)
        for pt in pts:
            if pt not in _PT_INDEX:
                raise LabelError(f"bad pt class {pt!r}")
        if self.pc != "others":
            k = int(self.pc)
            for i, pt in enumerate(pts):
                if i < k and pt == "NULL":
                    raise LabelError(f"pt{i + 1} is NULL but pc={k}")
                if i >= k and pt != "NULL":
                    raise LabelError(f"pt{i + 1} must be NULL when pc={k}")

    @classmethod
    def from_record(cls, pc: int, pts: list[str], allow_others: bool = True) -> "SignatureLabel":
        """Build a label from a raw (count, source type names) record."""
        pc_name = pc_class(pc)
        n_known = min(pc, 3)
        mapped = []
        for i in range(3):
            if i < n_known:
                # a declared position without a type name still holds a parameter
                mapped.append(pt_class(pts[i] if i < len(pts) else "", allow_others))
            else:
                mapped.append("NULL")
        return cls(pc_name, *mapped)

    def get(self, task: str) -> str:
        return getattr(self, task)

    def index(self, task: str) -> int:
        value = self.get(task)
        return _PC_INDEX[value] if task == "pc" else _PT_INDEX[value]

    def indices(self) -> tuple[int, int, int, int]:
        return tuple(self.index(t) for t in TASKS)

    @classmethod
    def from_indices(cls, idx) -> "SignatureLabel":
        return cls(PC_CLASSES[idx[0]], PT_CLASSES[idx[1]], PT_CLASSES[idx[2]], PT_CLASSES[idx[3]])
