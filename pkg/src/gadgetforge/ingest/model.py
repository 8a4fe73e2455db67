"""Immutable data model for parsed pseudocode listings."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Str:
    text: str  # contents without the surrounding quotes, escapes kept verbatim


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Index:
    base: Name
    index: "Expr"


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Str, Name, Index, Unary, Binary]
Lvalue = Union[Name, Index]

# ----------------------------------------------------------------- statements


@dataclass(frozen=True)
class Stmt:
    index: int
    line: int
    column: int


@dataclass(frozen=True)
class Decl(Stmt):
    type: str
    name: str
    size: Optional[int] = None  # array length for ``char buf[N];``

    kind = "decl"


@dataclass(frozen=True)
class Assign(Stmt):
    target: Lvalue
    value: Expr

    kind = "assign"


@dataclass(frozen=True)
class Call(Stmt):
    callee: str
    args: tuple
    target: Optional[Lvalue] = None  # ``x = f(...)`` stores into x

    kind = "call"


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then: tuple
    orelse: Optional[tuple] = None

    kind = "if"


@dataclass(frozen=True)
class While(Stmt):
    cond: Expr
    body: tuple

    kind = "while"


@dataclass(frozen=True)
class Return(Stmt):
    value: Optional[Expr] = None

    kind = "return"


STMT_KINDS = ("decl", "assign", "call", "if", "while", "return")


@dataclass(frozen=True)
class Param:
    name: str
    type: str
    is_array: bool = False


@dataclass(frozen=True)
class PseudoFunction:
    name: str
    return_type: str
    params: tuple  # of Param
    body: tuple  # top-level statements; nested ones live inside If/While
    statements: tuple  # every statement, pre-order, statements[i].index == i
    callsites: tuple  # (callee, statement index)
    line: int = 1
    column: int = 1


@dataclass(frozen=True)
class PseudoModule:
    source_id: str
    functions: tuple
    adapter_id: str
    raw_text_hash: str  # 64-bit blake2b digest of the input bytes, hex

    @property
    def digest(self) -> str:
        return self.raw_text_hash

    def function(self, name: str) -> PseudoFunction:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise KeyError(name)

    @property
    def function_names(self) -> tuple:
        return tuple(fn.name for fn in self.functions)


# ------------------------------------------------------------------- helpers


def children(stmt: Stmt) -> tuple:
    """Directly nested statements of an if/while (empty for simple statements)."""
    if isinstance(stmt, If):
        return stmt.then + (stmt.orelse or ())
    if isinstance(stmt, While):
        return stmt.body
    return ()


def expr_names(expr: Optional[Expr]) -> list:
    """Variable names read by ``expr``, in left-to-right order (duplicates kept)."""
    out = []

    def walk(e):
        if e is None or isinstance(e, (Num, Str)):
            return
        if isinstance(e, Name):
            out.append(e.id)
        elif isinstance(e, Index):
            out.append(e.base.id)
            walk(e.index)
        elif isinstance(e, Unary):
            walk(e.operand)
        elif isinstance(e, Binary):
            walk(e.left)
            walk(e.right)

    walk(expr)
    return out


def lvalue_base(lv: Lvalue) -> str:
    return lv.base.id if isinstance(lv, Index) else lv.id


@dataclass(frozen=True)
class StructuralReport:
    """Output of the disassembly/structure analyses over one module."""

    module_digest: str
    disassembly_view: dict  # function -> tuple of statement records (dicts)
    block_structure: dict  # {"blocks": {fn: [...]}, "call_graph": [...], "external_calls": {...}}
    control_paths: dict  # function -> {"paths": [...], "back_edges": [...], "truncated": bool}


@dataclass(frozen=True)
class AnalysisBundle:
    module: PseudoModule
    report: StructuralReport
    metadata: dict = field(default_factory=dict)
