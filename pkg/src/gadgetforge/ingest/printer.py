"""Canonical pretty-printer; ``parse(print(parse(x)))`` reproduces the parse of ``x``."""
from __future__ import annotations

from .model import Assign, Binary, Call, Decl, If, Index, Name, Num, Return, Str, Unary, While

_PREC = {
    "||": 1, "&&": 2, "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6, "%": 6,
}
_UNARY_PREC = 7


def format_expr(e, parent: int = 0, right: bool = False) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Str):
        return f'"{e.text}"'
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Index):
        return f"{e.base.id}[{format_expr(e.index)}]"
    if isinstance(e, Unary):
        s = e.op + format_expr(e.operand, _UNARY_PREC)
        return f"({s})" if parent > _UNARY_PREC else s
    if isinstance(e, Binary):
        p = _PREC[e.op]
        s = f"{format_expr(e.left, p)} {e.op} {format_expr(e.right, p, right=True)}"
        # all binary tiers are left-associative
        if p < parent or (right and p == parent):
            return f"({s})"
        return s
    raise TypeError(f"not an expression: {e!r}")


def format_statement(stmt) -> str:
    """Single-line text of a statement record; if/while render their header only."""
    if isinstance(stmt, Decl):
        size = f"[{stmt.size}]" if stmt.size is not None else ""
        return f"{stmt.type} {stmt.name}{size};"
    if isinstance(stmt, Assign):
        return f"{format_expr(stmt.target)} = {format_expr(stmt.value)};"
    if isinstance(stmt, Call):
        call = f"{stmt.callee}({', '.join(format_expr(a) for a in stmt.args)})"
        if stmt.target is not None:
            return f"{format_expr(stmt.target)} = {call};"
        return call + ";"
    if isinstance(stmt, If):
        return f"if ({format_expr(stmt.cond)})"
    if isinstance(stmt, While):
        return f"while ({format_expr(stmt.cond)})"
    if isinstance(stmt, Return):
        return "return;" if stmt.value is None else f"return {format_expr(stmt.value)};"
    raise TypeError(f"not a statement: {stmt!r}")


def _format_block(stmts, depth: int, out: list):
    pad = "    " * depth
    for s in stmts:
        if isinstance(s, If):
            out.append(f"{pad}{format_statement(s)} {{")
            _format_block(s.then, depth + 1, out)
            if s.orelse is not None:
                out.append(f"{pad}}} else {{")
                _format_block(s.orelse, depth + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(s, While):
            out.append(f"{pad}{format_statement(s)} {{")
            _format_block(s.body, depth + 1, out)
            out.append(f"{pad}}}")
        else:
            out.append(pad + format_statement(s))


def format_function(fn) -> str:
    params = ", ".join(f"{p.type} {p.name}{'[]' if p.is_array else ''}" for p in fn.params)
    out = [f"{fn.return_type} {fn.name}({params}) {{"]
    _format_block(fn.body, 1, out)
    out.append("}")
    return "\n".join(out)


def format_module(module) -> str:
    return "\n\n".join(format_function(fn) for fn in module.functions) + "\n"
