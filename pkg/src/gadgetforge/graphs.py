"""AST, CFG, data/control dependence and the merged program dependence graph.

Everything here is intraprocedural and operates on one PseudoFunction.
Arrays are scalars for dependence purposes: ``buf[i] = x`` defines ``buf``
(and reads it, since the other elements survive the store).
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import SCHEMA_VERSION
from .ingest.model import (
    Assign,
    Binary,
    Call,
    Decl,
    If,
    Index,
    Name,
    Num,
    PseudoFunction,
    Return,
    Str,
    Unary,
    While,
    expr_names,
    lvalue_base,
)
from .ingest.printer import format_statement

AST_KINDS = ("Function", "Decl", "Assign", "Call", "If", "While", "Return", "Expr")

# Library calls that write through a pointer argument. The written argument
# is defined (and, being an out-parameter, also read) by the call.
OUT_PARAMS = {
    "strcpy": (0,), "strncpy": (0,), "strcat": (0,), "strncat": (0,),
    "memcpy": (0,), "memmove": (0,), "memset": (0,),
    "sprintf": (0,), "snprintf": (0,), "gets": (0,), "fgets": (0,),
    "read": (1,), "recv": (1,), "free": (0,),
}
# scanf-style: every argument after the format string is written
OUT_AFTER = {"scanf": 1, "sscanf": 2, "fscanf": 2}


# ----------------------------------------------------------------------- AST


@dataclass(frozen=True)
class AstNode:
    id: int
    kind: str
    label: str
    children: tuple
    parent: Optional[int]
    stmt: Optional[int]  # owning statement index; None for the Function root


@dataclass(frozen=True)
class Ast:
    function: PseudoFunction
    nodes: tuple  # AstNode, root is nodes[0]
    stmt_node: dict  # statement index -> node id

    @property
    def root(self) -> AstNode:
        return self.nodes[0]

    def leaves(self) -> list:
        return [n for n in self.nodes if not n.children]

    def kind_histogram(self, stmts: Optional[Iterable[int]] = None) -> dict:
        """Node counts per kind; restricted to nodes owned by ``stmts`` (root always counted)."""
        keep = None if stmts is None else set(stmts)
        hist = dict.fromkeys(AST_KINDS, 0)
        for n in self.nodes:
            if n.stmt is None or keep is None or n.stmt in keep:
                hist[n.kind] += 1
        return hist


def build_ast(fn: PseudoFunction) -> Ast:
    nodes: list = []
    stmt_node: dict = {}

    def add(kind, label, parent, stmt):
        nodes.append([len(nodes), kind, label, [], parent, stmt])
        nid = len(nodes) - 1
        if parent is not None:
            nodes[parent][3].append(nid)
        return nid

    def expr(e, parent, stmt):
        if isinstance(e, Num):
            add("Expr", f"Num:{e.value}", parent, stmt)
        elif isinstance(e, Str):
            add("Expr", "Str", parent, stmt)
        elif isinstance(e, Name):
            add("Expr", f"Name:{e.id}", parent, stmt)
        elif isinstance(e, Index):
            nid = add("Expr", "Index", parent, stmt)
            expr(e.base, nid, stmt)
            expr(e.index, nid, stmt)
        elif isinstance(e, Unary):
            expr(e.operand, add("Expr", f"Unary:{e.op}", parent, stmt), stmt)
        elif isinstance(e, Binary):
            nid = add("Expr", f"Binary:{e.op}", parent, stmt)
            expr(e.left, nid, stmt)
            expr(e.right, nid, stmt)

    def stmt(s, parent):
        i = s.index
        if isinstance(s, Decl):
            nid = add("Decl", s.type, parent, i)
            expr(Name(s.name), nid, i)
            if s.size is not None:
                expr(Num(s.size), nid, i)
        elif isinstance(s, Assign):
            nid = add("Assign", "=", parent, i)
            expr(s.target, nid, i)
            expr(s.value, nid, i)
        elif isinstance(s, Call):
            nid = add("Call", s.callee, parent, i)
            if s.target is not None:
                expr(s.target, nid, i)
            expr(Name(s.callee), nid, i)
            for a in s.args:
                expr(a, nid, i)
        elif isinstance(s, If):
            nid = add("If", "if", parent, i)
            expr(s.cond, nid, i)
            for c in s.then:
                stmt(c, nid)
            for c in s.orelse or ():
                stmt(c, nid)
        elif isinstance(s, While):
            nid = add("While", "while", parent, i)
            expr(s.cond, nid, i)
            for c in s.body:
                stmt(c, nid)
        elif isinstance(s, Return):
            nid = add("Return", "return", parent, i)
            if s.value is not None:
                expr(s.value, nid, i)
        else:  # pragma: no cover - parser guarantees the kinds
            raise TypeError(s)
        stmt_node[i] = nid

    add("Function", fn.name, None, None)
    for s in fn.body:
        stmt(s, 0)
    frozen = tuple(AstNode(n[0], n[1], n[2], tuple(n[3]), n[4], n[5]) for n in nodes)
    return Ast(fn, frozen, stmt_node)


# ----------------------------------------------------------------------- CFG


@dataclass(frozen=True)
class Cfg:
    function: PseudoFunction
    blocks: tuple  # tuple of statement-index tuples; block id = position
    edges: tuple  # (src, dst, label) with label in fallthrough/true/false/back
    entry: int
    exit: int

    def successors(self, b: int, include_back: bool = True) -> list:
        return [d for s, d, lab in self.edges if s == b and (include_back or lab != "back")]

    def predecessors(self, b: int, include_back: bool = True) -> list:
        return [s for s, d, lab in self.edges if d == b and (include_back or lab != "back")]

    @property
    def stmt_block(self) -> dict:
        return {i: b for b, stmts in enumerate(self.blocks) for i in stmts}

    def back_edges(self) -> list:
        return [(s, d) for s, d, lab in self.edges if lab == "back"]


def build_cfg(ast: Ast) -> Cfg:
    fn = ast.function
    blocks: list = [[]]
    edges: list = []
    sinks: list = []

    def new_block():
        blocks.append([])
        return len(blocks) - 1

    def build(stmts, cur):
        for s in stmts:
            if isinstance(s, (Decl, Assign, Call)):
                blocks[cur].append(s.index)
            elif isinstance(s, Return):
                blocks[cur].append(s.index)
                sinks.append(cur)
                cur = None
            elif isinstance(s, If):
                blocks[cur].append(s.index)
                then_b = new_block()
                edges.append((cur, then_b, "true"))
                then_end = build(s.then, then_b)
                if s.orelse is not None:
                    else_b = new_block()
                    edges.append((cur, else_b, "false"))
                    else_end = build(s.orelse, else_b)
                    open_ends = [(b, "fallthrough") for b in (then_end, else_end) if b is not None]
                else:
                    open_ends = [(b, "fallthrough") for b in (then_end,) if b is not None]
                    open_ends.append((cur, "false"))
                if not open_ends:
                    cur = None
                else:
                    join = new_block()
                    edges.extend((b, join, lab) for b, lab in open_ends)
                    cur = join
            elif isinstance(s, While):
                if blocks[cur]:
                    header = new_block()
                    edges.append((cur, header, "fallthrough"))
                else:
                    header = cur
                blocks[header].append(s.index)
                body_b = new_block()
                edges.append((header, body_b, "true"))
                body_end = build(s.body, body_b)
                if body_end is not None:
                    edges.append((body_end, header, "back"))
                after = new_block()
                edges.append((header, after, "false"))
                cur = after
        return cur

    last = build(fn.body, 0)
    if last is not None:
        sinks.append(last)
    if len(sinks) == 1:
        exit_b = sinks[0]
    else:
        exit_b = new_block()
        edges.extend((b, exit_b, "fallthrough") for b in sinks)
    return Cfg(fn, tuple(tuple(b) for b in blocks), tuple(edges), 0, exit_b)


def statement_successors(cfg: Cfg) -> dict:
    """Statement-level successor map derived from the block graph (-1 = function exit)."""
    succ = {}
    for b, stmts in enumerate(cfg.blocks):
        for a, c in zip(stmts, stmts[1:]):
            succ[a] = [c]
        if stmts:
            succ[stmts[-1]] = sorted(set(_first_stmts(cfg, b)))
    return succ


def _first_stmts(cfg: Cfg, b: int) -> list:
    out, seen, stack = [], set(), list(cfg.successors(b))
    if b == cfg.exit:
        out.append(-1)
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        if cfg.blocks[x]:
            out.append(cfg.blocks[x][0])
        else:
            if x == cfg.exit:
                out.append(-1)
            stack.extend(cfg.successors(x))
    return out


# ---------------------------------------------------------- def/use summary


def _arg_base(e) -> Optional[str]:
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Index):
        return e.base.id
    return None


def defs_uses(stmt) -> tuple:
    """(defined variables, used variables) of one statement record, each de-duplicated in order."""
    defs, uses = [], []
    if isinstance(stmt, Decl):
        defs.append(stmt.name)
    elif isinstance(stmt, Assign):
        uses += expr_names(stmt.value)
        if isinstance(stmt.target, Index):
            uses += [stmt.target.base.id] + expr_names(stmt.target.index)
        defs.append(lvalue_base(stmt.target))
    elif isinstance(stmt, Call):
        for a in stmt.args:
            uses += expr_names(a)
        if isinstance(stmt.target, Index):
            uses += [stmt.target.base.id] + expr_names(stmt.target.index)
        if stmt.target is not None:
            defs.append(lvalue_base(stmt.target))
        positions = list(OUT_PARAMS.get(stmt.callee, ()))
        if stmt.callee in OUT_AFTER:
            positions += range(OUT_AFTER[stmt.callee], len(stmt.args))
        for p in positions:
            if p < len(stmt.args):
                base = _arg_base(stmt.args[p])
                if base is not None:
                    defs.append(base)
    elif isinstance(stmt, (If, While)):
        uses += expr_names(stmt.cond)
    elif isinstance(stmt, Return):
        uses += expr_names(stmt.value)
    return tuple(dict.fromkeys(defs)), tuple(dict.fromkeys(uses))


# ------------------------------------------------------- reaching definitions


def reaching_definitions(cfg: Cfg, fn: PseudoFunction, order: Optional[Iterable[int]] = None) -> list:
    """IN sets per block: frozensets of (def statement, variable).

    Round-robin iteration to the fixpoint; ``order`` picks the block visiting
    order (the result does not depend on it).
    """
    n = len(cfg.blocks)
    order = list(range(n)) if order is None else list(order)
    du = {s.index: defs_uses(s) for s in fn.statements}
    gen, killed_vars = [], []
    for stmts in cfg.blocks:
        g = {}
        kv = set()
        for i in stmts:
            for v in du[i][0]:
                g[v] = (i, v)
                kv.add(v)
        gen.append(frozenset(g.values()))
        killed_vars.append(kv)
    preds = [cfg.predecessors(b) for b in range(n)]
    IN = [frozenset()] * n
    OUT = list(gen)
    changed = True
    while changed:
        changed = False
        for b in order:
            new_in = frozenset().union(*(OUT[p] for p in preds[b])) if preds[b] else frozenset()
            new_out = gen[b] | frozenset(d for d in new_in if d[1] not in killed_vars[b])
            if new_in != IN[b] or new_out != OUT[b]:
                IN[b], OUT[b] = new_in, new_out
                changed = True
    return IN


def build_ddg(cfg: Cfg, fn: PseudoFunction, order: Optional[Iterable[int]] = None) -> frozenset:
    """Data-dependence edges ``(def stmt, use stmt, variable)``."""
    IN = reaching_definitions(cfg, fn, order)
    du = {s.index: defs_uses(s) for s in fn.statements}
    edges = set()
    for b, stmts in enumerate(cfg.blocks):
        live = defaultdict(set)
        for d_stmt, v in IN[b]:
            live[v].add(d_stmt)
        for i in stmts:
            defs, uses = du[i]
            for v in uses:
                for d_stmt in live.get(v, ()):
                    edges.add((d_stmt, i, v))
            for v in defs:
                live[v] = {i}
    return frozenset(edges)


# --------------------------------------------------------- control dependence


def postdominators(cfg: Cfg) -> dict:
    """Post-dominator sets per block (every block reaches the exit by construction)."""
    n = len(cfg.blocks)
    everything = frozenset(range(n))
    pdom = {b: everything for b in range(n)}
    pdom[cfg.exit] = frozenset({cfg.exit})
    succ = [cfg.successors(b) for b in range(n)]
    changed = True
    while changed:
        changed = False
        for b in reversed(range(n)):
            if b == cfg.exit:
                continue
            inter = everything
            for s in succ[b]:
                inter = inter & pdom[s]
            new = inter | {b}
            if new != pdom[b]:
                pdom[b] = new
                changed = True
    return pdom


def immediate_postdominators(cfg: Cfg, pdom: Optional[dict] = None) -> dict:
    pdom = pdom if pdom is not None else postdominators(cfg)
    ipdom = {}
    for b, ds in pdom.items():
        strict = ds - {b}
        # the strict post-dominators form a chain; the nearest has the largest set
        ipdom[b] = max(strict, key=lambda d: len(pdom[d])) if strict else None
    return ipdom


def postdominance_frontier(cfg: Cfg) -> dict:
    """Dominance frontiers of the reverse CFG (Cytron et al. runner walk)."""
    ipdom = immediate_postdominators(cfg)
    pdf = defaultdict(set)
    for b in range(len(cfg.blocks)):
        succ = cfg.successors(b)
        if len(succ) < 2:
            continue
        for s in succ:
            runner = s
            while runner is not None and runner != ipdom[b]:
                pdf[runner].add(b)
                runner = ipdom[runner]
    return {b: frozenset(pdf.get(b, ())) for b in range(len(cfg.blocks))}


def build_cdg(cfg: Cfg) -> frozenset:
    """Control edges ``(branch statement, controlled statement)``."""
    pdf = postdominance_frontier(cfg)
    edges = set()
    for y, controllers in pdf.items():
        for x in controllers:
            branch = cfg.blocks[x][-1]
            for i in cfg.blocks[y]:
                edges.add((branch, i))
    return frozenset(edges)


# ----------------------------------------------------------------------- PDG


@dataclass(frozen=True)
class Pdg:
    function: PseudoFunction
    nodes: tuple  # statement indices
    data_edges: tuple  # sorted (src, dst, var)
    control_edges: tuple  # sorted (src, dst)
    _pred: dict = field(default=None, repr=False, compare=False)
    _succ: dict = field(default=None, repr=False, compare=False)

    def predecessors(self, i: int) -> set:
        return self._pred.get(i, set())

    def successors(self, i: int) -> set:
        return self._succ.get(i, set())

    def edge_pairs(self) -> set:
        return {(s, d) for s, d, _ in self.data_edges} | set(self.control_edges)

    def degree_stats(self, keep: Optional[Iterable[int]] = None) -> tuple:
        """(data edges, control edges, max in-degree, max out-degree) of the induced subgraph."""
        keep = set(self.nodes) if keep is None else set(keep)
        data = [(s, d) for s, d, _ in self.data_edges if s in keep and d in keep]
        ctrl = [(s, d) for s, d in self.control_edges if s in keep and d in keep]
        indeg, outdeg = defaultdict(int), defaultdict(int)
        for s, d in set(data) | set(ctrl):
            outdeg[s] += 1
            indeg[d] += 1
        return (
            len(data),
            len(ctrl),
            max(indeg.values(), default=0),
            max(outdeg.values(), default=0),
        )


def make_pdg(fn: PseudoFunction, data_edges: Iterable, control_edges: Iterable) -> Pdg:
    data = tuple(sorted(set(data_edges)))
    ctrl = tuple(sorted(set(control_edges)))
    pred, succ = defaultdict(set), defaultdict(set)
    for s, d, _ in data:
        pred[d].add(s)
        succ[s].add(d)
    for s, d in ctrl:
        pred[d].add(s)
        succ[s].add(d)
    nodes = tuple(s.index for s in fn.statements)
    return Pdg(fn, nodes, data, ctrl, dict(pred), dict(succ))


def build_pdg(cfg: Cfg, fn: PseudoFunction) -> Pdg:
    return make_pdg(fn, build_ddg(cfg, fn), build_cdg(cfg))


@dataclass(frozen=True)
class FunctionGraphs:
    ast: Ast
    cfg: Cfg
    pdg: Pdg


def analyze_function(fn: PseudoFunction) -> FunctionGraphs:
    ast = build_ast(fn)
    cfg = build_cfg(ast)
    return FunctionGraphs(ast, cfg, build_pdg(cfg, fn))


# -------------------------------------------------------------------- export


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(pdg: Pdg) -> str:
    fn = pdg.function
    lines = [f'digraph "{_dot_escape(fn.name)}" {{', "  node [shape=box];"]
    for i in pdg.nodes:
        text = format_statement(fn.statements[i])
        lines.append(f'  n{i} [label="{i}: {_dot_escape(text)}"];')
    for s, d, v in pdg.data_edges:
        lines.append(f'  n{s} -> n{d} [label="{_dot_escape(v)}"];')
    for s, d in pdg.control_edges:
        lines.append(f"  n{s} -> n{d} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_dump(graphs: FunctionGraphs) -> dict:
    fn = graphs.pdg.function
    cfg = graphs.cfg
    return {
        "schema_version": SCHEMA_VERSION,
        "function": fn.name,
        "nodes": [
            {
                "id": s.index,
                "kind": s.kind,
                "text": format_statement(s),
                "line": s.line,
                "column": s.column,
            }
            for s in fn.statements
        ],
        "data_edges": [list(e) for e in graphs.pdg.data_edges],
        "control_edges": [list(e) for e in graphs.pdg.control_edges],
        "cfg": {
            "blocks": [list(b) for b in cfg.blocks],
            "edges": [list(e) for e in cfg.edges],
            "entry": cfg.entry,
            "exit": cfg.exit,
        },
        "ast_kinds": graphs.ast.kind_histogram(),
    }


def dumps_graphs(graphs: Iterable[FunctionGraphs]) -> str:
    return json.dumps([graph_dump(g) for g in graphs], indent=1, sort_keys=False)
