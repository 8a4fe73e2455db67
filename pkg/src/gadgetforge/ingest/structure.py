"""Structural analyses over a parsed module and their aggregation into one bundle."""
from __future__ import annotations

from collections import Counter

from .. import SCHEMA_VERSION
from ..errors import SourceMismatch
from .model import AnalysisBundle, PseudoModule, StructuralReport
from .printer import format_statement

MAX_PATHS = 256


def _depths(fn) -> dict:
    out = {}

    def walk(stmts, d):
        for s in stmts:
            out[s.index] = d
            for kids in (getattr(s, "then", ()), getattr(s, "orelse", None) or (), getattr(s, "body", ())):
                walk(kids, d + 1)

    walk(fn.body, 0)
    return out


def _paths(cfg) -> tuple:
    """Entry-to-exit paths over forward edges; each step carries its branch label."""
    paths = []
    truncated = False

    def dfs(b, trail):
        nonlocal truncated
        if len(paths) >= MAX_PATHS:
            truncated = True
            return
        if b == cfg.exit:
            paths.append(trail)
            return
        for s, d, lab in cfg.edges:
            if s == b and lab != "back":
                dfs(d, trail + [[d, lab]])

    dfs(cfg.entry, [[cfg.entry, "entry"]])
    return paths, truncated


def analyze_structure(module: PseudoModule) -> StructuralReport:
    from ..graphs import build_ast, build_cfg

    disassembly, blocks, paths = {}, {}, {}
    names = set(module.function_names)
    call_counts: Counter = Counter()
    external: dict = {}
    for fn in module.functions:
        depth = _depths(fn)
        disassembly[fn.name] = tuple(
            {
                "index": s.index,
                "kind": s.kind,
                "text": format_statement(s),
                "line": s.line,
                "column": s.column,
                "depth": depth[s.index],
            }
            for s in fn.statements
        )
        cfg = build_cfg(build_ast(fn))
        blocks[fn.name] = {
            "blocks": [list(b) for b in cfg.blocks],
            "edges": [list(e) for e in cfg.edges],
            "entry": cfg.entry,
            "exit": cfg.exit,
        }
        p, trunc = _paths(cfg)
        paths[fn.name] = {
            "paths": p,
            "back_edges": [list(e) for e in cfg.back_edges()],
            "truncated": trunc,
        }
        ext = Counter()
        for callee, _ in fn.callsites:
            if callee in names:
                call_counts[(fn.name, callee)] += 1
            else:
                ext[callee] += 1
        external[fn.name] = dict(sorted(ext.items()))
    call_graph = [[a, b, n] for (a, b), n in sorted(call_counts.items())]
    return StructuralReport(
        module_digest=module.digest,
        disassembly_view=disassembly,
        block_structure={"functions": blocks, "call_graph": call_graph, "external_calls": external},
        control_paths=paths,
    )


def combine_analyses(module: PseudoModule, report: StructuralReport, metadata: dict | None = None) -> AnalysisBundle:
    """Aggregate module, report and metadata; mandatory metadata keys get defaults."""
    if report.module_digest != module.digest:
        raise SourceMismatch(
            f"report built from {report.module_digest}, module is {module.digest}"
        )
    meta = {"adapter_id": module.adapter_id, "schema_version": SCHEMA_VERSION}
    for k, v in (metadata or {}).items():
        meta[str(k)] = str(v)
    return AnalysisBundle(module, report, meta)


def bundle_to_json(bundle: AnalysisBundle) -> dict:
    m = bundle.module
    r = bundle.report
    return {
        "schema_version": SCHEMA_VERSION,
        "source_id": m.source_id,
        "adapter_id": m.adapter_id,
        "raw_text_hash": m.raw_text_hash,
        "functions": [
            {
                "name": fn.name,
                "params": [[p.name, p.type + ("[]" if p.is_array else "")] for p in fn.params],
                "statements": len(fn.statements),
                "callsites": [list(c) for c in fn.callsites],
            }
            for fn in m.functions
        ],
        "report": {
            "module_digest": r.module_digest,
            "disassembly_view": {k: list(v) for k, v in r.disassembly_view.items()},
            "block_structure": r.block_structure,
            "control_paths": r.control_paths,
        },
        "metadata": dict(sorted(bundle.metadata.items())),
    }
