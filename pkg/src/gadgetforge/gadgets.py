"""Sensitive-call seeding, PDG slicing and code-gadget assembly."""
from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import SCHEMA_VERSION
from .errors import EmptyGadget, GadgetForgeError, SeedNotInGraph
from .graphs import Pdg, analyze_function
from .ingest.lexer import tokenize
from .ingest.model import PseudoModule
from .ingest.printer import format_statement

MAX_TOKENS = 500
DIRECTIONS = ("backward", "forward", "both")
SEED_CATEGORIES = ("buffer", "format", "alloc", "free", "command", "input", "other")

# minimum arities for argument-index validation; variadic APIs list the fixed part
_ARITY = {
    "strcpy": 2, "strcat": 2, "strncpy": 3, "strncat": 3, "sprintf": 2, "snprintf": 3,
    "gets": 1, "fgets": 3, "scanf": 1, "sscanf": 2, "fscanf": 2, "memcpy": 3, "memmove": 3,
    "memset": 3, "printf": 1, "fprintf": 2, "vprintf": 2, "vfprintf": 3, "syslog": 2,
    "malloc": 1, "calloc": 2, "realloc": 2, "free": 1, "system": 1,
}
_VARIADIC = {"sprintf", "snprintf", "scanf", "sscanf", "fscanf", "printf", "fprintf", "syslog"}


@dataclass(frozen=True)
class SeedRule:
    api_name: str
    taint_args: tuple = ()
    category: str = "other"
    enabled: bool = True

    def __post_init__(self):
        if not self.api_name:
            raise ValueError("SeedRule.api_name must be non-empty")
        object.__setattr__(self, "taint_args", tuple(sorted(set(self.taint_args))))
        if any(i < 0 for i in self.taint_args):
            raise ValueError(f"{self.api_name}: negative argument index")
        arity = _ARITY.get(self.api_name)
        if arity is not None and self.api_name not in _VARIADIC:
            bad = [i for i in self.taint_args if i >= arity]
            if bad:
                raise ValueError(f"{self.api_name}: argument index {bad[0]} >= arity {arity}")

    def to_json(self) -> dict:
        return {
            "api_name": self.api_name,
            "taint_args": list(self.taint_args),
            "category": self.category,
            "enabled": self.enabled,
        }


def load_rules(path=None) -> list:
    """Read a JSON array of seed rules; ``None`` loads the bundled default set."""
    if path is None:
        text = resources.files("gadgetforge.data").joinpath("default_rules.json").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [SeedRule(r["api_name"], tuple(r.get("taint_args", ())), r.get("category", "other"),
                     bool(r.get("enabled", True))) for r in json.loads(text)]


@functools.lru_cache(maxsize=1)
def _default_rules() -> tuple:
    return tuple(load_rules(None))


def default_rules() -> list:
    return list(_default_rules())


def dump_rules(rules: Iterable[SeedRule]) -> str:
    return json.dumps([r.to_json() for r in rules], indent=2) + "\n"


@dataclass(frozen=True)
class Seed:
    function: str
    stmt_index: int
    api_name: str
    category: str = "other"


def find_seeds(module: PseudoModule, rules: Iterable[SeedRule]) -> list:
    """One seed per (callsite, enabled matching rule), in statement order per function."""
    rules = [r for r in rules if r.enabled]
    seeds = []
    for fn in module.functions:
        for callee, idx in sorted(fn.callsites, key=lambda c: c[1]):
            for r in rules:
                if r.api_name == callee:
                    seeds.append(Seed(fn.name, idx, callee, r.category))
    return seeds


# ------------------------------------------------------------------- slicing


def _closure(pdg: Pdg, seed: int, step) -> dict:
    dist = {seed: 0}
    frontier = [seed]
    while frontier:
        nxt = []
        for n in frontier:
            for m in step(n):
                if m not in dist:
                    dist[m] = dist[n] + 1
                    nxt.append(m)
        frontier = nxt
    return dist


def slice_with_depth(pdg: Pdg, seed: int, direction: str = "backward") -> tuple:
    """(sorted statement indices, max hop distance from the seed)."""
    if seed not in pdg.nodes:
        raise SeedNotInGraph(f"statement {seed} not in PDG of {pdg.function.name}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    dist: dict = {}
    if direction in ("backward", "both"):
        dist.update(_closure(pdg, seed, pdg.predecessors))
    if direction in ("forward", "both"):
        for k, v in _closure(pdg, seed, pdg.successors).items():
            dist[k] = min(v, dist.get(k, v))
    return tuple(sorted(dist)), max(dist.values())


def slice(pdg: Pdg, seed: int, direction: str = "backward") -> tuple:  # noqa: A001 - domain name
    return slice_with_depth(pdg, seed, direction)[0]


# ------------------------------------------------------------- normalization


def _preserved_names(rules) -> frozenset:
    rules = default_rules() if rules is None else rules
    return frozenset(r.api_name for r in rules)


def normalize_statements(statements: Iterable[str], rules=None) -> list:
    """Per-statement normalized token lists (shared renaming across statements).

    User identifiers become VAR1..n / FUN1..n by first appearance; keywords,
    operators and seed-rule API names stay; string literals become STR.
    """
    keep = _preserved_names(rules)
    var_map: dict = {}
    fun_map: dict = {}
    out = []
    for text in statements:
        toks = tokenize(text)[:-1]
        norm = []
        for j, t in enumerate(toks):
            if t.kind == "string" or (t.kind == "ident" and t.text == "STR"):
                norm.append("STR")
            elif t.kind == "ident" and t.text not in keep:
                is_call = j + 1 < len(toks) and toks[j + 1].text == "(" and toks[j + 1].kind == "op"
                table, prefix = (fun_map, "FUN") if is_call else (var_map, "VAR")
                if t.text not in table:
                    table[t.text] = f"{prefix}{len(table) + 1}"
                norm.append(table[t.text])
            elif t.kind == "int":
                norm.append(str(int(t.text, 16) if t.text[:2] in ("0x", "0X") else int(t.text)))
            else:
                norm.append(t.text)
        out.append(norm)
    return out


def normalize(statements: Iterable[str], rules=None) -> list:
    return [tok for stmt in normalize_statements(statements, rules) for tok in stmt]


# ------------------------------------------------------------------ gadgets


@dataclass(frozen=True)
class CodeGadget:
    gadget_id: str
    statements: tuple  # normalized statement texts, program order
    tokens: tuple
    label: int
    seed: Seed
    truncated: bool
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "gadget_id": self.gadget_id,
            "label": self.label,
            "seed": {
                "function": self.seed.function,
                "stmt_index": self.seed.stmt_index,
                "api_name": self.seed.api_name,
                "category": self.seed.category,
            },
            "truncated": self.truncated,
            "provenance": self.provenance,
            "statements": list(self.statements),
            "tokens": list(self.tokens),
        }

    @classmethod
    def from_json(cls, d: dict) -> "CodeGadget":
        s = d["seed"]
        return cls(
            gadget_id=d["gadget_id"],
            statements=tuple(d["statements"]),
            tokens=tuple(d["tokens"]),
            label=int(d["label"]),
            seed=Seed(s["function"], int(s["stmt_index"]), s["api_name"], s.get("category", "other")),
            truncated=bool(d["truncated"]),
            provenance=dict(d.get("provenance", {})),
        )


def gadget_digest(tokens: Iterable[str], label: int) -> str:
    payload = json.dumps([list(tokens), int(label)], separators=(",", ":")).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def assemble_gadget(slice_stmts: Iterable[str], label: int, seed: Seed, provenance: Optional[dict] = None,
                    rules=None, max_tokens: int = MAX_TOKENS) -> CodeGadget:
    """Normalize a slice, keep the first ``max_tokens`` tokens and stamp a content digest."""
    slice_stmts = list(slice_stmts)
    if not slice_stmts:
        raise EmptyGadget("gadget has no statements")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    per_stmt = normalize_statements(slice_stmts, rules)
    tokens = [t for s in per_stmt for t in s]
    if not tokens:
        raise EmptyGadget("gadget has no tokens")
    prov = dict(provenance or {})
    prov["length"] = len(tokens)
    truncated = len(tokens) > max_tokens
    tokens = tokens[:max_tokens]
    return CodeGadget(
        gadget_id=gadget_digest(tokens, label),
        statements=tuple(" ".join(s) for s in per_stmt),
        tokens=tuple(tokens),
        label=int(label),
        seed=seed,
        truncated=truncated,
        provenance=prov,
    )


Labeler = Callable[[str, tuple], int]


def extract_gadgets(module: PseudoModule, rules=None, labeler: Optional[Labeler] = None,
                    direction: str = "both", with_graphs: bool = False, max_tokens: int = MAX_TOKENS) -> list:
    """Seed, slice and assemble every gadget of ``module``.

    ``labeler(function_name, slice_indices)`` supplies the label (0 when
    omitted). With ``with_graphs`` the result pairs each gadget with the
    FunctionGraphs it was cut from.
    """
    rules = default_rules() if rules is None else list(rules)
    seeds = find_seeds(module, rules)
    graphs = {}
    out = []
    for seed in seeds:
        if seed.function not in graphs:
            graphs[seed.function] = analyze_function(module.function(seed.function))
        g = graphs[seed.function]
        idx, depth = slice_with_depth(g.pdg, seed.stmt_index, direction)
        fn = g.pdg.function
        texts = [format_statement(fn.statements[i]) for i in idx]
        label = labeler(seed.function, idx) if labeler else 0
        prov = {
            "source_id": module.source_id,
            "function": seed.function,
            "direction": direction,
            "depth": depth,
            "stmt_indices": list(idx),
        }
        gadget = assemble_gadget(texts, label, seed, prov, rules, max_tokens)
        out.append((gadget, g) if with_graphs else gadget)
    return out


def write_gadgets(path, gadgets: Iterable[CodeGadget], extra: Optional[Iterable[dict]] = None) -> None:
    """Write a JSON-lines corpus; ``extra`` dicts are merged into the matching records."""
    extra = list(extra) if extra is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        for k, g in enumerate(gadgets):
            rec = g.to_json()
            if extra is not None:
                rec.update(extra[k])
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_gadgets(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise GadgetForgeError(f"{path}:{n}: unsupported schema_version {rec.get('schema_version')!r}")
            out.append(rec)
    return out
