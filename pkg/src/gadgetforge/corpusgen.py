"""Seeded synthetic pseudocode with ground truth, built from minimal-pair twins.

Every twin pair shares one skeleton: same names, same distractors, same seed
call. The two variants differ only at the *site* statement (a guard, a
format argument, or a use after free), at most three tokens apart. The
vulnerable variant's site is its flawed statement.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidSpec, VerificationFailure
from .ingest import format_statement, parse_pseudocode, tokenize
from .gadgets import default_rules, extract_gadgets, find_seeds

FAMILIES = ("overflow-strcpy", "format-string", "int-overflow-malloc", "use-after-free", "off-by-one")
FUNCTIONS_PER_FILE = 50
TRUTH_FILE = "ground_truth.jsonl"

_NAME_STEMS = ("buf", "src", "dst", "len", "n", "size", "tmp", "idx", "cnt", "data", "msg", "total", "ptr",
               "val", "key", "off", "pos", "lim", "acc", "cur", "blk", "hdr", "rec", "tag", "arg", "res")


@dataclass
class CorpusSpec:
    n_functions: int = 2000
    vulnerable_ratio: float = 0.5
    families: tuple = FAMILIES
    distractors: tuple = (2, 5)  # inclusive range per function
    identifier_pool: int = 64
    seed: int = 0

    def __post_init__(self):
        self.families = tuple(self.families)
        self.distractors = tuple(self.distractors)

    def validate(self) -> None:
        if self.n_functions < 0:
            raise InvalidSpec("n_functions must be >= 0")
        if not 0.0 <= float(self.vulnerable_ratio) <= 1.0:
            raise InvalidSpec(f"vulnerable_ratio must lie in [0, 1], got {self.vulnerable_ratio}")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise InvalidSpec(f"unknown flaw families: {sorted(unknown)}")
        if self.vulnerable_ratio > 0 and not self.families:
            raise InvalidSpec("at least one flaw family is required when vulnerable_ratio > 0")
        if not self.families and self.n_functions > 0:
            raise InvalidSpec("at least one family is needed to build function skeletons")
        lo, hi = self.distractors
        if lo < 0 or hi < lo:
            raise InvalidSpec(f"bad distractor range {self.distractors}")
        if self.identifier_pool < 8:
            raise InvalidSpec("identifier_pool must be >= 8")

    @property
    def n_vulnerable(self) -> int:
        exact = Fraction(str(self.vulnerable_ratio)) * self.n_functions
        return int(exact + Fraction(1, 2))  # round half up

    def to_json(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["distractors"] = list(self.distractors)
        return d


@dataclass(frozen=True)
class TruthEntry:
    function: str
    label: int
    family: Optional[str]  # family of the skeleton; None only for vulnerable-free specs
    flawed_stmt: Optional[int]
    site_stmt: int
    file: str
    twin: Optional[str]

    def to_json(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# emitter: statements as nested lists so pre-order indices are known up front


@dataclass
class _Line:
    text: str
    body: list = field(default_factory=list)  # non-empty only for if/while headers
    site: bool = False


def _render(fn_header: str, lines: List[_Line]) -> Tuple[str, Optional[int]]:
    out = [fn_header + " {"]
    counter = [0]
    site = [None]

    def emit(ls, depth):
        for ln in ls:
            if ln.site:
                site[0] = counter[0]
            counter[0] += 1
            pad = "    " * depth
            if ln.body or ln.text.startswith(("if ", "while ")):
                out.append(f"{pad}{ln.text} {{")
                emit(ln.body, depth + 1)
                out.append(f"{pad}}}")
            else:
                out.append(f"{pad}{ln.text}")

    emit(lines, 1)
    out.append("}")
    return "\n".join(out), site[0]


class _Names:
    def __init__(self, rng: np.random.Generator, pool: int):
        stems = [f"{s}{i}" if i else s for i in range(pool // len(_NAME_STEMS) + 1) for s in _NAME_STEMS]
        self.pool = stems[:pool]
        self.rng = rng
        self.used: set = set()

    def fresh(self) -> str:
        free = [n for n in self.pool if n not in self.used]
        if not free:
            name = f"v{len(self.used)}"
        else:
            name = free[int(self.rng.integers(len(free)))]
        self.used.add(name)
        return name


def _distractors(rng, names: _Names, guard_var: str, sink_var: Optional[str], count: int, size: int):
    """Distractors before the site, and after the sink.

    Some feed the guard variable (backward slice) or read the sink buffer
    (forward slice), so gadget lengths vary. Constants avoid 0 so a distractor
    never looks like a vulnerable guard.
    """
    pre, post = [], []
    for _ in range(count):
        kind = int(rng.integers(6))
        k = int(rng.integers(2, 10))
        if kind == 0:
            v = names.fresh()
            pre.append(_Line(f"int {v};"))
            pre.append(_Line(f"{v} = {guard_var} * {k};"))
        elif kind == 1:
            v = names.fresh()
            pre.append(_Line(f"int {v};"))
            pre.append(_Line(f"{v} = {k};"))
            pre.append(_Line(f"{guard_var} = {guard_var} - {v};"))
        elif kind == 2:
            v = names.fresh()
            pre.append(_Line(f"int {v};"))
            pre.append(_Line(f"{v} = 1;"))
            pre.append(_Line(f"while ({v} < {k})", [_Line(f"{v} = {v} + {v};")]))
        elif kind == 3:
            v = names.fresh()
            pre.append(_Line(f"int {v};"))
            pre.append(_Line(f"{v} = {guard_var} + {k};"))
            pre.append(_Line(f"if ({v} > {k + 10})", [_Line(f"{v} = {k + 10};")]))
        elif kind == 4 and sink_var is not None:
            v = names.fresh()
            post.append(_Line(f"int {v};"))
            post.append(_Line(f"{v} = {sink_var}[{int(rng.integers(1, size))}];"))
        else:
            v = names.fresh()
            pre.append(_Line(f"int {v};"))
            pre.append(_Line(f"{v} = log_event({k});"))
    return pre, post


def _skeleton(family: str, rng, names: _Names, n_distract: int):
    """Returns (header, build(vulnerable) -> lines) for one twin pair."""
    size = int(rng.choice([8, 16, 32, 64, 128]))
    if family in ("overflow-strcpy", "off-by-one"):
        buf, src, ln = names.fresh(), names.fresh(), names.fresh()
        header = f"void {{name}}(char {src}[], int {ln})"
        pre, post = _distractors(rng, names, ln, buf, n_distract, size)

        def build(vuln: bool):
            if family == "overflow-strcpy":
                cond = f"{ln} > 0" if vuln else f"{ln} < {size}"
                sink = f"strcpy({buf}, {src});"
            else:
                cond = f"{ln} <= {size}" if vuln else f"{ln} < {size}"
                sink = f"memcpy({buf}, {src}, {ln} + 1);"
            return ([_Line(f"char {buf}[{size}];")] + pre
                    + [_Line(f"if ({cond})", [_Line(sink)], site=True)] + post + [_Line("return;")])
        return header, build
    if family == "format-string":
        msg, n = names.fresh(), names.fresh()
        header = f"void {{name}}(char {msg}[], int {n})"
        pre, _ = _distractors(rng, names, n, None, n_distract, size)
        floor = 1 + size // 8

        def build(vuln: bool):
            call = f"printf({msg});" if vuln else f'printf("%s", {msg});'
            return pre + [_Line(f"if ({n} > {floor})", [_Line(call, site=True)]), _Line("return;")]
        return header, build
    if family == "int-overflow-malloc":
        n, sz, total, p = names.fresh(), names.fresh(), names.fresh(), names.fresh()
        header = f"int {{name}}(int {n}, int {sz})"
        pre, post = _distractors(rng, names, n, None, n_distract, size)

        def build(vuln: bool):
            cond = f"{n} > 0" if vuln else f"{n} < {size}"
            return ([_Line(f"int {total};"), _Line(f"int {p};")] + pre
                    + [_Line(f"{total} = {n} * {sz};"),
                       _Line(f"if ({cond})", [_Line(f"{p} = malloc({total});")], site=True)]
                    + post + [_Line(f"return {p};")])
        return header, build
    if family == "use-after-free":
        p, q, c = names.fresh(), names.fresh(), names.fresh()
        ln = names.fresh()
        header = f"int {{name}}(char {p}[], char {q}[], int {ln})"
        pre, post = _distractors(rng, names, ln, None, n_distract, size)

        def build(vuln: bool):
            use = f"{c} = {p}[0];" if vuln else f"{c} = {q}[0];"
            return ([_Line(f"int {c};")] + pre + [_Line(f"free({p});"), _Line(use, site=True)]
                    + post + [_Line(f"return {c};")])
        return header, build
    raise InvalidSpec(f"unknown family {family}")


def _plan(spec: CorpusSpec) -> List[Tuple[bool, Optional[bool]]]:
    """Per skeleton: (has vulnerable twin, has safe twin)."""
    nv = spec.n_vulnerable
    ns = spec.n_functions - nv
    pairs = min(nv, ns)
    plan = [(True, True)] * pairs
    plan += [(True, False)] * (nv - pairs)
    plan += [(False, True)] * (ns - pairs)
    return plan


def generate_functions(spec: CorpusSpec) -> List[Tuple[str, TruthEntry]]:
    """(source text, truth entry) per function, in file order."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    out: List[Tuple[str, TruthEntry]] = []
    lo, hi = spec.distractors
    for k, (want_vuln, want_safe) in enumerate(_plan(spec)):
        family = spec.families[k % len(spec.families)]
        names = _Names(rng, spec.identifier_pool)
        header, build = _skeleton(family, rng, names, int(rng.integers(lo, hi + 1)))
        variants = [v for v, want in ((True, want_vuln), (False, want_safe)) if want]
        fnames = {v: f"fn_{k:05d}_{'v' if v else 's'}" for v in variants}
        for v in variants:
            text, site = _render(header.format(name=fnames[v]), build(v))
            twin = fnames.get(not v)
            out.append((text, TruthEntry(fnames[v], int(v), family, site if v else None, site, "", twin)))
    order = rng.permutation(len(out))
    shuffled = [out[i] for i in order]
    result = []
    for pos, (text, entry) in enumerate(shuffled):
        fname = f"part-{pos // FUNCTIONS_PER_FILE:04d}.pc"
        result.append((text, TruthEntry(**{**entry.to_json(), "file": fname})))
    return result


def generate(spec: CorpusSpec, out_dir) -> Dict[str, TruthEntry]:
    """Write ``part-NNNN.pc`` files plus the ground-truth JSON-lines file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    funcs = generate_functions(spec)
    files: Dict[str, List[str]] = {}
    for text, entry in funcs:
        files.setdefault(entry.file, []).append(text)
    for old in out_dir.glob("part-*.pc"):
        if old.name not in files:
            old.unlink()
    for name, texts in files.items():
        (out_dir / name).write_text("\n\n".join(texts) + "\n", encoding="utf-8")
    write_truth(out_dir / TRUTH_FILE, [e for _, e in funcs])
    (out_dir / "corpus_spec.json").write_text(json.dumps(spec.to_json(), indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")
    return {e.function: e for _, e in funcs}


def write_truth(path, entries: Sequence[TruthEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def read_truth(path) -> Dict[str, TruthEntry]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                e = TruthEntry(**json.loads(line))
                out[e.function] = e
    return out


def corpus_files(corpus_dir) -> List[Path]:
    return sorted(Path(corpus_dir).glob("*.pc"))


def make_labeler(truth: Dict[str, TruthEntry]):
    """Label 1 iff the function is vulnerable and the slice keeps its flawed statement."""
    def labeler(function: str, stmt_indices) -> int:
        e = truth.get(function)
        return int(e is not None and e.label == 1 and e.flawed_stmt in set(stmt_indices))
    return labeler


def token_distance(a: str, b: str) -> int:
    """Token-level Levenshtein distance."""
    ta = [t.text for t in tokenize(a)]
    tb = [t.text for t in tokenize(b)]
    prev = list(range(len(tb) + 1))
    for i, x in enumerate(ta, 1):
        cur = [i] + [0] * len(tb)
        for j, y in enumerate(tb, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


# ----------------------------------------------------------------------------
# verification

_VULN_SITE = {
    "overflow-strcpy": re.compile(r"^if \(\w+ > 0\)$"),
    "format-string": re.compile(r"^printf\(\w+\);$"),
    "int-overflow-malloc": re.compile(r"^if \(\w+ > 0\)$"),
    "use-after-free": None,  # checked by dataflow below
    "off-by-one": re.compile(r"^if \(\w+ <= \d+\)$"),
}
_SINK = {
    "overflow-strcpy": "strcpy",
    "format-string": "printf",
    "int-overflow-malloc": "malloc",
    "use-after-free": "free",
    "off-by-one": "memcpy",
}


def _use_after_free(fn) -> List[int]:
    """Statements reading a name after a free() of it on the straight-line path."""
    texts = [format_statement(s) for s in fn.statements]
    hits = []
    for i, t in enumerate(texts):
        m = re.match(r"^free\((\w+)\);$", t)
        if m:
            pat = re.compile(rf"\b{re.escape(m.group(1))}\[")
            hits += [j for j in range(i + 1, len(texts)) if pat.search(texts[j])]
    return hits


def _flaw_sites(fn, family: str) -> List[int]:
    if family == "use-after-free":
        return _use_after_free(fn)
    pat = _VULN_SITE[family]
    return [i for i, s in enumerate(fn.statements) if pat.match(format_statement(s))]


def _check_function(fn, entry: TruthEntry, module, rules) -> Optional[str]:
    n = len(fn.statements)
    if not 0 <= entry.site_stmt < n:
        return f"site statement {entry.site_stmt} out of range"
    seeds = [s for s in find_seeds(module, rules) if s.function == fn.name]
    if not seeds:
        return "no seed call under the rules"
    if entry.family is not None and not any(s.api_name == _SINK[entry.family] for s in seeds):
        return f"missing {_SINK[entry.family]} call"
    flaws = _flaw_sites(fn, entry.family) if entry.family else []
    if entry.label == 1:
        if entry.flawed_stmt not in flaws:
            return f"flawed statement {entry.flawed_stmt} does not show the {entry.family} pattern"
        return None
    if flaws:
        return f"safe function shows the {entry.family} pattern at {flaws}"
    return None


def verify_corpus(corpus_dir, truth=None, rules=None) -> dict:
    """Re-parse, re-seed and re-slice everything; raise VerificationFailure on any offender."""
    corpus_dir = Path(corpus_dir)
    truth = read_truth(corpus_dir / TRUTH_FILE) if truth is None else truth
    rules = default_rules() if rules is None else rules
    labeler = make_labeler(truth)
    offenders: Dict[str, str] = {}
    seen = set()
    for path in corpus_files(corpus_dir):
        try:
            module = parse_pseudocode(path.read_text(encoding="utf-8"), path.name)
        except Exception as exc:  # any parse failure is an offence of the whole file
            offenders[path.name] = f"parse failure: {exc}"
            continue
        covered = {}
        for g in extract_gadgets(module, rules, labeler):
            fn_name = g.provenance["function"]
            covered[fn_name] = covered.get(fn_name, 0) | g.label
        for fn in module.functions:
            seen.add(fn.name)
            entry = truth.get(fn.name)
            if entry is None:
                offenders[fn.name] = "function missing from ground truth"
                continue
            problem = _check_function(fn, entry, module, rules)
            if problem is None and entry.label == 1 and not covered.get(fn.name):
                problem = "no gadget slice contains the flawed statement"
            if problem:
                offenders[fn.name] = problem
    for name in sorted(set(truth) - seen):
        offenders[name] = "listed in ground truth but not found"
    report = {
        "functions": len(seen),
        "vulnerable": sum(1 for e in truth.values() if e.label == 1),
        "safe": sum(1 for e in truth.values() if e.label == 0),
        "offenders": dict(sorted(offenders.items())),
    }
    if offenders:
        raise VerificationFailure(offenders)
    return report
