import json
import time

import pytest

from gadgetforge.corpusgen import (
    FAMILIES,
    TRUTH_FILE,
    CorpusSpec,
    corpus_files,
    generate,
    generate_functions,
    make_labeler,
    read_truth,
    token_distance,
    verify_corpus,
)
from gadgetforge.errors import InvalidSpec, VerificationFailure
from gadgetforge.gadgets import default_rules, extract_gadgets, find_seeds
from gadgetforge.ingest import parse_pseudocode


def test_ten_functions_half_vulnerable(tmp_path):
    truth = generate(CorpusSpec(n_functions=10, vulnerable_ratio=0.5, seed=7), tmp_path)
    assert len(truth) == 10
    assert sum(e.label for e in truth.values()) == 5
    lines = (tmp_path / TRUTH_FILE).read_text().splitlines()
    assert len(lines) == 10
    assert {"function", "label", "family", "flawed_stmt"} <= set(json.loads(lines[0]))


def test_byte_identical(tmp_path):
    spec = CorpusSpec(n_functions=120, seed=3)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_different_seed_differs(tmp_path):
    a = generate_functions(CorpusSpec(n_functions=20, seed=1))
    b = generate_functions(CorpusSpec(n_functions=20, seed=2))
    assert [t for t, _ in a] != [t for t, _ in b]


def test_every_vulnerable_function_is_seeded_and_covered():
    funcs = generate_functions(CorpusSpec(n_functions=100, seed=11))
    truth = {e.function: e for _, e in funcs}
    labeler = make_labeler(truth)
    rules = default_rules()
    for text, entry in funcs:
        module = parse_pseudocode(text, "t")
        assert find_seeds(module, rules)
        labels = [g.label for g in extract_gadgets(module, rules, labeler)]
        assert max(labels) == entry.label


def test_fresh_corpus_verifies(tmp_path):
    generate(CorpusSpec(n_functions=60, seed=5), tmp_path)
    rep = verify_corpus(tmp_path)
    assert rep["functions"] == 60 and rep["vulnerable"] == 30 and not rep["offenders"]


def test_removed_strcpy_is_named(tmp_path):
    truth = generate(CorpusSpec(n_functions=20, seed=4, families=("overflow-strcpy",)), tmp_path)
    victim = next(e for e in truth.values() if e.label == 1)
    path = tmp_path / victim.file
    text = path.read_text()
    start = text.index(f" {victim.function}(")
    cut = text.index("strcpy(", start)
    line_start = text.rindex("\n", 0, cut) + 1
    line_end = text.index("\n", cut) + 1
    path.write_text(text[:line_start] + text[line_end:])
    with pytest.raises(VerificationFailure) as err:
        verify_corpus(tmp_path)
    assert victim.function in err.value.offenders
    assert victim.function in str(err.value)


def test_safe_function_with_flaw_pattern_is_caught(tmp_path):
    truth = generate(CorpusSpec(n_functions=10, seed=6, families=("format-string",)), tmp_path)
    safe = next(e for e in truth.values() if e.label == 0)
    path = tmp_path / safe.file
    text = path.read_text()
    start = text.index(f" {safe.function}(")
    site = text.index('printf("%s", ', start)
    path.write_text(text[:site] + "printf(" + text[site + len('printf("%s", '):])
    with pytest.raises(VerificationFailure) as err:
        verify_corpus(tmp_path)
    assert list(err.value.offenders) == [safe.function]


def test_thousand_functions_verify_under_ten_seconds(tmp_path):
    generate(CorpusSpec(n_functions=1000, seed=0), tmp_path)
    t0 = time.perf_counter()
    verify_corpus(tmp_path)
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.parametrize("seed", range(50))
def test_spec_sweep_verifies(seed, tmp_path):
    fams = FAMILIES[seed % 5:] + FAMILIES[:seed % 5]
    spec = CorpusSpec(n_functions=10 + seed, vulnerable_ratio=[0.5, 0.3, 0.7, 1.0, 0.0][seed % 5],
                      families=fams[: 1 + seed % 5], distractors=(seed % 3, 2 + seed % 4), seed=seed)
    generate(spec, tmp_path)
    verify_corpus(tmp_path)


def test_twins_differ_in_at_most_three_tokens():
    funcs = generate_functions(CorpusSpec(n_functions=400, seed=9))
    text = {e.function: t for t, e in funcs}
    pairs = 0
    for _, e in funcs:
        if e.label == 1 and e.twin:
            d = token_distance(text[e.function].replace(e.function, "F"), text[e.twin].replace(e.twin, "F"))
            assert 1 <= d <= 3
            pairs += 1
    assert pairs == 200


def test_all_families_present_and_files_chunked(tmp_path):
    truth = generate(CorpusSpec(n_functions=120, seed=1), tmp_path)
    assert {e.family for e in truth.values()} == set(FAMILIES)
    assert len(corpus_files(tmp_path)) == 3  # 50 functions per file
    assert read_truth(tmp_path / TRUTH_FILE) == truth


@pytest.mark.parametrize("kw", [
    {"vulnerable_ratio": 1.5},
    {"families": ("made-up",)},
    {"families": ()},
    {"distractors": (3, 1)},
    {"n_functions": -1},
    {"identifier_pool": 2},
])
def test_invalid_spec(kw):
    with pytest.raises(InvalidSpec):
        CorpusSpec(**kw).validate()
