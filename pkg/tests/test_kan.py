import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gadgetforge.autodiff import Tensor, grad_check, mul, reduce_sum
from gadgetforge.errors import DimensionMismatch, InvalidKnots, ScalerNotFitted
from gadgetforge.gadgets import extract_gadgets
from gadgetforge.graphs import AST_KINDS
from gadgetforge.ingest import parse_pseudocode
from gadgetforge.kan import (
    STRUCT_DIM,
    STRUCT_FEATURE_NAMES,
    FeatureScaler,
    KanLayer,
    UnivariateFn,
    _basis_nb,
    _basis_np,
    bspline_basis,
    bspline_basis_and_deriv,
    fit_kan,
    kan_forward,
    kan_parameters,
    kan_rmse,
    make_kan,
    phi_eval,
    struct_features,
    uniform_knots,
)

KNOTS = uniform_knots(5, 3)


def cox_de_boor(i: int, k: int, t, x: float) -> float:
    """Textbook recursion, half-open intervals, 0/0 taken as 0."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    out = 0.0
    if t[i + k] != t[i]:
        out += (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(i, k - 1, t, x)
    if t[i + k + 1] != t[i + 1]:
        out += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(i + 1, k - 1, t, x)
    return out


def test_knots_layout():
    assert KNOTS.size == 5 + 2 * 3 + 1
    np.testing.assert_allclose(KNOTS[3:9], np.linspace(-1, 1, 6))
    assert np.all(np.diff(KNOTS) > 0)


def test_order_zero_indicator():
    t = uniform_knots(4, 0)
    b = bspline_basis(np.array([-0.9, -0.1, 0.3, 0.8]), t, 0)
    np.testing.assert_array_equal(b, np.eye(4))


@pytest.mark.parametrize("order", [1, 2, 3])
def test_matches_recursion_at_midpoints(order):
    t = uniform_knots(5, order)
    mids = (t[order:-order - 1] + t[order + 1:-order]) / 2
    got = bspline_basis(mids, t, order)
    want = np.array([[cox_de_boor(i, order, t, x) for i in range(t.size - order - 1)] for x in mids])
    np.testing.assert_allclose(got, want, atol=1e-14)


@settings(max_examples=200)
@given(st.floats(-1.0, 0.9999999), st.integers(0, 4))
def test_matches_recursion_anywhere(x, order):
    t = uniform_knots(5, order)
    want = [cox_de_boor(i, order, t, x) for i in range(t.size - order - 1)]
    np.testing.assert_allclose(bspline_basis(x, t, order), want, atol=1e-13)


def test_partition_of_unity_and_support_1000_points():
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    b = bspline_basis(x, KNOTS)
    assert np.max(np.abs(b.sum(axis=1) - 1.0)) <= 1e-12
    assert np.all((b != 0).sum(axis=1) <= 4)
    assert np.all(b >= 0)


def test_domain_ends_and_clamping():
    b = bspline_basis(np.array([1.0, 5.0, -7.0]), KNOTS)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(b[0], b[1])


def test_derivative_matches_differences():
    x = np.linspace(-0.95, 0.95, 37)
    _, d = bspline_basis_and_deriv(x, KNOTS)
    h = 1e-6
    num = (bspline_basis(x + h, KNOTS) - bspline_basis(x - h, KNOTS)) / (2 * h)
    np.testing.assert_allclose(d, num, atol=1e-6)


def test_backends_agree():
    x = np.random.default_rng(1).uniform(-1.2, 1.2, 500)
    for a, b in zip(_basis_nb(x, KNOTS, 3, True), _basis_np(x, KNOTS, 3, True)):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_invalid_knots():
    with pytest.raises(InvalidKnots):
        bspline_basis(0.0, np.array([0.0, 1.0, 0.5, 2.0]), 1)
    with pytest.raises(InvalidKnots):
        bspline_basis(0.0, KNOTS, -1)
    with pytest.raises(InvalidKnots):
        uniform_knots(0)
    with pytest.raises(InvalidKnots):
        UnivariateFn(0.0, 1.0, np.zeros(3), KNOTS)


def test_phi_examples():
    zero = UnivariateFn(0.0, 0.0, np.zeros(8), KNOTS)
    assert phi_eval(zero, 0.3) == 0.0
    base = UnivariateFn(1.0, 0.0, np.ones(8), KNOTS)
    assert phi_eval(base, 0.0) == 0.0
    assert phi_eval(base, 0.5) == pytest.approx(0.5 / (1 + np.exp(-0.5)), abs=1e-15)


def test_least_squares_spline_fits_sine():
    x = np.linspace(-1, 1, 401)
    coef, *_ = np.linalg.lstsq(bspline_basis(x, KNOTS), np.sin(np.pi * x), rcond=None)
    fn = UnivariateFn(0.0, 1.0, coef, KNOTS)
    grid = np.linspace(-1, 1, 1001)
    assert np.max(np.abs(phi_eval(fn, grid) - np.sin(np.pi * grid))) < 1e-2


def test_layer_is_sum_of_edge_functions():
    layer = KanLayer(3, 7, rng=np.random.default_rng(4))
    x = np.random.default_rng(5).uniform(-1, 1, size=3)
    out = layer(Tensor(x)).data
    for q in range(7):
        want = sum(phi_eval(layer.edge(q, p), x[p]) for p in range(3))
        assert out[q] == pytest.approx(want, abs=1e-14)


def test_zero_params_and_base_only():
    layer = KanLayer(2, 3, init="zeros")
    assert not kan_forward([layer], np.array([0.4, -0.7])).data.any()
    layer.base_weight.data[...] = 1.0
    x = np.array([0.4, -0.7])
    np.testing.assert_allclose(layer(Tensor(x)).data, np.full(3, np.sum(x / (1 + np.exp(-x)))), atol=1e-15)


def test_make_kan_widths_and_dimension_check():
    layers = make_kan(4)
    assert [(l.d_in, l.d_out) for l in layers] == [(4, 9), (9, 4)]
    with pytest.raises(DimensionMismatch):
        kan_forward(layers, np.zeros(5))


def test_grad_check_all_kan_params():
    layers = make_kan(3, 2, seed=1)
    x = Tensor(np.random.default_rng(2).uniform(-1.2, 1.2, (4, 3)), requires_grad=True)
    w = np.random.default_rng(3).normal(size=(4, 2))
    err = grad_check(lambda x, *ps: reduce_sum(mul(kan_forward(layers, x), w)), [x] + kan_parameters(layers))
    assert err < 1e-4


def test_fit_sine():
    x = np.linspace(-1, 1, 201)[:, None]
    layers = [KanLayer(1, 1, rng=np.random.default_rng(0))]
    fit_kan(layers, x, np.sin(np.pi * x), steps=2000, lr=0.01)
    assert kan_rmse(layers, x, np.sin(np.pi * x)) < 1e-2


def test_fit_product():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (512, 2))
    layers = make_kan(2, 1, seed=0)
    fit_kan(layers, x, x[:, :1] * x[:, 1:], steps=2000, lr=0.01)
    xt = rng.uniform(-1, 1, (1000, 2))
    assert kan_rmse(layers, xt, xt[:, :1] * xt[:, 1:]) < 5e-2


# ------------------------------------------------------------ structural features

FIXTURE = """
int f(char s[], int n) {
    char b[8];
    int k;
    k = n;
    if (k > 0) {
        strcpy(b, s);
    }
    return k;
}
"""


def _features(text):
    m = parse_pseudocode(text, "t")
    (g, fg), = extract_gadgets(m, with_graphs=True)
    return g, fg, struct_features(fg.ast, fg.pdg, g)


def test_feature_layout():
    assert STRUCT_DIM == len(STRUCT_FEATURE_NAMES) == 21
    assert STRUCT_FEATURE_NAMES[2:10] == tuple(f"ast_{k.lower()}" for k in AST_KINDS)


def test_feature_counts_on_fixture():
    g, fg, v = _features(FIXTURE)
    feats = dict(zip(STRUCT_FEATURE_NAMES, v))
    # k = n feeds the if and the return, the b decl feeds strcpy, the if controls strcpy
    assert set(fg.pdg.data_edges) == {(0, 4, "b"), (2, 3, "k"), (2, 5, "k")}
    # the slice around strcpy drops int k (overwritten) and the return
    assert g.provenance["stmt_indices"] == [0, 2, 3, 4]
    assert feats["data_edges"] == 2 and feats["control_edges"] == 1
    assert feats["max_in_degree"] == 2 and feats["max_out_degree"] == 1
    assert feats["statements"] == len(g.statements) == 4
    assert feats["tokens"] == len(g.tokens)
    assert feats["ast_function"] == 1 and feats["ast_if"] == 1
    assert feats["seed_buffer"] == 1 and sum(v[-7:]) == 1
    # over the whole function: three data edges, one control edge
    whole = dataclasses.replace(g, provenance={**g.provenance, "stmt_indices": list(range(6))})
    full = dict(zip(STRUCT_FEATURE_NAMES, struct_features(fg.ast, fg.pdg, whole)))
    assert full["data_edges"] == 3 and full["control_edges"] == 1


def test_empty_body_histogram():
    m = parse_pseudocode("void f() { }", "t")
    from gadgetforge.gadgets import CodeGadget
    from gadgetforge.graphs import analyze_function

    fg = analyze_function(m.functions[0])
    g = CodeGadget("x", ("return",), ("return ;",), 0, None, {"stmt_indices": []}, False)
    v = struct_features(fg.ast, fg.pdg, g)
    hist = v[2:10]
    assert hist[0] == 1 and not hist[1:].any()
    assert not v[10:14].any()


def test_scaler():
    rows = np.random.default_rng(0).normal(size=(50, 4))
    rows[:, 2] = 3.0
    sc = FeatureScaler(names=("a", "b", "c", "d")).fit(rows)
    out = sc.transform(rows)
    assert np.all(out >= -1) and np.all(out <= 1)
    assert np.all(out[:, 2] == 0.0)
    np.testing.assert_allclose(out[:, 0].min(), -1.0) and np.testing.assert_allclose(out[:, 0].max(), 1.0)
    back = FeatureScaler.from_json(sc.to_json())
    np.testing.assert_array_equal(back.transform(rows), out)
    with pytest.raises(ScalerNotFitted):
        FeatureScaler().transform(rows)
    with pytest.raises(DimensionMismatch):
        sc.transform(np.zeros((1, 3)))
