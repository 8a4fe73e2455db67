"""Kolmogorov-Arnold layers: every edge carries its own learnable univariate spline.

An edge function is ``w_b * x*sigmoid(x) + w_s * sum_i c_i B_i(x)`` with cubic
B-splines on a uniform grid over [-1, 1]. A layer sums its incoming edge
functions per output node. Inputs are clamped to [-1, 1] before every layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._accel import njit, select
from .autodiff import Adam, Tensor, as_tensor, backward, make_op, no_grad, reduce_mean, mul, sub
from .errors import DimensionMismatch, InvalidKnots, ScalerNotFitted

DEFAULT_GRID = 5
DEFAULT_ORDER = 3
DOMAIN = (-1.0, 1.0)


def uniform_knots(grid: int = DEFAULT_GRID, order: int = DEFAULT_ORDER, lo: float = DOMAIN[0],
                  hi: float = DOMAIN[1]) -> np.ndarray:
    """``grid`` equal intervals on [lo, hi] plus ``order`` padding knots each side."""
    if grid < 1 or order < 0 or not hi > lo:
        raise InvalidKnots(f"bad grid spec grid={grid} order={order} domain=({lo}, {hi})")
    h = (hi - lo) / grid
    return lo + (np.arange(grid + 2 * order + 1) - order) * h


def _check_knots(knots: np.ndarray, order: int) -> None:
    if order < 0:
        raise InvalidKnots(f"order must be >= 0, got {order}")
    if knots.ndim != 1 or knots.size < 2 * order + 2:
        raise InvalidKnots(f"need at least {2 * order + 2} knots for order {order}, got {knots.size}")
    if np.any(np.diff(knots) < 0):
        raise InvalidKnots("knot vector must be non-decreasing")
    if not knots[-order - 1] > knots[order]:
        raise InvalidKnots("knot domain is empty")


@njit
def _basis_nb(x, knots, order, with_deriv):
    n = x.shape[0]
    nb = knots.shape[0] - order - 1
    vals = np.zeros((n, nb))
    ders = np.zeros((n, nb))
    lo = knots[order]
    hi = knots[nb]
    left = np.zeros(order + 1)
    right = np.zeros(order + 1)
    levels = np.zeros((order + 1, order + 1))
    for s in range(n):
        xv = min(max(x[s], lo), hi)
        m = order
        while m < nb - 1 and knots[m + 1] <= xv:
            m += 1
        levels[:, :] = 0.0
        levels[0, 0] = 1.0
        for j in range(1, order + 1):
            left[j] = xv - knots[m + 1 - j]
            right[j] = knots[m + j] - xv
            saved = 0.0
            for r in range(j):
                den = right[r + 1] + left[j - r]
                temp = levels[j - 1, r] / den if den != 0.0 else 0.0
                levels[j, r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            levels[j, j] = saved
        for r in range(order + 1):
            vals[s, m - order + r] = levels[order, r]
        if with_deriv and order > 0:
            # lower level holds B_{m-order+1+r, order-1}, r = 0..order-1
            for r in range(order + 1):
                i = m - order + r
                d = 0.0
                if r >= 1:
                    den = knots[i + order] - knots[i]
                    if den != 0.0:
                        d += order / den * levels[order - 1, r - 1]
                if r < order:
                    den = knots[i + order + 1] - knots[i + 1]
                    if den != 0.0:
                        d -= order / den * levels[order - 1, r]
                ders[s, i] = d
    return vals, ders


def _basis_np(x, knots, order, with_deriv):
    nb = knots.size - order - 1
    lo, hi = knots[order], knots[nb]
    xv = np.clip(x, lo, hi)
    m = np.searchsorted(knots, xv, side="right") - 1
    m = np.clip(m, order, nb - 1)
    n = xv.size
    rows = np.arange(n)
    levels = [np.ones((n, 1))]
    left = np.zeros((n, order + 1))
    right = np.zeros((n, order + 1))
    for j in range(1, order + 1):
        left[:, j] = xv - knots[m + 1 - j]
        right[:, j] = knots[m + j] - xv
        prev = levels[-1]
        cur = np.zeros((n, j + 1))
        saved = np.zeros(n)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            temp = np.divide(prev[:, r], den, out=np.zeros(n), where=den != 0.0)
            cur[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        cur[:, j] = saved
        levels.append(cur)
    vals = np.zeros((n, nb))
    ders = np.zeros((n, nb))
    for r in range(order + 1):
        vals[rows, m - order + r] = levels[order][:, r]
    if with_deriv and order > 0:
        low = levels[order - 1]
        for r in range(order + 1):
            i = m - order + r
            d = np.zeros(n)
            if r >= 1:
                den = knots[i + order] - knots[i]
                d += np.divide(order * low[:, r - 1], den, out=np.zeros(n), where=den != 0.0)
            if r < order:
                den = knots[i + order + 1] - knots[i + 1]
                d -= np.divide(order * low[:, r], den, out=np.zeros(n), where=den != 0.0)
            ders[rows, i] = d
    return vals, ders


def bspline_basis_and_deriv(x, knots, order: int = DEFAULT_ORDER):
    """Basis values and their x-derivatives, shape x.shape + (n_basis,)."""
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    _check_knots(knots, order)
    xa = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(xa.reshape(-1))
    vals, ders = select(_basis_nb, _basis_np)(flat, knots, int(order), True)
    nb = knots.size - order - 1
    return vals.reshape(xa.shape + (nb,)), ders.reshape(xa.shape + (nb,))


def bspline_basis(x, knots, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Cox-de Boor basis values at ``x`` (scalar or array), x clamped to the knot domain.

    Evaluated with de Boor's triangular scheme. The right domain end belongs
    to the last interval so that x = hi is covered.
    """
    knots = np.ascontiguousarray(knots, dtype=np.float64)
    _check_knots(knots, order)
    xa = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(xa.reshape(-1))
    vals, _ = select(_basis_nb, _basis_np)(flat, knots, int(order), False)
    return vals.reshape(xa.shape + (knots.size - order - 1,))


def bspline(x, knots, order: int = DEFAULT_ORDER) -> Tensor:
    """Autodiff op: basis expansion of every entry of ``x`` along a new last axis."""
    x = as_tensor(x)
    vals, ders = bspline_basis_and_deriv(x.data, knots, order)
    lo, hi = knots[order], knots[len(knots) - order - 1]
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return ((g * ders).sum(axis=-1) * inside,)

    return make_op("bspline", (x,), vals, bw)


def silu(x):
    return x / (1.0 + np.exp(-x))


def _silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s + x * s * (1.0 - s)


@dataclass
class UnivariateFn:
    """One edge function; a standalone copy of a layer's (p, q) parameters."""
    base_weight: float
    spline_weight: float
    coefficients: np.ndarray
    knots: np.ndarray
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        self.knots = np.asarray(self.knots, dtype=np.float64)
        _check_knots(self.knots, self.order)
        if self.coefficients.shape != (self.knots.size - self.order - 1,):
            raise InvalidKnots(
                f"expected {self.knots.size - self.order - 1} coefficients, got {self.coefficients.shape}")


def phi_eval(fn: UnivariateFn, x):
    """w_b * x*sigmoid(x) + w_s * sum_i c_i B_i(x); scalar in, scalar out (arrays work too)."""
    xa = np.asarray(x, dtype=np.float64)
    out = fn.base_weight * silu(xa) + fn.spline_weight * (bspline_basis(xa, fn.knots, fn.order) @ fn.coefficients)
    return float(out) if out.ndim == 0 else out


def _kan_layer_op(x: Tensor, wb: Tensor, ws: Tensor, coef: Tensor, knots: np.ndarray, order: int) -> Tensor:
    lo, hi = knots[order], knots[len(knots) - order - 1]
    xc = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    basis, dbasis = bspline_basis_and_deriv(xc, knots, order)  # (B, I, M)
    spl = np.einsum("bim,iom->bio", basis, coef.data)
    base = silu(xc)
    out = base @ wb.data + np.einsum("bio,io->bo", spl, ws.data)

    def bw(g):
        gx = None
        if x.requires_grad:
            dspl = np.einsum("bim,iom->bio", dbasis, coef.data)
            gx = (_silu_grad(xc) * (g @ wb.data.T) + np.einsum("bo,io,bio->bi", g, ws.data, dspl)) * inside
        gwb = base.T @ g if wb.requires_grad else None
        gws = np.einsum("bo,bio->io", g, spl) if ws.requires_grad else None
        gc = ws.data[:, :, None] * np.einsum("bo,bim->iom", g, basis) if coef.requires_grad else None
        return gx, gwb, gws, gc

    return make_op("kan_layer", (x, wb, ws, coef), out, bw)


class KanLayer:
    """d_in -> d_out layer; parameter arrays are indexed [input p, output q, ...]."""

    def __init__(self, d_in: int, d_out: int, grid: int = DEFAULT_GRID, order: int = DEFAULT_ORDER,
                 rng: Optional[np.random.Generator] = None, init: str = "random"):
        self.d_in, self.d_out = int(d_in), int(d_out)
        self.grid, self.order = int(grid), int(order)
        self.knots = uniform_knots(self.grid, self.order)
        nb = self.grid + self.order
        if init == "zeros":
            wb, ws, c = np.zeros((d_in, d_out)), np.zeros((d_in, d_out)), np.zeros((d_in, d_out, nb))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            bound = 1.0 / np.sqrt(d_in)
            wb = rng.uniform(-bound, bound, size=(d_in, d_out))
            ws = np.ones((d_in, d_out))
            c = rng.normal(0.0, 0.1, size=(d_in, d_out, nb))
        self.base_weight = Tensor(wb, requires_grad=True, name="kan.wb")
        self.spline_weight = Tensor(ws, requires_grad=True, name="kan.ws")
        self.coefficients = Tensor(c, requires_grad=True, name="kan.coef")

    @property
    def n_basis(self) -> int:
        return self.grid + self.order

    def parameters(self) -> List[Tensor]:
        return [self.base_weight, self.spline_weight, self.coefficients]

    def edge(self, q: int, p: int) -> UnivariateFn:
        """The function on the edge from input p to output q."""
        return UnivariateFn(float(self.base_weight.data[p, q]), float(self.spline_weight.data[p, q]),
                            self.coefficients.data[p, q].copy(), self.knots.copy(), self.order)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = _unsqueeze(x)
        if x.shape[-1] != self.d_in:
            raise DimensionMismatch(f"layer expects {self.d_in} inputs, got {x.shape[-1]}")
        out = _kan_layer_op(x, self.base_weight, self.spline_weight, self.coefficients, self.knots, self.order)
        return _squeeze(out) if squeeze else out

    def state(self) -> Dict[str, np.ndarray]:
        return {"wb": self.base_weight.data, "ws": self.spline_weight.data, "coef": self.coefficients.data}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for t, key in ((self.base_weight, "wb"), (self.spline_weight, "ws"), (self.coefficients, "coef")):
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionMismatch(f"kan {key}: expected {t.shape}, got {arr.shape}")
            t.data[...] = arr


def _unsqueeze(x: Tensor) -> Tensor:
    from .autodiff import reshape
    return reshape(x, (1,) + x.shape)


def _squeeze(x: Tensor) -> Tensor:
    from .autodiff import reshape
    return reshape(x, x.shape[1:])


def make_kan(d_in: int, d_out: Optional[int] = None, hidden: Optional[int] = None, grid: int = DEFAULT_GRID,
             order: int = DEFAULT_ORDER, seed: int = 0) -> List[KanLayer]:
    """Two-layer stack d_in -> hidden -> d_out; hidden defaults to 2*d_in + 1."""
    rng = np.random.default_rng(seed)
    hidden = 2 * d_in + 1 if hidden is None else hidden
    d_out = d_in if d_out is None else d_out
    return [KanLayer(d_in, hidden, grid, order, rng), KanLayer(hidden, d_out, grid, order, rng)]


def kan_forward(layers: Sequence[KanLayer], x) -> Tensor:
    x = as_tensor(x)
    if not layers:
        return x
    if x.shape[-1] != layers[0].d_in:
        raise DimensionMismatch(f"KAN expects {layers[0].d_in} inputs, got {x.shape[-1]}")
    for layer in layers:
        x = layer(x)
    return x


def kan_parameters(layers: Sequence[KanLayer]) -> List[Tensor]:
    return [p for layer in layers for p in layer.parameters()]


def fit_kan(layers: Sequence[KanLayer], x: np.ndarray, y: np.ndarray, steps: int = 2000, lr: float = 0.01,
            batch: Optional[int] = None, seed: int = 0) -> List[float]:
    """Fit by MSE with Adam; returns the per-step loss curve. ``y`` is (N, d_out)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)
    opt = Adam(kan_parameters(layers), lr=lr)
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(steps):
        if batch is None or batch >= len(x):
            xb, yb = x, y
        else:
            pick = rng.choice(len(x), size=batch, replace=False)
            xb, yb = x[pick], y[pick]
        opt.zero_grad()
        err = sub(kan_forward(layers, Tensor(xb)), Tensor(yb))
        loss = reduce_mean(mul(err, err))
        backward(loss)
        opt.step()
        curve.append(loss.item())
    return curve


def kan_rmse(layers: Sequence[KanLayer], x: np.ndarray, y: np.ndarray) -> float:
    with no_grad():
        pred = kan_forward(layers, Tensor(np.asarray(x, dtype=np.float64))).data
    return float(np.sqrt(np.mean((pred - np.asarray(y, dtype=np.float64).reshape(pred.shape)) ** 2)))


# ----------------------------------------------------------------------------
# structural features

def _feature_names():
    from .gadgets import SEED_CATEGORIES
    from .graphs import AST_KINDS
    names = ["statements", "tokens"]
    names += [f"ast_{k.lower()}" for k in AST_KINDS]
    names += ["data_edges", "control_edges", "max_in_degree", "max_out_degree"]
    names += [f"seed_{c}" for c in SEED_CATEGORIES]
    return tuple(names)


STRUCT_FEATURE_NAMES = _feature_names()
STRUCT_DIM = len(STRUCT_FEATURE_NAMES)


def struct_features(ast, pdg, gadget) -> np.ndarray:
    """Raw (unscaled) structural feature vector for one gadget."""
    from .gadgets import SEED_CATEGORIES
    from .graphs import AST_KINDS
    stmts = gadget.provenance.get("stmt_indices") if gadget.provenance else None
    keep = set(stmts) if stmts is not None else set(pdg.nodes)
    hist = ast.kind_histogram(keep)
    data, ctrl, max_in, max_out = pdg.degree_stats(keep)
    seed_cat = gadget.seed.category if gadget.seed is not None else "other"
    onehot = [1.0 if c == seed_cat else 0.0 for c in SEED_CATEGORIES]
    vec = [len(gadget.statements), len(gadget.tokens)]
    vec += [hist.get(k, 0) for k in AST_KINDS]
    vec += [data, ctrl, max_in, max_out]
    vec += onehot
    return np.asarray(vec, dtype=np.float64)


@dataclass
class FeatureScaler:
    """Min-max scaler onto [-1, 1]; constant columns map to 0."""
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    names: tuple = field(default_factory=lambda: STRUCT_FEATURE_NAMES)

    @property
    def fitted(self) -> bool:
        return self.lo is not None

    def fit(self, rows: np.ndarray) -> "FeatureScaler":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise DimensionMismatch(f"scaler needs a non-empty (N, d) matrix, got {rows.shape}")
        self.lo, self.hi = rows.min(axis=0), rows.max(axis=0)
        return self

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ScalerNotFitted("feature scaler used before fit()")
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.lo.size:
            raise DimensionMismatch(f"scaler fitted on {self.lo.size} features, got {rows.shape[-1]}")
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (rows - self.lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def to_json(self) -> dict:
        if not self.fitted:
            raise ScalerNotFitted("cannot serialize an unfitted scaler")
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "names": list(self.names)}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureScaler":
        return cls(np.asarray(obj["lo"], dtype=np.float64), np.asarray(obj["hi"], dtype=np.float64),
                   tuple(obj.get("names", STRUCT_FEATURE_NAMES)))
