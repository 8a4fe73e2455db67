"""im2col / col2im for same-padded 1D convolution, numba and numpy variants."""
import numpy as np

from .._accel import njit, select


@njit
def _im2col_nb(x, k):
    b, t, c = x.shape
    half = k // 2
    out = np.zeros((b, t, k * c))
    for i in range(b):
        for s in range(t):
            for j in range(k):
                src = s + j - half
                if 0 <= src < t:
                    base = j * c
                    for ch in range(c):
                        out[i, s, base + ch] = x[i, src, ch]
    return out


def _im2col_np(x, k):
    b, t, c = x.shape
    half = k // 2
    xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
    return np.concatenate([xp[:, j:j + t, :] for j in range(k)], axis=2)


@njit
def _col2im_nb(cols, k, c):
    b, t, _ = cols.shape
    half = k // 2
    out = np.zeros((b, t, c))
    for i in range(b):
        for s in range(t):
            for j in range(k):
                dst = s + j - half
                if 0 <= dst < t:
                    base = j * c
                    for ch in range(c):
                        out[i, dst, ch] += cols[i, s, base + ch]
    return out


def _col2im_np(cols, k, c):
    b, t, _ = cols.shape
    half = k // 2
    out = np.zeros((b, t + 2 * half, c))
    for j in range(k):
        out[:, j:j + t, :] += cols[:, :, j * c:(j + 1) * c]
    return out[:, half:half + t, :]


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    return select(_im2col_nb, _im2col_np)(x, k)


def col2im(cols: np.ndarray, k: int, c: int) -> np.ndarray:
    return select(_col2im_nb, _col2im_np)(cols, k, c)
