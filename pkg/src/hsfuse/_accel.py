"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``HSFUSE_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always importable
under their explicit names so benchmarks and tests can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def numba_enabled() -> bool:
    return HAVE_NUMBA and os.environ.get("HSFUSE_DISABLE_NUMBA", "0") in ("", "0")


def fold_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by mirror reflection about
    the edge samples (``numpy.pad(mode="reflect")`` convention, repeated as
    often as needed so pads wider than the signal still work)."""
    idx = np.asarray(idx, dtype=np.int64)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


@njit(cache=True)
def _fold_scalar(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    m = i % period
    if m < 0:
        m += period
    if m < n:
        return m
    return period - m


def gaussian_kernel1d(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized samples of a zero-mean Gaussian at integer offsets."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


@njit(cache=True)
def _filter_decimate_numba(x, k, step, offset):
    # x: (H, W, B) float64; separable filter then keep every `step`-th sample.
    H, W, B = x.shape
    K = k.shape[0]
    r = K // 2
    Ho = (H - offset + step - 1) // step
    Wo = (W - offset + step - 1) // step
    tmp = np.zeros((Ho, W, B))
    for io in range(Ho):
        ci = io * step + offset
        for t in range(K):
            src = _fold_scalar(ci + t - r, H)
            wt = k[t]
            for j in range(W):
                for b in range(B):
                    tmp[io, j, b] += wt * x[src, j, b]
    out = np.zeros((Ho, Wo, B))
    for io in range(Ho):
        for jo in range(Wo):
            cj = jo * step + offset
            for t in range(K):
                src = _fold_scalar(cj + t - r, W)
                wt = k[t]
                for b in range(B):
                    out[io, jo, b] += wt * tmp[io, src, b]
    return out


def _filter_decimate_numpy(x, k, step, offset):
    H, W, _ = x.shape
    r = k.shape[0] // 2
    taps = np.arange(-r, r + 1)
    rows = fold_index(np.arange(offset, H, step)[:, None] + taps[None, :], H)
    tmp = np.einsum("t,otwb->owb", k, x[rows])
    cols = fold_index(np.arange(offset, W, step)[:, None] + taps[None, :], W)
    return np.einsum("t,hotb->hob", k, tmp[:, cols])


def filter_decimate(x: np.ndarray, k: np.ndarray, step: int = 1, offset: int = 0) -> np.ndarray:
    """Separable 2-D filtering of an (H, W, B) stack with the 1-D kernel ``k``
    (odd length, applied along both axes with mirror borders), sampled at
    ``offset, offset + step, ...`` along each axis."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, B) array, got shape {x.shape}")
    if k.ndim != 1 or k.shape[0] % 2 != 1:
        raise ValueError("kernel must be 1-D with odd length")
    if numba_enabled():
        return _filter_decimate_numba(x, k, int(step), int(offset))
    return _filter_decimate_numpy(x, k, int(step), int(offset))


def keys_cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    tf = t[far]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    out[far] = a * tf**3 - 5.0 * a * tf**2 + 8.0 * a * tf - 4.0 * a
    return out


def bicubic_matrix(n_in: int, n_out: int, a: float = -0.5) -> np.ndarray:
    """(n_out, n_in) interpolation matrix for half-pixel-aligned Keys bicubic
    resampling with mirror borders. No antialiasing on reduction."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"non-positive size: n_in={n_in}, n_out={n_out}")
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        pos = base + tap
        w = keys_cubic(src - pos, a)
        np.add.at(mat, (rows, fold_index(pos, n_in)), w)
    return mat
