"""Separable Keys bicubic resampling (a = -0.5, half-pixel centers, mirror
borders) for numpy cubes and torch feature maps.

Resampling is linear, so it is applied as a pair of dense interpolation
matrices; on torch tensors this keeps it differentiable.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np
import torch

from hsfuse._accel import bicubic_matrix


def _out_size(n: int, factor: Fraction) -> int:
    if n < 1:
        raise ValueError(f"non-positive spatial size {n}")
    out = n * factor
    if out.denominator != 1 or out < 1:
        raise ValueError(f"size {n} cannot be resampled by {factor}")
    return int(out)


@lru_cache(maxsize=64)
def _matrix(n_in: int, n_out: int) -> np.ndarray:
    m = bicubic_matrix(n_in, n_out)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def _torch_matrix(n_in: int, n_out: int, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.array(_matrix(n_in, n_out))).to(dtype)


def resample_array(x: np.ndarray, factor) -> np.ndarray:
    """Resample an (H, W, C) array by ``factor`` (e.g. 4 or Fraction(1, 4))."""
    factor = Fraction(factor)
    H, W = x.shape[:2]
    mh = _matrix(H, _out_size(H, factor))
    mw = _matrix(W, _out_size(W, factor))
    rows = np.tensordot(mh, np.asarray(x, dtype=np.float64), axes=(1, 0))
    return np.tensordot(mw, rows, axes=(1, 1)).transpose(1, 0, 2)


def resample(x: torch.Tensor, factor) -> torch.Tensor:
    """Resample an (N, C, H, W) tensor by ``factor``."""
    factor = Fraction(factor)
    H, W = x.shape[-2:]
    mh = _torch_matrix(H, _out_size(H, factor), x.dtype)
    mw = _torch_matrix(W, _out_size(W, factor), x.dtype)
    return torch.einsum("oh,nchw,pw->ncop", mh, x, mw)


def bicubic_resample(x, factor):
    """Dispatch on container type: HyperCube, numpy array or torch tensor."""
    from hsfuse.datagen import HyperCube

    if isinstance(x, HyperCube):
        return x.with_data(resample_array(x.data, factor))
    if isinstance(x, torch.Tensor):
        return resample(x, factor)
    return resample_array(np.asarray(x), factor)
