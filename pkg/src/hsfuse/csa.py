"""Cross-self-attention fusion of the four branch features.

The upsampled LR-HSI feature acts as the query, the HR-MSI feature as the key
and the upsampled joint LR feature as the value; attention runs over spatial
positions (tokens) with several heads and is residual-added to the reduced
joint HR feature. A per-pixel sigmoid gate then weighs the four reduced maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from hsfuse.errors import ConfigError


@dataclass
class CsaConfig:
    r: int = 32
    h_a: int = 4

    def __post_init__(self):
        if self.r < 1 or self.h_a < 1 or self.r % self.h_a:
            raise ConfigError(f"reduced dim r={self.r} must be a positive multiple of h_a={self.h_a}")

    @property
    def r_o(self) -> int:
        return self.r // self.h_a


class FusedState(NamedTuple):
    q: torch.Tensor
    k: torch.Tensor
    v: torch.Tensor
    z_hm_r: torch.Tensor
    o: torch.Tensor
    w: torch.Tensor
    z_fused: torch.Tensor
    attn: torch.Tensor | None


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # (N, r, H, W) -> (N, heads, H*W, r/heads)
    n, r, h, w = x.shape
    return x.reshape(n, heads, r // heads, h * w).transpose(2, 3)


def merge_heads(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    n, heads, tokens, r_o = x.shape
    return x.transpose(2, 3).reshape(n, heads * r_o, h, w)


def attention(q, k, v, scale: float, return_weights: bool = False):
    """Softmax(q k^T * scale) v over the token axis. The explicit path also
    returns the attention matrices; otherwise the fused kernel is used."""
    if return_weights:
        weights = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
        return weights @ v, weights
    return F.scaled_dot_product_attention(q, k, v, scale=scale), None


class CSAFusion(nn.Module):
    def __init__(self, width: int, out_bands: int, cfg: CsaConfig):
        super().__init__()
        if cfg.r > width:
            raise ConfigError(f"r={cfg.r} exceeds branch width {width}")
        self.cfg = cfg
        self.width = width
        self.proj_q = nn.Conv2d(width, cfg.r, 1)
        self.proj_k = nn.Conv2d(width, cfg.r, 1)
        self.proj_v = nn.Conv2d(width, cfg.r, 1)
        self.proj_hm = nn.Conv2d(width, cfg.r, 1)
        self.proj_o = nn.Conv2d(cfg.r, cfg.r, 1)
        self.proj_c = nn.Conv2d(4 * cfg.r, 4, 1)
        self.conv_hr = nn.Conv2d(cfg.r, out_bands, 3, padding=1)

    def project_reduce(self, x: torch.Tensor, proj: nn.Conv2d) -> torch.Tensor:
        if x.shape[1] != self.width:
            raise ValueError(f"expected {self.width} channels, got {x.shape[1]}")
        return proj(x)

    def cross_attention(self, q, k, v, z_hm_r, return_weights: bool = False):
        if not (q.shape == k.shape == v.shape == z_hm_r.shape):
            raise ValueError(
                f"attention inputs differ in shape: {[tuple(t.shape) for t in (q, k, v, z_hm_r)]}"
            )
        h, w = q.shape[-2:]
        heads = self.cfg.h_a
        # Temperature is 1/sqrt(r) over the full reduced dim, not per head.
        out, weights = attention(
            split_heads(q, heads),
            split_heads(k, heads),
            split_heads(v, heads),
            1.0 / math.sqrt(self.cfg.r),
            return_weights,
        )
        o = self.proj_o(merge_heads(out, h, w)) + z_hm_r
        return o, weights

    def gate_and_fuse(self, q, k, v, o):
        gates = torch.sigmoid(self.proj_c(torch.cat([q, k, v, o], dim=1)))
        z = gates[:, 0:1] * q + gates[:, 1:2] * k + gates[:, 2:3] * v + gates[:, 3:4] * o
        return z, gates

    def fuse(self, up_h, z_m, up_mh, z_hm, return_weights: bool = False) -> FusedState:
        q = self.project_reduce(up_h, self.proj_q)
        k = self.project_reduce(z_m, self.proj_k)
        v = self.project_reduce(up_mh, self.proj_v)
        z_hm_r = self.project_reduce(z_hm, self.proj_hm)
        o, weights = self.cross_attention(q, k, v, z_hm_r, return_weights)
        z, gates = self.gate_and_fuse(q, k, v, o)
        return FusedState(q, k, v, z_hm_r, o, gates, z, weights)

    def forward(self, up_h, z_m, up_mh, z_hm, return_weights: bool = False):
        state = self.fuse(up_h, z_m, up_mh, z_hm, return_weights)
        return self.conv_hr(state.z_fused), state
