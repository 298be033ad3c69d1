"""Training objectives on (N, B, H, W) tensors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch.nn import functional as F

from hsfuse.errors import ConfigError

KD_CLAMP = 1e-7


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 1.0
    eps: float = 1e-8
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 0.1
    teacher_stop_gradient: bool = True

    def __post_init__(self):
        if self.beta <= 0 or self.eps <= 0:
            raise ConfigError("beta and eps must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ConfigError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(pred, target)
    return (pred - target).abs().mean()


def beba_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Band-energy-balanced squared/linear error.

    Per band the spatial mean of ``alpha*D/beta + relu(D - beta) - alpha*beta``
    (``D`` the squared error) is divided by the band's mean energy; the loss is
    the mean of these ratios over bands (and batch items).
    """
    _check(pred, target)
    a, b = cfg.alpha, cfg.beta
    d = (pred - target).square()
    num = (a * d / b + F.relu(d - b) - a * b).mean(dim=(-2, -1))
    den = (target.square() + cfg.eps).mean(dim=(-2, -1))
    return (num / den).mean()


def sam_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """1 - mean per-pixel cosine similarity along the band axis (dim 1)."""
    _check(pred, target)
    dot = (pred * target).sum(dim=1)
    norms = pred.norm(dim=1) * target.norm(dim=1)
    return 1.0 - (dot / (norms + eps)).mean()


def kd_loss(z_s: torch.Tensor, z_t: torch.Tensor) -> torch.Tensor:
    """Sigmoid cross-entropy with the student map as the soft label and the
    teacher map as the prediction, in that order."""
    if z_s.shape[1] != z_t.shape[1]:
        z_s, z_t = match_channels(z_s, z_t)
    _check(z_s, z_t)
    p_s = torch.sigmoid(z_s)
    p_t = torch.sigmoid(z_t).clamp(KD_CLAMP, 1.0 - KD_CLAMP)
    return -(p_s * torch.log(p_t) + (1.0 - p_s) * torch.log(1.0 - p_t)).mean()


def _pool_channels(z: torch.Tensor, c: int) -> torch.Tensor:
    n, ch, h, w = z.shape
    flat = z.permute(0, 2, 3, 1).reshape(-1, 1, ch)
    pooled = F.adaptive_avg_pool1d(flat, c)
    return pooled.reshape(n, h, w, c).permute(0, 3, 1, 2)


def match_channels(z_s: torch.Tensor, z_t: torch.Tensor):
    """Fixed channel-average pooling of both maps to the smaller channel count."""
    c = min(z_s.shape[1], z_t.shape[1])
    return _pool_channels(z_s, c), _pool_channels(z_t, c)


def reconstruction_loss(y_hat, y, cfg: LossConfig) -> torch.Tensor:
    return l1_loss(y_hat, y) + cfg.lambda1 * beba_loss(y_hat, y, cfg) + cfg.lambda2 * sam_loss(y_hat, y, cfg.eps)


def teacher_total(y_t, y, z_t_fused=None, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return reconstruction_loss(y_t, y, cfg)


def student_total(y_s, y, y_t, z_s_fused, z_t_fused, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    if cfg.teacher_stop_gradient:
        y_t = y_t.detach()
        z_t_fused = z_t_fused.detach()
    loss = reconstruction_loss(y_s, y, cfg)
    if cfg.lambda3:
        loss = loss + cfg.lambda3 * kd_loss(z_s_fused, z_t_fused)
    if cfg.lambda4:
        loss = loss + cfg.lambda4 * l1_loss(y_s, y_t)
    return loss
