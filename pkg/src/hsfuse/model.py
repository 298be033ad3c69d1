from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from hsfuse.csa import CSAFusion, FusedState
from hsfuse.datagen import FusionSample, HyperCube
from hsfuse.dts import DTS, SCALE, BranchFeatures, NaiveEnsemble, NetworkConfig, init_convs
from hsfuse.resample import resample


class FusionOutput(NamedTuple):
    y: torch.Tensor
    z_fused: torch.Tensor
    features: BranchFeatures
    state: FusedState | None


class FusionNet(nn.Module):
    """LR-HSI + HR-MSI -> HR-HSI: the DTS backbone followed by either the
    cross-self-attention fusion head or the equal-weight ensemble head."""

    def __init__(self, hsi_bands: int, msi_bands: int, cfg: NetworkConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.hsi_bands = hsi_bands
        self.msi_bands = msi_bands
        self.dts = DTS(hsi_bands, msi_bands, cfg)
        if cfg.use_csa:
            self.csa = CSAFusion(cfg.width, hsi_bands, cfg.csa)
        else:
            self.ensemble = NaiveEnsemble(cfg.width, hsi_bands)
        gen = None
        if seed is not None:
            gen = torch.Generator().manual_seed(int(seed))
        init_convs(self, gen)
        with torch.no_grad():
            self.head.weight.zero_()

    @property
    def head(self) -> nn.Conv2d:
        return self.csa.conv_hr if self.cfg.use_csa else self.ensemble.head

    def init_head_bias(self, band_mean: torch.Tensor) -> None:
        """Start the reconstruction at the per-band mean of the training
        targets; with zeroed head weights the initial output is that mean."""
        with torch.no_grad():
            self.head.bias.copy_(torch.as_tensor(band_mean, dtype=self.head.bias.dtype))

    def forward(self, x_h: torch.Tensor, x_m: torch.Tensor, return_weights: bool = False) -> FusionOutput:
        bf = self.dts(x_h, x_m)
        if not self.cfg.use_csa:
            z = self.ensemble.fused(bf)
            return FusionOutput(self.ensemble.head(z), z, bf, None)
        y, state = self.csa(
            resample(bf.z_h, SCALE), bf.z_m, resample(bf.z_mh, SCALE), bf.z_hm, return_weights
        )
        return FusionOutput(y, state.z_fused, bf, state)


def to_tensor(arrays: list[np.ndarray], scale: float = 1.0, dtype=torch.float32) -> torch.Tensor:
    """Stack (H, W, C) arrays into an (N, C, H, W) tensor divided by ``scale``."""
    batch = np.stack([np.moveaxis(np.asarray(a), 2, 0) for a in arrays]) / scale
    return torch.from_numpy(np.ascontiguousarray(batch)).to(dtype)


def batch_tensors(samples: list[FusionSample], scale: float, dtype=torch.float32):
    x_h = to_tensor([s.lr_hsi.data for s in samples], scale, dtype)
    x_m = to_tensor([s.hr_msi.data for s in samples], scale, dtype)
    y = to_tensor([s.truth.data for s in samples], scale, dtype)
    return x_h, x_m, y


@torch.no_grad()
def predict(model: FusionNet, sample: FusionSample, scale: float) -> HyperCube:
    model.eval()
    x_h, x_m, _ = batch_tensors([sample], scale)
    y = model(x_h, x_m).y[0].double().numpy() * scale
    return sample.truth.with_data(np.moveaxis(y, 0, 2))
