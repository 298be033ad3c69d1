"""Dual two-streamed feature backbone.

Four branches read the two inputs at both sampling rates:

* ``h``  - the LR-HSI alone, grouped convolutions, LR grid;
* ``hm`` - bicubic-upsampled LR-HSI concatenated with the HR-MSI, HR grid;
* ``mh`` - bicubic-downsampled HR-MSI concatenated with the LR-HSI, LR grid;
* ``m``  - the HR-MSI alone, HR grid.

Each branch lifts its input to ``width`` channels with a 3x3 convolution and
then runs a stack of cross-layer residual aggregation (CLRA) modules.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from hsfuse.csa import CsaConfig
from hsfuse.errors import ConfigError, DataError
from hsfuse.resample import resample

BRANCHES = ("h", "hm", "mh", "m")
LEAKY_SLOPE = 0.2
SCALE = 4
FUSE_INIT_SCALE = 0.1


@dataclass
class NetworkConfig:
    # CLRA repetitions per branch, ordered (h, hm, mh, m).
    stacks: tuple[int, int, int, int] = (6, 6, 4, 4)
    width: int = 64
    g_c: int = 4
    csa: CsaConfig = field(default_factory=lambda: CsaConfig(32, 4))
    role: str = "teacher"
    use_csa: bool = True

    def __post_init__(self):
        if isinstance(self.csa, dict):
            self.csa = CsaConfig(**self.csa)
        self.stacks = tuple(int(s) for s in self.stacks)
        if len(self.stacks) != 4 or min(self.stacks) < 1:
            raise ConfigError(f"stacks must be four integers >= 1, got {self.stacks}")
        if self.width < 1 or self.g_c < 1 or self.width % self.g_c:
            raise ConfigError(f"width {self.width} not divisible by g_c {self.g_c}")
        if self.csa.r > self.width:
            raise ConfigError(f"CSA reduced dim {self.csa.r} exceeds width {self.width}")
        if self.role not in ("teacher", "student"):
            raise ConfigError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stacks"] = list(self.stacks)
        return d


def _kaiming_(conv: nn.Conv2d, generator: torch.Generator | None, scale: float = 1.0) -> None:
    fan_in = conv.weight.shape[1] * conv.weight.shape[2] * conv.weight.shape[3]
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    bound = scale * gain * math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        conv.weight.uniform_(-bound, bound, generator=generator)
        if conv.bias is not None:
            conv.bias.zero_()


def init_convs(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Kaiming-uniform (fan-in, LeakyReLU gain) kernels and zero biases, in
    module registration order so a seeded generator gives reproducible nets.

    Two convs get damped kernels so activations stay O(1) at init: each CLRB
    fusion conv (x0.1, as in residual-in-residual dense blocks), and each
    branch's lifting conv (x2^-n) to cancel the doubling of n stacked CLRAs.
    """
    scales = {}
    for m in module.modules():
        if isinstance(m, CLRB):
            scales[id(m.fuse)] = FUSE_INIT_SCALE
        elif isinstance(m, Branch):
            scales[id(m.lift)] = 2.0 ** -len(m.clra)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            _kaiming_(m, generator, scales.get(id(m), 1.0))


def group_cat(tensors: list[torch.Tensor], groups: int) -> torch.Tensor:
    """Channel concatenation that keeps each group's channels contiguous, so a
    grouped convolution over the result sees only its own group's history."""
    if groups == 1:
        return torch.cat(tensors, dim=1)
    parts = [t.chunk(groups, dim=1) for t in tensors]
    return torch.cat([p[g] for g in range(groups) for p in parts], dim=1)


class CLRB(nn.Module):
    """Dense-residual block: three 3x3 conv + LeakyReLU stages, each fed the
    concatenation of the block input and all earlier stage outputs, then a
    1x1 fusion back to ``width`` channels and an identity skip."""

    def __init__(self, width: int, groups: int = 1):
        super().__init__()
        if width % groups:
            raise ConfigError(f"width {width} not divisible by {groups} groups")
        self.width = width
        self.groups = groups
        self.convs = nn.ModuleList(
            nn.Conv2d(width * (i + 1), width, 3, padding=1, groups=groups) for i in range(3)
        )
        self.fuse = nn.Conv2d(width * 4, width, 1, groups=groups)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.width:
            raise ValueError(f"CLRB expects {self.width} channels, got {x.shape[1]}")
        feats = [x]
        for conv in self.convs:
            feats.append(F.leaky_relu(conv(group_cat(feats, self.groups)), LEAKY_SLOPE))
        return self.fuse(group_cat(feats, self.groups)) + x


class CLRA(nn.Module):
    def __init__(self, width: int, groups: int = 1):
        super().__init__()
        self.blocks = nn.Sequential(*(CLRB(width, groups) for _ in range(3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x) + x


class Branch(nn.Module):
    def __init__(self, in_channels: int, width: int, n_clra: int, groups: int = 1):
        super().__init__()
        self.lift = nn.Conv2d(in_channels, width, 3, padding=1)
        self.clra = nn.Sequential(*(CLRA(width, groups) for _ in range(n_clra)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.clra(self.lift(x))


class BranchFeatures(NamedTuple):
    z_h: torch.Tensor
    z_hm: torch.Tensor
    z_mh: torch.Tensor
    z_m: torch.Tensor


class DTS(nn.Module):
    def __init__(self, hsi_bands: int, msi_bands: int, cfg: NetworkConfig):
        super().__init__()
        self.hsi_bands = hsi_bands
        self.msi_bands = msi_bands
        n_h, n_hm, n_mh, n_m = cfg.stacks
        w = cfg.width
        self.branch_h = Branch(hsi_bands, w, n_h, groups=cfg.g_c)
        self.branch_hm = Branch(hsi_bands + msi_bands, w, n_hm)
        self.branch_mh = Branch(hsi_bands + msi_bands, w, n_mh)
        self.branch_m = Branch(msi_bands, w, n_m)

    def forward(self, x_h: torch.Tensor, x_m: torch.Tensor) -> BranchFeatures:
        if x_h.shape[1] != self.hsi_bands or x_m.shape[1] != self.msi_bands:
            raise ValueError(
                f"expected {self.hsi_bands}/{self.msi_bands} bands, "
                f"got {x_h.shape[1]}/{x_m.shape[1]}"
            )
        if x_m.shape[0] != x_h.shape[0] or tuple(x_m.shape[-2:]) != (
            x_h.shape[-2] * SCALE,
            x_h.shape[-1] * SCALE,
        ):
            raise ValueError(f"HR-MSI {tuple(x_m.shape)} does not match LR-HSI {tuple(x_h.shape)} x{SCALE}")
        x_hu = resample(x_h, SCALE)
        x_md = resample(x_m, Fraction(1, SCALE))
        return BranchFeatures(
            z_h=self.branch_h(x_h),
            z_hm=self.branch_hm(torch.cat([x_hu, x_m], dim=1)),
            z_mh=self.branch_mh(torch.cat([x_md, x_h], dim=1)),
            z_m=self.branch_m(x_m),
        )


class NaiveEnsemble(nn.Module):
    """Equal-weight sum of the four branch features followed by a 1x1 conv."""

    def __init__(self, width: int, out_bands: int):
        super().__init__()
        self.head = nn.Conv2d(width, out_bands, 1)

    def fused(self, bf: BranchFeatures) -> torch.Tensor:
        return resample(bf.z_mh, SCALE) + resample(bf.z_h, SCALE) + bf.z_m + bf.z_hm

    def forward(self, bf: BranchFeatures) -> torch.Tensor:
        return self.head(self.fused(bf))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class ParameterStore:
    """Named float32 tensors with a JSON manifest + single binary blob archive.

    The archive is ``<stem>.json`` (name -> shape, dtype, byte offset) and
    ``<stem>.bin`` (little-endian float32, concatenated in manifest order).
    """

    def __init__(self, entries: "OrderedDict[str, np.ndarray] | None" = None, role: str = ""):
        self.entries: OrderedDict[str, np.ndarray] = OrderedDict()
        self.role = role
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.array(value, dtype=np.float32)
        arr.setflags(write=False)
        self.entries[name] = arr

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def count(self) -> int:
        return int(sum(v.size for v in self.entries.values()))

    @classmethod
    def from_module(cls, module: nn.Module, role: str = "") -> "ParameterStore":
        return cls(OrderedDict(module.state_dict()), role)

    def load_into(self, module: nn.Module) -> None:
        own = module.state_dict()
        if list(own) != list(self.entries):
            missing = set(own) ^ set(self.entries)
            raise DataError(f"parameter names do not match the model: {sorted(missing)[:5]}")
        for name, t in own.items():
            if tuple(t.shape) != self.entries[name].shape:
                raise DataError(f"{name}: shape {self.entries[name].shape} != model {tuple(t.shape)}")
        module.load_state_dict(
            OrderedDict((k, torch.from_numpy(np.array(v))) for k, v in self.entries.items())
        )

    def save(self, stem: Path) -> None:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        manifest = {"role": self.role, "blob": stem.name + ".bin", "entries": []}
        offset = 0
        with open(stem.with_name(stem.name + ".bin"), "wb") as fh:
            for name, arr in self.entries.items():
                buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                manifest["entries"].append(
                    {"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset}
                )
                fh.write(buf)
                offset += len(buf)
        stem.with_name(stem.name + ".json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, stem: Path) -> "ParameterStore":
        stem = Path(stem)
        mpath = stem.with_name(stem.name + ".json")
        if not mpath.is_file():
            raise DataError(f"missing parameter manifest {mpath}")
        manifest = json.loads(mpath.read_text())
        blob = (mpath.parent / manifest["blob"]).read_bytes()
        store = cls(role=manifest.get("role", ""))
        for e in manifest["entries"]:
            if e["dtype"] != "f32":
                raise DataError(f"unsupported dtype {e['dtype']!r} for {e['name']}")
            n = int(np.prod(e["shape"], dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"])
            store.add(e["name"], arr.reshape(e["shape"]))
        return store
