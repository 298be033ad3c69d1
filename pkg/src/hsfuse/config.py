"""Experiment configuration: one YAML document with ``data``, ``network``,
``train`` and ``eval`` sections. Unknown keys are rejected at every level."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from hsfuse.datagen import MSI_RANGES_NM, _wavelengths_for, build_spectral_response
from hsfuse.distill import PRESET_STACKS, TrainConfig, network_config, preset
from hsfuse.dts import NetworkConfig
from hsfuse.errors import ConfigError

SECTIONS = ("data", "network", "train", "eval")


def _strict(cls, d: dict | None, where: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class DataSection:
    height: int = 64  # HR grid
    width: int = 64
    bands: int = 172
    n_materials: int = 3
    # Cubes share one material library drawn from this seed; null draws
    # signatures per cube.
    library_seed: int | None = 0
    msi_variant: str = "bands4"
    psf_sigma: float = 3.0
    blur_factor: int = 4
    n_train: int = 8
    n_val: int = 2
    n_test: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.msi_variant not in MSI_RANGES_NM:
            raise ConfigError(f"unknown msi_variant {self.msi_variant!r}")
        if self.height % self.blur_factor or self.width % self.blur_factor:
            raise ConfigError(f"HR size {self.height}x{self.width} not divisible by {self.blur_factor}")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test == 0:
            raise ConfigError("split sizes must be non-negative and not all zero")
        if min(self.height, self.width, self.bands, self.n_materials) < 1:
            raise ConfigError("data dimensions must be positive")
        try:
            build_spectral_response(_wavelengths_for(self.bands), self.msi_variant)
        except ValueError as exc:
            raise ConfigError(f"{self.bands} bands cannot feed {self.msi_variant}: {exc}") from exc


@dataclass
class NetSpec:
    stacks: list[int] | None = None
    width: int | None = None
    g_c: int | None = None
    r: int | None = None
    h_a: int | None = None


@dataclass
class NetworkSection:
    preset: str = "teacher_student"
    full_scale: bool = False
    use_csa: bool = True
    teacher: NetSpec = field(default_factory=NetSpec)
    # ``student: null`` trains the teacher alone.
    student: NetSpec | None = field(default_factory=NetSpec)

    def __post_init__(self):
        if self.preset not in PRESET_STACKS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESET_STACKS)}")
        if isinstance(self.teacher, dict):
            self.teacher = _strict(NetSpec, self.teacher, "network.teacher")
        if isinstance(self.student, dict):
            self.student = _strict(NetSpec, self.student, "network.student")


@dataclass
class EvalSection:
    split: str = "test"
    which: str = "student"
    snrs: list[float] = field(default_factory=lambda: [25.0, 30.0, 35.0, 40.0, 45.0])
    scenario: str = "lr_only"
    noise_seed: int = 0

    def __post_init__(self):
        if self.which not in ("teacher", "student"):
            raise ConfigError(f"eval.which must be teacher or student, got {self.which!r}")
        if self.scenario not in ("lr_only", "both"):
            raise ConfigError(f"eval.scenario must be lr_only or both, got {self.scenario!r}")
        if not self.snrs:
            raise ConfigError("eval.snrs is empty")
        self.snrs = [float(s) for s in self.snrs]


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: dict = field(default_factory=dict)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        train = dict(d.get("train") or {})
        for key in ("teacher_cfg", "student_cfg"):
            if key in train:
                raise ConfigError(f"train.{key} is derived from the network section")
        cfg = cls(
            _strict(DataSection, d.get("data"), "data"),
            _strict(NetworkSection, d.get("network"), "network"),
            train,
            _strict(EvalSection, d.get("eval"), "eval"),
        )
        cfg.train_config()  # validate train keys early
        return cfg

    @classmethod
    def load(cls, path: Path | None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({})
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        out = copy.deepcopy(self)
        out.data.seed = seed
        out.train["seed"] = seed
        return out

    def _net(self, base: NetworkConfig, spec: NetSpec) -> NetworkConfig:
        width = spec.width or base.width
        return network_config(
            spec.stacks or base.stacks,
            width,
            base.role,
            g_c=spec.g_c or base.g_c,
            heads=spec.h_a or base.csa.h_a,
            use_csa=self.network.use_csa,
            r=spec.r,
        )

    def train_config(self) -> TrainConfig:
        net = self.network
        base = preset(net.preset, net.full_scale)
        merged = base.to_dict()
        merged.update(self.train)
        merged["teacher_cfg"] = self._net(base.teacher_cfg, net.teacher).to_dict()
        merged["student_cfg"] = None if net.student is None else self._net(base.student_cfg, net.student).to_dict()
        return TrainConfig.from_dict(merged)

    def resolved(self) -> dict:
        """Fully expanded document; loading it reproduces the same run."""
        tc = self.train_config()
        d = {
            "data": asdict(self.data),
            "network": asdict(self.network),
            "train": tc.to_dict(),
            "eval": asdict(self.eval),
        }
        for key, role in (("teacher_cfg", "teacher"), ("student_cfg", "student")):
            nc = d["train"].pop(key)
            d["network"][role] = None if nc is None else {
                "stacks": nc["stacks"],
                "width": nc["width"],
                "g_c": nc["g_c"],
                "r": nc["csa"]["r"],
                "h_a": nc["csa"]["h_a"],
            }
        return d

    def write(self, path: Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.resolved(), sort_keys=False))
