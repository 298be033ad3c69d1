"""Online teacher-student training.

Both networks see the same (augmented) batch each step; the teacher minimizes
its reconstruction objective and the student adds distillation terms against
the teacher's fused features and output. One Adam optimizer per network,
driven by a shared per-step cosine-annealed learning rate.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from hsfuse.csa import CsaConfig
from hsfuse.datagen import FusionSample, HyperCube, NoiseSpec, noisy_copy
from hsfuse.dts import NetworkConfig, ParameterStore, count_parameters
from hsfuse.errors import ConfigError, DataError, DivergenceError
from hsfuse.losses import LossConfig, student_total, teacher_total
from hsfuse.metrics import EvalReport, mean_report
from hsfuse.model import FusionNet, batch_tensors, predict

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

HISTORY_COLUMNS = (
    "epoch", "loss_t", "loss_s",
    "val_psnr_t", "val_psnr_s", "val_sam_t", "val_sam_s", "val_rmse_t", "val_rmse_s",
    "lr",
)


@dataclass
class AugmentConfig:
    crop: int | None = None  # HR crop edge in pixels; None keeps the full tile
    rotate: bool = True


@dataclass
class ExtPhase:
    extra_epochs: int = 40
    lr: float = 5e-5


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 50
    lr: float = 1e-4
    ext: ExtPhase | None = None
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    teacher_cfg: NetworkConfig = field(default_factory=NetworkConfig)
    student_cfg: NetworkConfig | None = None
    data_scale: float = 1000.0
    teacher_warmup_epochs: int = 0
    train_noise_snrs: list[float] | None = None
    train_noise_targets: str = "lr_hsi_only"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.data_scale <= 0:
            raise ConfigError("lr and data_scale must be positive")
        if self.epochs < 0 or self.teacher_warmup_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")

    @property
    def total_epochs(self) -> int:
        return self.epochs + (self.ext.extra_epochs if self.ext else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["teacher_cfg"] = self.teacher_cfg.to_dict()
        d["student_cfg"] = None if self.student_cfg is None else self.student_cfg.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        try:
            if isinstance(d.get("ext"), dict):
                d["ext"] = ExtPhase(**d["ext"])
            if isinstance(d.get("augment"), dict):
                d["augment"] = AugmentConfig(**d["augment"])
            if isinstance(d.get("loss"), dict):
                d["loss"] = LossConfig(**d["loss"])
            for key in ("teacher_cfg", "student_cfg"):
                if isinstance(d.get(key), dict):
                    d[key] = NetworkConfig(**d[key])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# -- presets ------------------------------------------------------------------

PRESET_STACKS = {
    "teacher_student": ((6, 6, 4, 4), (1, 4, 4, 1)),
    "teacher_student_large": ((8, 8, 6, 6), (2, 4, 4, 4)),
    "large_ext": ((8, 8, 6, 6), (2, 4, 4, 4)),
}


def network_config(
    stacks, width: int, role: str, g_c: int = 4, heads: int = 4, use_csa: bool = True, r: int | None = None
) -> NetworkConfig:
    """Network config with the CSA reduced dim defaulting to half the width."""
    return NetworkConfig(tuple(stacks), width, g_c, CsaConfig(r or width // 2, heads), role, use_csa)


def preset(name: str, full_scale: bool = False) -> TrainConfig:
    """Named configurations. ``full_scale`` selects the 600-epoch, 64/32-channel
    setting; the default is the desk-scale variant (50 epochs, 16/8 channels)."""
    if name not in PRESET_STACKS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESET_STACKS)}")
    t_stacks, s_stacks = PRESET_STACKS[name]
    t_width, s_width = (64, 32) if full_scale else (16, 8)
    return TrainConfig(
        batch_size=4,
        epochs=600 if full_scale else 50,
        lr=1e-4,
        ext=ExtPhase(40, 5e-5) if name == "large_ext" else None,
        augment=AugmentConfig(crop=None, rotate=True),
        loss=LossConfig(),
        teacher_cfg=network_config(t_stacks, t_width, "teacher"),
        student_cfg=network_config(s_stacks, s_width, "student"),
    )


# -- augmentation -------------------------------------------------------------

def _rot(cube: HyperCube, k: int) -> HyperCube:
    return cube.with_data(np.ascontiguousarray(np.rot90(cube.data, k, axes=(0, 1))))


def augment_pair(
    sample: FusionSample,
    rng: np.random.Generator,
    crop: int | None = None,
    rotate: bool = True,
) -> FusionSample:
    """Same crop window (scaled between grids) and same quarter-turn for all
    three cubes."""
    ratio = sample.ratio
    H, W, _ = sample.truth.shape
    crop = crop or min(H, W)
    if crop % ratio:
        raise ValueError(f"crop {crop} not divisible by resolution ratio {ratio}")
    if crop > min(H, W):
        raise ValueError(f"crop {crop} larger than image {H}x{W}")
    c_lr = crop // ratio
    i = int(rng.integers(0, H // ratio - c_lr + 1))
    j = int(rng.integers(0, W // ratio - c_lr + 1))
    k = int(rng.integers(0, 4)) if rotate else 0

    def cut(cube: HyperCube, s: int) -> HyperCube:
        c = c_lr * s
        return _rot(cube.with_data(cube.data[i * s : i * s + c, j * s : j * s + c]), k)

    return FusionSample(
        cut(sample.lr_hsi, 1), cut(sample.hr_msi, ratio), cut(sample.truth, ratio), sample.noise, sample.sample_id
    )


def rotate_sample(sample: FusionSample, k: int) -> FusionSample:
    return FusionSample(_rot(sample.lr_hsi, k), _rot(sample.hr_msi, k), _rot(sample.truth, k), sample.noise, sample.sample_id)


# -- schedule -----------------------------------------------------------------

def cosine_lr(step: int, total: int, base: float, final: float = 0.0) -> float:
    if total <= 0:
        return base
    return final + 0.5 * (base - final) * (1.0 + math.cos(math.pi * step / total))


# -- evaluation ---------------------------------------------------------------

def evaluate(model: FusionNet, samples: list[FusionSample], scale: float) -> list[EvalReport]:
    reports = []
    for s in samples:
        t0 = time.perf_counter()
        pred = predict(model, s, scale)
        reports.append(EvalReport.compute(pred, s.truth, s.sample_id, time.perf_counter() - t0))
    return reports


# -- trainer ------------------------------------------------------------------

def _adam(model: FusionNet, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


@dataclass
class Checkpoint:
    teacher_params: ParameterStore
    student_params: ParameterStore | None
    optimizer: dict
    epoch: int
    rng_state: dict
    config: dict

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.teacher_params.save(directory / "teacher")
        if self.student_params is not None:
            self.student_params.save(directory / "student")
        scalars, moments = {}, ParameterStore(role="optimizer")
        for net, state in self.optimizer.items():
            scalars[net] = {"steps": {}}
            for name, st in state.items():
                scalars[net]["steps"][name] = st["step"]
                moments.add(f"{net}.{name}.exp_avg", st["exp_avg"])
                moments.add(f"{net}.{name}.exp_avg_sq", st["exp_avg_sq"])
        scalars["betas"] = list(ADAM_BETAS)
        scalars["eps"] = ADAM_EPS
        moments.save(directory / "optimizer_moments")
        (directory / "optimizer.json").write_text(json.dumps(scalars, indent=1))
        (directory / "rng.json").write_text(json.dumps(self.rng_state))
        (directory / "checkpoint.json").write_text(
            json.dumps({"epoch": self.epoch, "config": self.config}, indent=1)
        )

    @classmethod
    def load(cls, directory: Path) -> "Checkpoint":
        directory = Path(directory)
        meta_path = directory / "checkpoint.json"
        if not meta_path.is_file():
            raise DataError(f"not a checkpoint directory: {directory}")
        meta = json.loads(meta_path.read_text())
        teacher = ParameterStore.load(directory / "teacher")
        student = ParameterStore.load(directory / "student") if (directory / "student.json").is_file() else None
        scalars = json.loads((directory / "optimizer.json").read_text())
        moments = ParameterStore.load(directory / "optimizer_moments")
        optimizer = {}
        for net in ("teacher", "student"):
            if net not in scalars:
                continue
            optimizer[net] = {
                name: {
                    "step": step,
                    "exp_avg": moments[f"{net}.{name}.exp_avg"],
                    "exp_avg_sq": moments[f"{net}.{name}.exp_avg_sq"],
                }
                for name, step in scalars[net]["steps"].items()
            }
        rng_state = json.loads((directory / "rng.json").read_text())
        return cls(teacher, student, optimizer, meta["epoch"], rng_state, meta["config"])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)


def _opt_state(model: FusionNet, opt: torch.optim.Adam) -> dict:
    out = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if st:
            out[name] = {
                "step": float(st["step"]),
                "exp_avg": st["exp_avg"].detach().numpy().copy(),
                "exp_avg_sq": st["exp_avg_sq"].detach().numpy().copy(),
            }
    return out


def _load_opt_state(model: FusionNet, opt: torch.optim.Adam, state: dict) -> None:
    for name, p in model.named_parameters():
        if name in state:
            st = state[name]
            opt.state[p] = {
                "step": torch.tensor(float(st["step"])),
                "exp_avg": torch.from_numpy(np.array(st["exp_avg"], dtype=np.float32)),
                "exp_avg_sq": torch.from_numpy(np.array(st["exp_avg_sq"], dtype=np.float32)),
            }


def band_mean(samples: list[FusionSample], scale: float) -> torch.Tensor:
    means = np.mean([s.truth.data.reshape(-1, s.truth.shape[2]).mean(axis=0) for s in samples], axis=0)
    return torch.from_numpy(means / scale).float()


def build_models(cfg: TrainConfig, hsi_bands: int, msi_bands: int, head_bias: torch.Tensor | None = None):
    # Separate seeded generators keep the teacher independent of the student.
    teacher = FusionNet(hsi_bands, msi_bands, cfg.teacher_cfg, seed=cfg.seed * 2 + 1)
    student = None
    if cfg.student_cfg is not None:
        student = FusionNet(hsi_bands, msi_bands, cfg.student_cfg, seed=cfg.seed * 2 + 2)
    if head_bias is not None:
        for net in (teacher, student):
            if net is not None:
                net.init_head_bias(head_bias)
    return teacher, student


class Trainer:
    def __init__(
        self,
        cfg: TrainConfig,
        hsi_bands: int,
        msi_bands: int,
        checkpoint: Checkpoint | None = None,
        head_bias: torch.Tensor | None = None,
    ):
        self.cfg = cfg
        self.hsi_bands = hsi_bands
        self.msi_bands = msi_bands
        self.teacher, self.student = build_models(cfg, hsi_bands, msi_bands, head_bias)
        self.opt_t = _adam(self.teacher, cfg.lr)
        self.opt_s = _adam(self.student, cfg.lr) if self.student is not None else None
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        if checkpoint is not None:
            self.restore(checkpoint)

    # -- state ------------------------------------------------------------
    def checkpoint(self) -> Checkpoint:
        optimizer = {"teacher": _opt_state(self.teacher, self.opt_t)}
        if self.student is not None:
            optimizer["student"] = _opt_state(self.student, self.opt_s)
        return Checkpoint(
            ParameterStore.from_module(self.teacher, "teacher"),
            None if self.student is None else ParameterStore.from_module(self.student, "student"),
            optimizer,
            self.epoch,
            copy.deepcopy(self.rng.bit_generator.state),
            self.cfg.to_dict(),
        )

    def restore(self, ckpt: Checkpoint) -> None:
        ckpt.teacher_params.load_into(self.teacher)
        _load_opt_state(self.teacher, self.opt_t, ckpt.optimizer.get("teacher", {}))
        if self.student is not None:
            if ckpt.student_params is None:
                raise DataError("checkpoint has no student parameters")
            ckpt.student_params.load_into(self.student)
            _load_opt_state(self.student, self.opt_s, ckpt.optimizer.get("student", {}))
        self.rng.bit_generator.state = copy.deepcopy(ckpt.rng_state)
        self.epoch = int(ckpt.epoch)

    # -- schedule ---------------------------------------------------------
    def lr_at(self, epoch: int, step_in_epoch: int, steps_per_epoch: int) -> float:
        cfg = self.cfg
        if epoch < cfg.epochs:
            return cosine_lr(epoch * steps_per_epoch + step_in_epoch, cfg.epochs * steps_per_epoch, cfg.lr)
        ext = cfg.ext
        e = epoch - cfg.epochs
        return cosine_lr(e * steps_per_epoch + step_in_epoch, ext.extra_epochs * steps_per_epoch, ext.lr)

    # -- training ---------------------------------------------------------
    def _batches(self, data: list[FusionSample]):
        cfg = self.cfg
        order = self.rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            batch = []
            for idx in order[start : start + cfg.batch_size]:
                s = data[idx]
                if cfg.augment.crop or cfg.augment.rotate:
                    s = augment_pair(s, self.rng, cfg.augment.crop, cfg.augment.rotate)
                if cfg.train_noise_snrs:
                    snr = float(self.rng.choice(cfg.train_noise_snrs))
                    seed = int(self.rng.integers(2**31))
                    s = noisy_copy(s, NoiseSpec(snr, cfg.train_noise_targets, seed))
                batch.append(s)
            yield batch

    def step(self, batch: list[FusionSample], lr: float, train_student: bool = True):
        cfg = self.cfg
        x_h, x_m, y = batch_tensors(batch, cfg.data_scale)
        self.teacher.train()
        out_t = self.teacher(x_h, x_m)
        loss_t = teacher_total(out_t.y, y, out_t.z_fused, cfg.loss)
        total = loss_t
        loss_s = None
        if self.student is not None and train_student:
            self.student.train()
            out_s = self.student(x_h, x_m)
            loss_s = student_total(out_s.y, y, out_t.y, out_s.z_fused, out_t.z_fused, cfg.loss)
            total = total + loss_s
        if not torch.isfinite(total):
            raise DivergenceError(self.epoch, -1, float(total.detach()))
        opts = [self.opt_t] + ([self.opt_s] if loss_s is not None else [])
        for opt in opts:
            opt.zero_grad(set_to_none=True)
            for group in opt.param_groups:
                group["lr"] = lr
        total.backward()
        for opt in opts:
            opt.step()
        return loss_t.item(), (loss_s.item() if loss_s is not None else float("nan"))

    def run_epoch(self, data: list[FusionSample]) -> tuple[float, float, float]:
        steps_per_epoch = math.ceil(len(data) / self.cfg.batch_size)
        train_student = self.epoch >= self.cfg.teacher_warmup_epochs
        lt, ls = [], []
        lr = self.cfg.lr
        for i, batch in enumerate(self._batches(data)):
            lr = self.lr_at(self.epoch, i, steps_per_epoch)
            try:
                a, b = self.step(batch, lr, train_student)
            except DivergenceError as exc:
                raise DivergenceError(self.epoch, i, float("nan")) from exc
            lt.append(a)
            ls.append(b)
        self.epoch += 1
        return float(np.mean(lt)), float(np.mean(ls)), lr

    def validate(self, val: list[FusionSample]) -> dict[str, float]:
        out = {}
        for tag, model in (("t", self.teacher), ("s", self.student)):
            if model is None or not val:
                m = {"psnr_db": float("nan"), "sam_deg": float("nan"), "rmse": float("nan")}
            else:
                m = mean_report(evaluate(model, val, self.cfg.data_scale))
            out[f"val_psnr_{tag}"] = m["psnr_db"]
            out[f"val_sam_{tag}"] = m["sam_deg"]
            out[f"val_rmse_{tag}"] = m["rmse"]
        return out


def train_joint(
    dataset: list[FusionSample],
    cfg: TrainConfig,
    val: list[FusionSample] | None = None,
    checkpoint: Checkpoint | None = None,
    on_epoch: Callable[[Trainer, dict], None] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train teacher and student together for ``cfg.total_epochs`` epochs (or
    the remainder, when resuming). Returns the final checkpoint and one history
    row per epoch run."""
    if not dataset:
        raise DataError("training set is empty")
    first = dataset[0]
    trainer = Trainer(
        cfg, first.truth.shape[2], first.hr_msi.shape[2], checkpoint, band_mean(dataset, cfg.data_scale)
    )
    history: list[dict] = []
    val = val if val is not None else []
    while trainer.epoch < cfg.total_epochs:
        loss_t, loss_s, lr = trainer.run_epoch(dataset)
        row = {"epoch": trainer.epoch, "loss_t": loss_t, "loss_s": loss_s, **trainer.validate(val), "lr": lr}
        history.append(row)
        log.info(
            "epoch %d  loss_t %.5f  loss_s %.5f  psnr_t %.3f  psnr_s %.3f  lr %.2e",
            row["epoch"], loss_t, loss_s, row["val_psnr_t"], row["val_psnr_s"], lr,
        )
        if on_epoch is not None:
            on_epoch(trainer, row)
    return trainer.checkpoint(), history


def models_from_checkpoint(ckpt: Checkpoint, hsi_bands: int, msi_bands: int):
    cfg = ckpt.train_config()
    teacher, student = build_models(cfg, hsi_bands, msi_bands)
    ckpt.teacher_params.load_into(teacher)
    if student is not None and ckpt.student_params is not None:
        ckpt.student_params.load_into(student)
    return cfg, teacher, student


__all__ = [
    "AugmentConfig", "Checkpoint", "ExtPhase", "TrainConfig", "Trainer", "augment_pair",
    "count_parameters", "cosine_lr", "evaluate", "models_from_checkpoint", "preset", "train_joint",
]
