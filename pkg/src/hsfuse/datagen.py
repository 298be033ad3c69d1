"""Synthesis of (LR-HSI, HR-MSI, HR-HSI) training triplets.

A known high-resolution hyperspectral cube is degraded twice: spectrally, by a
box spectral-response matrix, into a multispectral image at full resolution;
and spatially, by a Gaussian point spread function followed by decimation, into
a low-resolution hyperspectral image. Optional additive white Gaussian noise
models sensor/transmission noise at a prescribed SNR.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from hsfuse._accel import filter_decimate, gaussian_kernel1d
from hsfuse.errors import DataError

AVIRIS_RANGE_NM = (400.0, 2500.0)
AVIRIS_RAW_BANDS = 224
# 1-indexed inclusive runs of low-quality bands dropped from the raw grid.
AVIRIS_DROPPED = ((1, 10), (104, 116), (152, 170), (215, 224))

MSI_RANGES_NM = {
    "bands4": ((450, 520), (520, 600), (630, 690), (770, 900)),
    "bands6": ((450, 520), (520, 600), (630, 690), (770, 900), (1550, 1750), (2090, 2350)),
}

MAX_REFLECTANCE = 1000.0


@dataclass
class HyperCube:
    data: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be (H, W, B), got shape {self.data.shape}")
        if self.wavelengths.shape != (self.data.shape[2],):
            raise ValueError(
                f"{self.wavelengths.size} wavelengths for {self.data.shape[2]} bands"
            )
        if self.wavelengths.size > 1 and np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "HyperCube":
        return HyperCube(data, self.wavelengths.copy())


@dataclass
class SpectralResponse:
    matrix: np.ndarray
    band_ranges: list[tuple[float, float]]

    @property
    def centers(self) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.band_ranges])


@dataclass
class SpatialDegradation:
    psf_sigma: float = 3.0
    blur_factor: int = 4
    kernel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.blur_factor < 1:
            raise ValueError(f"blur factor must be >= 1, got {self.blur_factor}")
        self.kernel1d = gaussian_kernel1d(self.psf_sigma)
        self.kernel = np.outer(self.kernel1d, self.kernel1d)

    @property
    def radius(self) -> int:
        return self.kernel1d.size // 2


@dataclass
class NoiseSpec:
    snr_db: float | Literal["clean"] = "clean"
    targets: Literal["lr_hsi_only", "both"] = "lr_hsi_only"
    rng_seed: int = 0

    def __post_init__(self):
        if self.targets not in ("lr_hsi_only", "both"):
            raise ValueError(f"unknown noise targets {self.targets!r}")
        if not self.is_clean and not math.isfinite(float(self.snr_db)):
            raise ValueError(f"SNR must be finite, got {self.snr_db}")

    @property
    def is_clean(self) -> bool:
        return isinstance(self.snr_db, str) and self.snr_db == "clean"


@dataclass
class FusionSample:
    lr_hsi: HyperCube
    hr_msi: HyperCube
    truth: HyperCube
    noise: NoiseSpec | None = None
    sample_id: str = ""

    def __post_init__(self):
        hh, wh, b = self.lr_hsi.shape
        H, W, bt = self.truth.shape
        if self.hr_msi.shape[:2] != (H, W):
            raise ValueError("HR-MSI and truth grids differ")
        if b != bt or not np.array_equal(self.lr_hsi.wavelengths, self.truth.wavelengths):
            raise ValueError("LR-HSI and truth band grids differ")
        if H % hh or W % wh or H // hh != W // wh:
            raise ValueError(f"LR grid {hh}x{wh} does not evenly divide HR grid {H}x{W}")

    @property
    def ratio(self) -> int:
        return self.truth.shape[0] // self.lr_hsi.shape[0]


def aviris_wavelength_grid() -> np.ndarray:
    lo, hi = AVIRIS_RANGE_NM
    grid = np.linspace(lo, hi, AVIRIS_RAW_BANDS)
    keep = np.ones(AVIRIS_RAW_BANDS, dtype=bool)
    for first, last in AVIRIS_DROPPED:
        keep[first - 1 : last] = False
    return grid[keep]


def _wavelengths_for(n_bands: int) -> np.ndarray:
    grid = aviris_wavelength_grid()
    if n_bands == grid.size:
        return grid
    return np.linspace(grid[0], grid[-1], n_bands)


def _smooth_field(rng: np.random.Generator, H: int, W: int, n: int, sigma: float) -> np.ndarray:
    noise = rng.standard_normal((H, W, n))
    field_ = filter_decimate(noise, gaussian_kernel1d(sigma))
    field_ -= field_.mean(axis=(0, 1), keepdims=True)
    std = field_.std(axis=(0, 1), keepdims=True)
    return field_ / np.where(std > 0, std, 1.0)


def _signatures(rng: np.random.Generator, wavelengths: np.ndarray, n: int) -> np.ndarray:
    # Smooth positive spectra: a sloped baseline plus a few Gaussian features.
    span = wavelengths[-1] - wavelengths[0] if wavelengths.size > 1 else 1.0
    u = (wavelengths - wavelengths[0]) / span
    sig = np.empty((n, wavelengths.size))
    for i in range(n):
        curve = rng.uniform(0.2, 0.6) + rng.uniform(-0.3, 0.3) * u
        for _ in range(rng.integers(2, 6)):
            center = rng.uniform(0.0, 1.0)
            width = rng.uniform(0.03, 0.2)
            curve = curve + rng.uniform(-0.3, 0.5) * np.exp(-0.5 * ((u - center) / width) ** 2)
        sig[i] = curve
    sig -= min(sig.min(), 0.0)
    peak = sig.max()
    return sig * (rng.uniform(0.6, 0.95) * MAX_REFLECTANCE / peak if peak > 0 else 0.0)


def generate_procedural_cube(
    seed: int, H: int, W: int, B: int, n_materials: int, library_seed: int | None = None
) -> HyperCube:
    """Linear-mixture cube: softmax abundances from smooth random fields times
    smooth random material signatures. Values stay in [0, 1000].

    With ``library_seed`` the signatures come from that seed instead, so cubes
    with different ``seed`` share one material library (as scenes from one
    sensor share vegetation, soil and water spectra).
    """
    for name, v in (("H", H), ("W", W), ("B", B), ("n_materials", n_materials)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    rng = np.random.default_rng(seed)
    wavelengths = _wavelengths_for(B)
    logits = 2.5 * _smooth_field(rng, H, W, n_materials, sigma=max(H, W) / 8.0)
    logits -= logits.max(axis=2, keepdims=True)
    abundance = np.exp(logits)
    abundance /= abundance.sum(axis=2, keepdims=True)
    lib_rng = rng if library_seed is None else np.random.default_rng(library_seed)
    signatures = _signatures(lib_rng, wavelengths, n_materials)
    data = np.clip(abundance @ signatures, 0.0, MAX_REFLECTANCE)
    return HyperCube(data, wavelengths)


def build_spectral_response(wavelengths: Sequence[float], variant: str = "bands4") -> SpectralResponse:
    if variant not in MSI_RANGES_NM:
        raise ValueError(f"unknown MSI variant {variant!r}; expected one of {sorted(MSI_RANGES_NM)}")
    wl = np.asarray(wavelengths, dtype=np.float64)
    ranges = [(float(lo), float(hi)) for lo, hi in MSI_RANGES_NM[variant]]
    mat = np.zeros((len(ranges), wl.size))
    for row, (lo, hi) in enumerate(ranges):
        inside = (wl >= lo) & (wl < hi)
        k = int(inside.sum())
        if k == 0:
            raise ValueError(f"no band centers fall in [{lo}, {hi}) nm")
        mat[row, inside] = 1.0 / k
    return SpectralResponse(mat, ranges)


def spectral_downsample(cube: HyperCube, sr: SpectralResponse) -> HyperCube:
    if cube.shape[2] != sr.matrix.shape[1]:
        raise ValueError(f"cube has {cube.shape[2]} bands, response expects {sr.matrix.shape[1]}")
    data = np.einsum("hwb,mb->hwm", cube.data.astype(np.float64), sr.matrix)
    return HyperCube(data, sr.centers)


def spatial_degrade(cube: HyperCube, sd: SpatialDegradation) -> HyperCube:
    H, W, _ = cube.shape
    f = sd.blur_factor
    if H % f or W % f:
        raise ValueError(f"{H}x{W} grid is not divisible by blur factor {f}")
    data = filter_decimate(cube.data, sd.kernel1d, step=f, offset=f // 2)
    return cube.with_data(data)


def awgn_sigma(data: np.ndarray, snr_db: float) -> float:
    power = float(np.mean(np.square(data, dtype=np.float64)))
    return math.sqrt(power / 10.0 ** (float(snr_db) / 10.0))


def inject_awgn(cube: HyperCube, spec: NoiseSpec | None, rng: np.random.Generator | None = None) -> HyperCube:
    """Add zero-mean Gaussian noise whose standard deviation is set from the
    clean cube's mean power and the requested SNR. No clipping."""
    if spec is None or spec.is_clean:
        return cube
    if not np.all(np.isfinite(cube.data)):
        raise ValueError("cannot add noise to a non-finite cube")
    sigma = awgn_sigma(cube.data, spec.snr_db)
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    return cube.with_data(cube.data + rng.normal(0.0, sigma, size=cube.shape))


def make_sample(
    source: HyperCube,
    sr: SpectralResponse,
    sd: SpatialDegradation,
    noise: NoiseSpec | None = None,
    sample_id: str = "",
) -> FusionSample:
    hr_msi = spectral_downsample(source, sr)
    lr_hsi = spatial_degrade(source, sd)
    if noise is not None and not noise.is_clean:
        # One stream: LR-HSI noise first, then HR-MSI noise when requested.
        rng = np.random.default_rng(noise.rng_seed)
        lr_hsi = inject_awgn(lr_hsi, noise, rng)
        if noise.targets == "both":
            hr_msi = inject_awgn(hr_msi, noise, rng)
    return FusionSample(lr_hsi, hr_msi, source, noise, sample_id)


def noisy_copy(sample: FusionSample, noise: NoiseSpec | None) -> FusionSample:
    """Re-noise the inputs of an already-synthesized (clean) sample."""
    if noise is None or noise.is_clean:
        return sample
    rng = np.random.default_rng(noise.rng_seed)
    lr = inject_awgn(sample.lr_hsi, noise, rng)
    msi = inject_awgn(sample.hr_msi, noise, rng) if noise.targets == "both" else sample.hr_msi
    return FusionSample(lr, msi, sample.truth, noise, sample.sample_id)


# -- on-disk dataset layout ---------------------------------------------------

_RAW_FILES = {"lr_hsi": "lr_hsi.raw", "hr_msi": "hr_msi.raw", "truth": "truth.raw"}


def _write_raw(path: Path, data: np.ndarray) -> None:
    # band-major: (B, H, W) in C order, little-endian float32
    np.ascontiguousarray(np.moveaxis(data, 2, 0), dtype="<f4").tofile(path)


def _read_raw(path: Path, shape: Sequence[int]) -> np.ndarray:
    H, W, B = shape
    flat = np.fromfile(path, dtype="<f4")
    if flat.size != H * W * B:
        raise DataError(f"{path}: expected {H * W * B} floats, found {flat.size}")
    return np.moveaxis(flat.reshape(B, H, W), 0, 2).astype(np.float64)


def save_sample(sample: FusionSample, directory: Path, seed: int, msi_variant: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, fname in _RAW_FILES.items():
        _write_raw(directory / fname, getattr(sample, key).data)
    noise = sample.noise
    meta = {
        "shape_lr": list(sample.lr_hsi.shape),
        "shape_msi": list(sample.hr_msi.shape),
        "shape_truth": list(sample.truth.shape),
        "wavelengths": sample.truth.wavelengths.tolist(),
        "msi_wavelengths": sample.hr_msi.wavelengths.tolist(),
        "snr_db": "clean" if noise is None or noise.is_clean else float(noise.snr_db),
        "noise_targets": None if noise is None else noise.targets,
        "seed": int(seed),
        "msi_variant": msi_variant,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_sample(directory: Path) -> FusionSample:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    wl = np.asarray(meta["wavelengths"])
    msi_wl = meta.get("msi_wavelengths")
    if msi_wl is None:
        msi_wl = build_spectral_response(wl, meta["msi_variant"]).centers
    lr = HyperCube(_read_raw(directory / _RAW_FILES["lr_hsi"], meta["shape_lr"]), wl)
    msi = HyperCube(_read_raw(directory / _RAW_FILES["hr_msi"], meta["shape_msi"]), msi_wl)
    truth = HyperCube(_read_raw(directory / _RAW_FILES["truth"], meta["shape_truth"]), wl)
    noise = None
    if meta.get("noise_targets") is not None:
        noise = NoiseSpec(meta["snr_db"], meta["noise_targets"], meta["seed"])
    return FusionSample(lr, msi, truth, noise, directory.name)


def load_split(root: Path, split: str) -> list[FusionSample]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DataError(f"dataset split not found: {split_dir}")
    return [load_sample(d) for d in sorted(split_dir.iterdir()) if d.is_dir()]
