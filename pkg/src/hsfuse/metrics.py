"""Evaluation metrics on (H, W, B) arrays: mean per-band PSNR with a per-band
ground-truth peak, SAM in degrees, and RMSE."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSNR_SATURATION_DB = 100.0


def _pair(pred, truth):
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    truth = np.asarray(getattr(truth, "data", truth), dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.ndim == 2:
        pred, truth = pred[..., None], truth[..., None]
    return pred, truth


@dataclass
class PsnrResult:
    mean_db: float
    per_band: np.ndarray
    saturated: list[int] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)


def psnr(pred, truth) -> PsnrResult:
    pred, truth = _pair(pred, truth)
    bands = truth.shape[-1]
    peak = np.square(truth).reshape(-1, bands).max(axis=0)
    mse = np.square(truth - pred).reshape(-1, bands).mean(axis=0)
    per_band = np.full(bands, np.nan)
    saturated, excluded = [], []
    for m in range(bands):
        if peak[m] == 0:
            excluded.append(m)
        elif mse[m] == 0:
            per_band[m] = PSNR_SATURATION_DB
            saturated.append(m)
        else:
            per_band[m] = 10.0 * math.log10(peak[m] / mse[m])
    mean = float(np.nanmean(per_band)) if len(excluded) < bands else float("nan")
    return PsnrResult(mean, per_band, saturated, excluded)


def sam_metric(pred, truth, eps: float = 1e-8, return_excluded: bool = False):
    """Mean spectral angle in degrees. Pixels where either spectrum is all
    zero carry no angle and are left out of the mean."""
    pred, truth = _pair(pred, truth)
    p = pred.reshape(-1, pred.shape[-1])
    t = truth.reshape(-1, truth.shape[-1])
    np_, nt = np.linalg.norm(p, axis=1), np.linalg.norm(t, axis=1)
    valid = (np_ > 0) & (nt > 0)
    # 2*atan2(|u - v|, |u + v|) on unit vectors; arccos loses ~1e-6 deg near 0
    u = p[valid] / np.maximum(np_[valid], eps)[:, None]
    v = t[valid] / np.maximum(nt[valid], eps)[:, None]
    angles = np.degrees(2.0 * np.arctan2(np.linalg.norm(u - v, axis=1), np.linalg.norm(u + v, axis=1)))
    value = float(angles.mean()) if angles.size else float("nan")
    if return_excluded:
        return value, int((~valid).sum())
    return value


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    bands = truth.shape[-1]
    per_band_sq = np.square(truth - pred).reshape(-1, bands).mean(axis=0)
    return float(math.sqrt(per_band_sq.mean()))


@dataclass
class EvalReport:
    sample_id: str
    psnr_db: float
    sam_deg: float
    rmse: float
    per_band_psnr: list[float]
    saturated_bands: list[int] = field(default_factory=list)
    excluded_bands: list[int] = field(default_factory=list)
    seconds: float = 0.0

    @classmethod
    def compute(cls, pred, truth, sample_id: str = "", seconds: float = 0.0) -> "EvalReport":
        p = psnr(pred, truth)
        return cls(
            sample_id,
            p.mean_db,
            sam_metric(pred, truth),
            rmse(pred, truth),
            p.per_band.tolist(),
            p.saturated,
            p.excluded,
            seconds,
        )


def mean_report(reports: list[EvalReport]) -> dict[str, float]:
    return {
        "psnr_db": float(np.mean([r.psnr_db for r in reports])),
        "sam_deg": float(np.mean([r.sam_deg for r in reports])),
        "rmse": float(np.mean([r.rmse for r in reports])),
    }


def write_reports(reports: list[EvalReport], csv_path: Path) -> None:
    """One CSV row per sample plus a JSON sidecar holding per-band PSNR."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "psnr_db", "sam_deg", "rmse"])
        for r in reports:
            writer.writerow([r.sample_id, f"{r.psnr_db:.6f}", f"{r.sam_deg:.6f}", f"{r.rmse:.6f}"])
    sidecar = {
        r.sample_id: {
            "per_band_psnr": [None if math.isnan(v) else v for v in r.per_band_psnr],
            "saturated_bands": r.saturated_bands,
            "excluded_bands": r.excluded_bands,
            "seconds": r.seconds,
        }
        for r in reports
    }
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))
