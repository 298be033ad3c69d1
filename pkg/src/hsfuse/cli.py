"""Command-line entry point: ``hsfuse <command> [options]``.

Commands
--------
synth          generate a procedural dataset (train/val/test splits)
train          joint teacher-student training
eval           per-sample metrics of a trained model on one split
robustness     metrics under test-time AWGN over an SNR sweep
ablate         loss-weight, CLRA-depth and CSA on/off studies
export-weights write one network's parameters as a standalone archive
inspect        summarize a dataset, sample or checkpoint directory

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from hsfuse import datagen as dg
from hsfuse.config import ExperimentConfig
from hsfuse.distill import HISTORY_COLUMNS, Checkpoint, TrainConfig, Trainer, band_mean, models_from_checkpoint
from hsfuse.dts import count_parameters
from hsfuse.errors import ConfigError, DataError, DivergenceError
from hsfuse.metrics import EvalReport, mean_report, write_reports
from hsfuse.model import FusionNet, predict

log = logging.getLogger("hsfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
SPLITS = ("train", "val", "test")
SCENARIO_TARGETS = {"lr_only": "lr_hsi_only", "both": "both"}

CLRA_DEPTHS = ((1, 3, 3, 3), (2, 2, 2, 2), (2, 3, 3, 2), (1, 4, 4, 1))


# -- helpers ------------------------------------------------------------------

def _prepare_out(out: Path, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sample_seed(base: int, split: int, index: int) -> int:
    return int(np.random.SeedSequence([base, split, index]).generate_state(1)[0])


def _csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def tree_digest(root: Path) -> str:
    """SHA-256 over relative paths and file bytes under ``root``."""
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _load_split(data_dir: Path, split: str) -> list[dg.FusionSample]:
    samples = dg.load_split(data_dir, split)
    if not samples:
        raise DataError(f"split {split!r} in {data_dir} is empty")
    return samples


def _evaluate(model: FusionNet, samples, scale: float, workers: int) -> list[EvalReport]:
    def one(s):
        t0 = time.perf_counter()
        pred = predict(model, s, scale)
        return EvalReport.compute(pred, s.truth, s.sample_id, time.perf_counter() - t0)

    if workers <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, samples))


def _model(ckpt_dir: Path, data_dir: Path, which: str):
    ckpt = Checkpoint.load(ckpt_dir)
    probe = _probe_bands(data_dir)
    cfg, teacher, student = models_from_checkpoint(ckpt, *probe)
    model = teacher if which == "teacher" else student
    if model is None:
        raise ConfigError(f"checkpoint {ckpt_dir} has no {which} network")
    return cfg, model


def _probe_bands(data_dir: Path) -> tuple[int, int]:
    for split in SPLITS:
        d = Path(data_dir) / split
        if d.is_dir():
            for s in sorted(d.iterdir()):
                if (s / "meta.json").is_file():
                    meta = json.loads((s / "meta.json").read_text())
                    return meta["shape_truth"][2], meta["shape_msi"][2]
    raise DataError(f"no samples found under {data_dir}")


# -- synth --------------------------------------------------------------------

def synthesize(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict[str, int]:
    d = cfg.data
    sd = dg.SpatialDegradation(d.psf_sigma, d.blur_factor)
    counts = {"train": d.n_train, "val": d.n_val, "test": d.n_test}
    jobs = [(si, split, i) for si, split in enumerate(SPLITS) for i in range(counts[split])]

    def one(job):
        si, split, i = job
        seed = _sample_seed(d.seed, si, i)
        cube = dg.generate_procedural_cube(seed, d.height, d.width, d.bands, d.n_materials, d.library_seed)
        sr = dg.build_spectral_response(cube.wavelengths, d.msi_variant)
        sample = dg.make_sample(cube, sr, sd, sample_id=f"{split}_{i:04d}")
        dg.save_sample(sample, out / split / sample.sample_id, seed, d.msi_variant)

    if workers <= 1:
        for job in jobs:
            one(job)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(one, jobs))
    return counts


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    out = _prepare_out(args.out, args.force)
    counts = synthesize(cfg, out, args.workers)
    cfg.write(out / "config.yaml")
    for split, n in counts.items():
        print(f"{split}: {n}")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _read_history(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        return [{k: float(v) if k != "epoch" else int(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write_history(path: Path, rows: list[dict]) -> None:
    _csv(path, HISTORY_COLUMNS, ([_fmt(r[c]) if c != "epoch" else r[c] for c in HISTORY_COLUMNS] for r in rows))


def run_training(cfg: TrainConfig, train, val, out: Path, resume: Checkpoint | None = None) -> list[dict]:
    """Train with per-epoch history, best (by validation PSNR of the student,
    or the teacher when training alone) and final checkpoints under ``out``."""
    first = train[0]
    trainer = Trainer(cfg, first.truth.shape[2], first.hr_msi.shape[2], resume, band_mean(train, cfg.data_scale))
    history = _read_history(out / "history.csv") if resume is not None else []
    history = [r for r in history if r["epoch"] <= trainer.epoch]
    key = "val_psnr_s" if trainer.student is not None else "val_psnr_t"
    best = max((r[key] for r in history if not math.isnan(r[key])), default=-math.inf)
    while trainer.epoch < cfg.total_epochs:
        loss_t, loss_s, lr = trainer.run_epoch(train)
        row = {"epoch": trainer.epoch, "loss_t": loss_t, "loss_s": loss_s, **trainer.validate(val), "lr": lr}
        history.append(row)
        log.info("epoch %d  loss_t %.5f  loss_s %.5f  %s %.3f", row["epoch"], loss_t, loss_s, key, row[key])
        _write_history(out / "history.csv", history)
        score = row[key] if val else -row["loss_s" if trainer.student is not None else "loss_t"]
        if score > best or not (out / "best").is_dir():
            best = score
            trainer.checkpoint().save(out / "best")
    trainer.checkpoint().save(out / "final")
    _write_history(out / "history.csv", history)
    return history


def cmd_train(args, cfg: ExperimentConfig) -> int:
    if args.preset:
        cfg.network.preset = args.preset
    if args.epochs is not None:
        cfg.train["epochs"] = args.epochs
    if args.train_noise:
        cfg.train["train_noise_snrs"] = [float(s) for s in args.train_noise.split(",")]
        cfg.train["train_noise_targets"] = SCENARIO_TARGETS[cfg.eval.scenario]
    resume = None
    if args.resume:
        resume = Checkpoint.load(args.resume)
        tc = resume.train_config()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.epochs is not None:
            tc.epochs = args.epochs
    else:
        tc = cfg.train_config()
        out = _prepare_out(args.out, args.force)
        cfg.write(out / "config.yaml")
    train = _load_split(args.data, "train")
    val = dg.load_split(args.data, "val") if (Path(args.data) / "val").is_dir() else []
    run_training(tc, train, val, out, resume)
    (out / "train_config.json").write_text(json.dumps(tc.to_dict(), indent=1))
    print(f"checkpoints: {out / 'final'}  {out / 'best'}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args, cfg: ExperimentConfig) -> int:
    which = args.which or cfg.eval.which
    split = args.split or cfg.eval.split
    tc, model = _model(args.checkpoint, args.data, which)
    samples = _load_split(args.data, split)
    out = _prepare_out(args.out, args.force)
    reports = _evaluate(model, samples, tc.data_scale, args.workers)
    write_reports(reports, out / "eval.csv")
    summary = {
        "which": which,
        "split": split,
        "parameters": count_parameters(model),
        **mean_report(reports),
        "seconds_per_sample": float(np.mean([r.seconds for r in reports])),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    cfg.write(out / "config.yaml")
    print(json.dumps(summary, indent=1))
    return EXIT_OK


# -- robustness ---------------------------------------------------------------

def noise_sweep(model, samples, scale, snrs, scenario, seed=0, workers=1) -> dict:
    """Mean PSNR/SAM/RMSE per SNR (dB) plus the clean column."""
    targets = SCENARIO_TARGETS[scenario]
    columns = {}
    for level in [*snrs, "clean"]:
        noisy = [
            s if level == "clean" else dg.noisy_copy(s, dg.NoiseSpec(level, targets, _sample_seed(seed, 7, i)))
            for i, s in enumerate(samples)
        ]
        columns[level] = mean_report(_evaluate(model, noisy, scale, workers))
    return columns


def write_sweep(columns: dict, out: Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    levels = list(columns)
    header = ["metric", *[str(int(l)) if isinstance(l, float) and l.is_integer() else str(l) for l in levels], "average"]
    rows = []
    for metric in ("psnr_db", "sam_deg", "rmse"):
        vals = [columns[l][metric] for l in levels]
        rows.append([metric, *(_fmt(v) for v in vals), _fmt(float(np.mean(vals)))])
    _csv(out / "robustness.csv", header, rows)
    snrs = [l for l in levels if l != "clean"]
    for metric, label in (("psnr_db", "PSNR (dB)"), ("sam_deg", "SAM (deg)")):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(snrs, [columns[l][metric] for l in snrs], marker="o", label="noisy")
        if "clean" in columns:
            ax.axhline(columns["clean"][metric], ls="--", color="gray", label="clean")
        ax.set_xlabel("input SNR (dB)")
        ax.set_ylabel(label)
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"{metric.split('_')[0]}_vs_snr.png", dpi=120)
        plt.close(fig)


def cmd_robustness(args, cfg: ExperimentConfig) -> int:
    which = args.which or cfg.eval.which
    scenario = args.scenario or cfg.eval.scenario
    snrs = [float(s) for s in args.snrs.split(",")] if args.snrs else cfg.eval.snrs
    if not snrs:
        raise ConfigError("empty SNR list")
    tc, model = _model(args.checkpoint, args.data, which)
    samples = _load_split(args.data, args.split or cfg.eval.split)
    out = _prepare_out(args.out, args.force)
    columns = noise_sweep(model, samples, tc.data_scale, snrs, scenario, cfg.eval.noise_seed, args.workers)
    write_sweep(columns, out, f"{which}, {scenario}")
    cfg.write(out / "config.yaml")
    print((out / "robustness.csv").read_text(), end="")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------

def ablation_cells(study: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    def variant(**loss) -> TrainConfig:
        d = base.to_dict()
        d["loss"] = {**d["loss"], **loss}
        return TrainConfig.from_dict(d)

    if study == "loss_weights":
        cells = [("naive", variant(lambda1=0.0, lambda2=0.0, lambda3=0.0, lambda4=0.1))]
        for i in range(1, 5):
            cells.append((f"lambda{i}=0.5", variant(**{f"lambda{i}": 0.5})))
        cells.append(("proposed", variant(**{f"lambda{i}": 0.1 for i in range(1, 5)})))
        return cells
    if study == "clra_depth":
        if base.student_cfg is None:
            raise ConfigError("clra_depth varies the student; the network section has no student")
        cells = []
        for stacks in CLRA_DEPTHS:
            d = base.to_dict()
            d["student_cfg"]["stacks"] = list(stacks)
            cells.append((",".join(map(str, stacks)), TrainConfig.from_dict(d)))
        return cells
    if study == "csa_onoff":
        cells = []
        for name, on in (("csa", True), ("naive_ensemble", False)):
            d = base.to_dict()
            for key in ("teacher_cfg", "student_cfg"):
                if d[key] is not None:
                    d[key]["use_csa"] = on
            cells.append((name, TrainConfig.from_dict(d)))
        return cells
    raise ConfigError(f"unknown study {study!r}; expected loss_weights, clra_depth or csa_onoff")


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    base = cfg.train_config()
    cells = ablation_cells(args.study, base)
    train = _load_split(args.data, "train")
    val = dg.load_split(args.data, "val") if (Path(args.data) / "val").is_dir() else []
    test = _load_split(args.data, cfg.eval.split)
    out = _prepare_out(args.out, args.force)
    cfg.write(out / "config.yaml")
    snr_levels = [*cfg.eval.snrs, "clean"] if args.study == "csa_onoff" else ["clean"]
    rows = []
    for name, tc in cells:
        cell_dir = out / "runs" / name.replace(",", "_").replace("=", "_")
        cell_dir.mkdir(parents=True)
        run_training(tc, train, val, cell_dir)
        _, teacher, student = models_from_checkpoint(Checkpoint.load(cell_dir / "final"), *_probe_bands(args.data))
        for role, model in (("teacher", teacher), ("student", student)):
            if model is None:
                continue
            columns = noise_sweep(model, test, tc.data_scale, [l for l in snr_levels if l != "clean"],
                                  cfg.eval.scenario, cfg.eval.noise_seed, args.workers)
            for level, m in columns.items():
                rows.append([args.study, name, role, level, count_parameters(model),
                             _fmt(m["psnr_db"]), _fmt(m["sam_deg"]), _fmt(m["rmse"])])
    _csv(out / "ablation.csv", ["study", "cell", "model", "snr_db", "parameters", "psnr_db", "sam_deg", "rmse"], rows)
    print((out / "ablation.csv").read_text(), end="")
    return EXIT_OK


# -- export / inspect ---------------------------------------------------------

def cmd_export(args, cfg: ExperimentConfig) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    store = ckpt.teacher_params if args.which == "teacher" else ckpt.student_params
    if store is None:
        raise ConfigError(f"checkpoint has no {args.which} network")
    out = _prepare_out(args.out, args.force)
    store.save(out / args.which)
    net_key = "teacher_cfg" if args.which == "teacher" else "student_cfg"
    (out / "network.json").write_text(json.dumps(ckpt.config[net_key], indent=1))
    print(f"{args.which}: {len(store)} tensors, {store.count()} parameters -> {out}")
    return EXIT_OK


def inspect_path(path: Path) -> dict:
    path = Path(path)
    if (path / "checkpoint.json").is_file():
        ck = Checkpoint.load(path)
        info = {"kind": "checkpoint", "epoch": ck.epoch, "teacher_parameters": ck.teacher_params.count()}
        if ck.student_params is not None:
            info["student_parameters"] = ck.student_params.count()
        info["config"] = ck.config
        return info
    if (path / "meta.json").is_file():
        return {"kind": "sample", **json.loads((path / "meta.json").read_text())}
    splits = {s: sorted(p.name for p in (path / s).iterdir() if p.is_dir()) for s in SPLITS if (path / s).is_dir()}
    if splits:
        info = {"kind": "dataset", "counts": {s: len(v) for s, v in splits.items()}}
        for s, names in splits.items():
            if names:
                meta = json.loads((path / s / names[0] / "meta.json").read_text())
                info.update({k: meta[k] for k in ("shape_lr", "shape_msi", "shape_truth", "msi_variant")})
                break
        return info
    raise DataError(f"{path} is not a dataset, sample or checkpoint directory")


def cmd_inspect(args, cfg: ExperimentConfig) -> int:
    print(json.dumps(inspect_path(args.path), indent=1, default=str))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", type=Path, help="experiment YAML (data/network/train/eval sections)")
    glob.add_argument("--seed", type=int, help="override data.seed and train.seed")
    glob.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    glob.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    glob.add_argument("--workers", type=int, default=1, help="worker threads for synthesis/evaluation")
    glob.add_argument("-v", "--verbose", action="store_true")

    # Global flags attach to every subcommand (``hsfuse train --seed 3 ...``).
    p = argparse.ArgumentParser(prog="hsfuse", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[glob], help="generate a procedural dataset")

    t = sub.add_parser("train", parents=[glob], help="joint teacher-student training")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--preset", choices=["teacher_student", "teacher_student_large", "large_ext"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", type=Path, help="checkpoint directory to continue from")
    t.add_argument("--train-noise", help="comma-separated SNRs (dB) sampled per training item")

    for name, helptext in (("eval", "evaluate a checkpoint"), ("robustness", "test-time noise sweep")):
        e = sub.add_parser(name, parents=[glob], help=helptext)
        e.add_argument("--checkpoint", type=Path, required=True)
        e.add_argument("--data", type=Path, required=True)
        e.add_argument("--which", choices=["teacher", "student"])
        e.add_argument("--split", choices=SPLITS)
        if name == "robustness":
            e.add_argument("--snrs", help="comma-separated SNRs in dB (default 25,30,35,40,45)")
            e.add_argument("--scenario", choices=["lr_only", "both"])

    a = sub.add_parser("ablate", parents=[glob], help="run an ablation study")
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--study", required=True, help="loss_weights, clra_depth or csa_onoff")

    x = sub.add_parser("export-weights", parents=[glob], help="export one network's parameters")
    x.add_argument("--checkpoint", type=Path, required=True)
    x.add_argument("--which", choices=["teacher", "student"], default="student")

    i = sub.add_parser("inspect", parents=[glob], help="summarize a dataset/sample/checkpoint")
    i.add_argument("path", type=Path)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
    "ablate": cmd_ablate,
    "export-weights": cmd_export,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s: %(message)s"
    )
    try:
        cfg = ExperimentConfig.load(args.config).with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
