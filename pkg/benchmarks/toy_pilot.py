"""Pilot run of the toy overfit setup; writes the record the acceptance
thresholds are checked against.

    python benchmarks/toy_pilot.py --out benchmarks/toy_pilot.json
"""

from __future__ import annotations

import argparse
import json
import platform
import time
from pathlib import Path

import torch

from hsfuse.distill import train_joint
from hsfuse.toy import TOY_LIBRARY_SEED, TOY_MATERIALS, toy_config, toy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description="toy overfit pilot")
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--materials", type=int, default=TOY_MATERIALS)
    parser.add_argument("--msi", default="bands4", choices=["bands4", "bands6"])
    parser.add_argument("--every", type=int, default=10, help="history stride in the record")
    parser.add_argument("--out", type=Path, default=Path(__file__).with_name("toy_pilot.json"))
    args = parser.parse_args()

    torch.set_num_threads(1)
    data = toy_dataset(n_materials=args.materials, msi_variant=args.msi)
    cfg = toy_config(args.epochs)
    t0 = time.perf_counter()

    def progress(trainer, row):
        if row["epoch"] % args.every == 0:
            print(
                f"epoch {row['epoch']:4d}  teacher {row['val_psnr_t']:.2f} dB {row['val_sam_t']:.2f} deg  "
                f"student {row['val_psnr_s']:.2f} dB  {time.perf_counter() - t0:.0f} s",
                flush=True,
            )

    _, history = train_joint(data, cfg, val=data, on_epoch=progress)
    elapsed = time.perf_counter() - t0
    last = history[-1]
    record = {
        "dataset": {
            "samples": len(data),
            "hr_size": data[0].truth.shape[0],
            "bands": data[0].truth.shape[2],
            "msi_variant": args.msi,
            "n_materials": args.materials,
            "library_seed": TOY_LIBRARY_SEED,
        },
        "train_config": cfg.to_dict(),
        "final": {k: last[k] for k in ("epoch", "val_psnr_t", "val_sam_t", "val_psnr_s", "val_sam_s")},
        "seconds": round(elapsed, 1),
        "threads": torch.get_num_threads(),
        "machine": platform.machine(),
        "torch": torch.__version__,
        "history": [
            {k: (float(f"{v:.6g}") if isinstance(v, float) else v) for k, v in row.items()}
            for row in history
            if row["epoch"] % args.every == 0 or row["epoch"] == last["epoch"]
        ],
    }
    args.out.write_text(json.dumps(record, indent=1))
    print(json.dumps(record["final"], indent=1), f"\n{elapsed / 60:.1f} min -> {args.out}")


if __name__ == "__main__":
    main()
