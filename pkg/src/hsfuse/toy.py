"""Small fixed dataset and training setup for the overfit check, the pilot
record under ``benchmarks/`` and the acceptance suite."""

from __future__ import annotations

from hsfuse import datagen as dg
from hsfuse.distill import AugmentConfig, TrainConfig, network_config

TOY_SIZE = 32
TOY_SAMPLES = 8
TOY_MATERIALS = 3
TOY_LIBRARY_SEED = 5
TOY_WIDTH = 8
# r = width/2 = 4 at this width; one head keeps the per-head dim at 4 instead
# of the degenerate 1 that the default four heads would leave.
TOY_HEADS = 1


def toy_dataset(
    n: int = TOY_SAMPLES,
    size: int = TOY_SIZE,
    n_materials: int = TOY_MATERIALS,
    msi_variant: str = "bands4",
    library_seed: int = TOY_LIBRARY_SEED,
) -> list[dg.FusionSample]:
    """Clean procedural triplets on the 172-band grid. All samples draw their
    endmembers from one shared library so the set is a single scene family."""
    sd = dg.SpatialDegradation(3.0, 4)
    out = []
    for i in range(n):
        cube = dg.generate_procedural_cube(100 + i, size, size, 172, n_materials, library_seed=library_seed)
        sr = dg.build_spectral_response(cube.wavelengths, msi_variant)
        out.append(dg.make_sample(cube, sr, sd, sample_id=f"toy_{i:02d}"))
    return out


def toy_config(epochs: int = 200, seed: int = 0, use_csa: bool = True, student: bool = True) -> TrainConfig:
    """Width-8 teacher/student with the preset stack depths, batch 1 and a
    higher learning rate than the full recipe: the goal is to memorize eight
    tiles, not to generalize."""
    def net(stacks, role):
        return network_config(stacks, TOY_WIDTH, role, heads=TOY_HEADS, use_csa=use_csa)

    return TrainConfig(
        batch_size=1,
        epochs=epochs,
        lr=1e-3,
        seed=seed,
        augment=AugmentConfig(crop=None, rotate=False),
        teacher_cfg=net((6, 6, 4, 4), "teacher"),
        student_cfg=net((1, 4, 4, 1), "student") if student else None,
    )
