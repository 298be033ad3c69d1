import numpy as np
import pytest

from hsfuse import datagen as dg
from hsfuse.distill import AugmentConfig, TrainConfig, network_config


def tiny_samples(n=4, hr=8, bands=12, msi=3, seed=0, materials=2):
    """Small procedural triplets with an equal-width box response."""
    sd = dg.SpatialDegradation(1.0, 4)
    rows = np.zeros((msi, bands))
    for i, chunk in enumerate(np.array_split(np.arange(bands), msi)):
        rows[i, chunk] = 1.0 / len(chunk)
    sr = dg.SpectralResponse(rows, [(float(i), float(i + 1)) for i in range(msi)])
    out = []
    for i in range(n):
        cube = dg.generate_procedural_cube(seed * 100 + i, hr, hr, bands, materials, library_seed=seed)
        out.append(dg.make_sample(cube, sr, sd, sample_id=f"t{i}"))
    return out


def tiny_config(**kw) -> TrainConfig:
    base = dict(
        batch_size=2,
        epochs=2,
        lr=1e-3,
        seed=0,
        augment=AugmentConfig(crop=None, rotate=True),
        teacher_cfg=network_config((1, 1, 1, 1), 4, "teacher", g_c=2, heads=2),
        student_cfg=network_config((1, 1, 1, 1), 4, "student", g_c=2, heads=2),
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny():
    return tiny_samples()


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Record one acceptance line, print it, then assert it. A criterion with
    a documented, analysed shortfall passes ``known_failure`` and is reported
    as xfail instead of an error; its line still reads FAIL."""

    def record(ok: bool, detail: str, known_failure: str | None = None):
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, []).append(line)
        with capsys.disabled():
            print("\n" + line)
        if not ok and known_failure:
            pytest.xfail(f"{line} ({known_failure})")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
