import numpy as np
import pytest

from hvpl.config import TrainConfig


def tiny_config(**kw) -> TrainConfig:
    base = dict(d=16, q=4, n_heads=2, n_frames=2, height=8, width=8, scales=1, phi=2, lpf=4, lpv=4,
                l_g=1, l_m=1, l_d=1, split=[2, 1, 1], train_videos=4, test_videos=3, epochs=2, lr=1e-2,
                b=2, instances=[1, 2])
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny():
    return tiny_config()


_ACCEPTANCE: dict = {}


def record_acceptance(name: str, ok: bool, detail: str):
    _ACCEPTANCE[name] = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0])):
            terminalreporter.write_line(_ACCEPTANCE[name])
