import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmr_forge.phantom import PhantomConfig, generate_phantom
from cmr_forge.types import CineSequence

settings.register_profile("forge", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("forge")


def small_config(**kw) -> PhantomConfig:
    base = dict(grid=(64, 64), T=10, lv_center_px=(32.0, 32.0), cavity_radius_px=10.0,
                myocardium_thickness_px=4.0, body_semi_axes_px=(28.0, 30.0), noise_sigma=0.0)
    base.update(kw)
    return PhantomConfig(**base)


@pytest.fixture
def small_phantom() -> CineSequence:
    seq, _ = generate_phantom(small_config(noise_sigma=0.01, seed=3), "small")
    return seq


@pytest.fixture
def random_seq() -> CineSequence:
    g = np.random.default_rng(0)
    return CineSequence("rand", g.random((6, 16, 16)))


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
