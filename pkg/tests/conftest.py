import os
from pathlib import Path

import numpy as np
import pytest

from nsgeo.kernels import CovarianceSpec, MaternKernel, PointSet

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = ROOT / "data"

FORMS = ("stationary", "product", "partial_sum", "full_sum")


def random_spec(rng, form, p=2, kappas=(0.5, 1.5, 2.5), sigma2=None):
    p = 0 if form == "stationary" else p
    names = tuple(f"c{j}" for j in range(p))
    kern = lambda: MaternKernel(float(rng.uniform(0.05, 1.5)), float(rng.choice(kappas)))  # noqa: E731
    s2 = float(rng.uniform(0.2, 2.0)) if sigma2 is None else sigma2
    return CovarianceSpec(form, kern(), tuple((n, kern()) for n in names), s2)


def random_points(rng, n, names):
    return PointSet(rng.uniform(0, 1, (n, 2)), rng.uniform(-1, 1, (n, len(names))), tuple(names))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    os.environ.setdefault("OMP_NUM_THREADS", "1")


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE: dict = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    """Store one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
