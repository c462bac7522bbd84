"""Shared fixtures: canonical models used across the suite."""

from __future__ import annotations

import pytest

from lsvsmile import build_model


def make_model(sigma=None, alpha=None, mu=None, **model):
    cfg = {
        "sigma": sigma or {"kind": "constant", "value": 1.0},
        "alpha": alpha or {"kind": "power", "nu": 1.0, "p": 1.0},
        "mu": mu or {"kind": "zero"},
        "model": {"rho": 0.0, "lambda": 0.0, "x0": 0.0, "y0": 0.2, **model},
    }
    return build_model(cfg)


@pytest.fixture(scope="session")
def sabr():
    """Log-normal SABR, y0 = 0.2, unit vol-of-vol: the paper-table setup."""
    return make_model()


@pytest.fixture(scope="session")
def sabr_jump():
    """SABR with a jump-to-default intensity."""
    return make_model(**{"lambda": 0.02})


@pytest.fixture(scope="session")
def drift_model():
    """SABR diffusion with a rational downward drift (mu0 = 0, kappa = 0.5)."""
    return make_model(mu={"kind": "rational", "mu0": 0.0, "kappa": 0.5})


@pytest.fixture(scope="session")
def skewed_model():
    """Bounded logistic local vol over a sub-linear vol-of-vol power."""
    return make_model(
        sigma={"kind": "logistic", "lo": 0.8, "hi": 1.2, "slope": 1.5, "center": 0.1},
        alpha={"kind": "power", "nu": 1.0, "p": 0.8},
        mu={"kind": "rational", "mu0": 0.0, "kappa": 0.3},
        y0=0.25)


@pytest.fixture(scope="session")
def rho_model():
    """Correlated SABR (rho = -0.5) with the structural gauge drift, c = 0."""
    return make_model(mu={"kind": "gauge", "c": 0.0}, rho=-0.5)


SABR_CONFIG_TEXT = """\
[sigma]
kind = constant
value = 1.0

[alpha]
kind = power
nu = 1.0
p = 1.0

[mu]
kind = zero

[model]
rho = 0.0
lambda = 0.0
x0 = 0.0
y0 = 0.2
"""


@pytest.fixture()
def sabr_config_file(tmp_path):
    path = tmp_path / "sabr.cfg"
    path.write_text(SABR_CONFIG_TEXT)
    return str(path)
