"""Shared fixtures: small problem instances sized for fast unit runs."""

import json
import os

import numpy as np
import pytest

from parastab.mesh import SpatialMesh, Field
from parastab.model import (Nonlinearity, ControlOperator, AdmissibleSet,
                            ProblemSpec)

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")


def config_path(name):
    return os.path.join(CONFIG_DIR, name + ".json")


def load_shipped(name):
    with open(config_path(name)) as fh:
        return json.load(fh)


def make_spec(n=12, dim=1, bc="neumann", nl=None, supports=None, eta=0.15,
              alpha=0.1, T=2.0, dt=0.02, y0_values=None, **overrides):
    """Small Schlogl-type instance unless overridden."""
    mesh = SpatialMesh(dim, n, bc=bc)
    if nl is None:
        nl = Nonlinearity.schlogl(-1.0, -0.6, 0.5)
    if supports is None:
        supports = [(0.2, 0.5), (0.6, 0.9)] if dim == 1 \
            else [((0.2, 0.5), (0.2, 0.5))]
    control = ControlOperator.from_supports(mesh, supports)
    if y0_values is None:
        x = mesh.coords().reshape(mesh.node_count, -1)
        y0_values = 0.2 * np.cos(np.pi * x[:, 0]) + 0.05
        if dim == 2:
            y0_values = y0_values * np.cos(np.pi * x[:, 1])
    y0 = Field(np.asarray(y0_values, dtype=float), mesh)
    return ProblemSpec(mesh=mesh, nonlinearity=nl, control=control,
                       admissible=AdmissibleSet(eta), y0=y0, alpha=alpha,
                       horizon=T, dt=dt, **overrides)


def scalar_spec(a=0.0, alpha=1.0, eta=np.inf, T=12.0, dt=2e-3, y0=1.0,
                **overrides):
    """Two-node Neumann surrogate whose constant mode is the scalar ODE
    y' = a*y + u with a unit control operator."""
    mesh = SpatialMesh(1, 2, bc="neumann")
    nl = Nonlinearity.quartic(0.0)
    control = ControlOperator.from_supports(mesh, [(0.0, 1.0)])
    field = Field(np.full(2, float(y0)), mesh)
    overrides.setdefault("operator_shift", float(a))
    # the 6000-step sweep floors the residual near 5e-8; 1e-6 converges
    overrides.setdefault("tol", 1e-6)
    overrides.setdefault("max_iter", 2000)
    return ProblemSpec(mesh=mesh, nonlinearity=nl, control=control,
                       admissible=AdmissibleSet(eta), y0=field, alpha=alpha,
                       horizon=T, dt=dt, **overrides)


MINI_CONFIG = {
    "model": {"variant": "custom_square"},
    "grid": {"dimension": 1, "n": 6, "bc": "neumann"},
    "control": {"m": 1, "supports": [[0.2, 0.8]], "eta": "inf"},
    "cost": {"alpha": 0.1},
    "horizon": {"T": 0.6, "dt": 0.03, "tail_tol": 0.6},
    "solver": {"tol": 5e-4, "max_iter": 1000, "warm_start": "zero",
               "operator_shift": -1.0},
    "initial_state": {"kind": "cosine", "amplitude": 0.15, "offset": 0.05},
    "experiment": {"tag": "mini"},
    "seed": 0,
}


@pytest.fixture
def mini_config(tmp_path):
    """Fast all-subcommand config written to a temp file."""
    path = tmp_path / "mini.json"
    path.write_text(json.dumps(MINI_CONFIG))
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
