"""Shared builders for the test suite."""

import numpy as np
import pytest

from ffrkit import geom, physics


def make_design(**overrides) -> geom.DesignVariables:
    base = dict(
        x_p=0.5,
        l_s=0.02,
        S_s=0.6,
        r_p=0.0018,
        T_r=0.7,
        l_v=0.05,
        Q=8.0e-7,
        template_id=0,
    )
    base.update(overrides)
    return geom.DesignVariables(**base)


def make_vessel(seed: int = 3, m: int = 128, **overrides) -> geom.VesselGeometry:
    dv = make_design(**overrides)
    template = geom.builtin_templates()[dv.template_id]
    return geom.generate_vessel(dv, template, seed=seed, m=m)


def uniform_tube(r: float = 0.002, length: float = 0.05, m: int = 128) -> geom.VesselGeometry:
    x = np.linspace(0.0, length, m)
    centerline = np.stack([x, np.zeros(m), np.zeros(m)])
    return geom.assemble_vessel(centerline, np.full(m, r))


@pytest.fixture
def tube():
    return uniform_tube()


@pytest.fixture
def stenosed_vessel():
    return make_vessel()


@pytest.fixture
def bc():
    return physics.BoundaryConditions(Q=1.0e-6)
