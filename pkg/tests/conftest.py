"""Shared fixtures for the test suite.

The synthetic twin and its registered sample sets are expensive to
build, so they live at session scope and are shared by the recovery and
acceptance tests.
"""

from __future__ import annotations

import numpy as np
import pytest

from monocal import registration as reg
from monocal.activation import Group
from monocal.geometry import SurfaceTag, build_slab_mesh
from monocal.solver import StimulusPlan
from monocal.twin import build_twin, write_twin

# Conductivity triple (mS/cm) used by the recovery studies. It sits off
# the ray the coupled update explores from the box midpoint, so the
# studies measure what the search can and cannot identify rather than
# replaying a fixed point.
STAR_SIGMA = (1.23, 0.25, 0.07)


@pytest.fixture(scope="session")
def unit_cube():
    return build_slab_mesh((1.0, 1.0, 1.0), 1.0)


@pytest.fixture(scope="session")
def small_slab():
    """Thin 4 x 2 x 1 element slab for cheap assembly tests."""
    return build_slab_mesh((0.2, 0.1, 0.05), 0.05)


@pytest.fixture(scope="session")
def twin_star():
    """Synthetic twin paced at the recovery-study conductivities."""
    return build_twin(sigma=STAR_SIGMA)


@pytest.fixture(scope="session")
def twin_star_files(twin_star, tmp_path_factory):
    out = tmp_path_factory.mktemp("twin_star")
    return write_twin(twin_star, out)


def register_pipeline(mesh, measurements_path, references_path):
    """Register a device-frame CSV onto a mesh and build grouped samples.

    Mirrors the register stage of the command line: estimate the rigid
    placement from the landmark pairs, move the cloud, project vein
    points onto the epicardium and septal points onto the endocardium,
    then split into pacing inputs, calibration and validation groups.
    Returns (inputs, cal, val, stimulus_plan).
    """
    cloud = reg.read_measurements(measurements_path)
    source, target = reg.read_reference_pairs(references_path)
    transform = reg.rigid_from_three_pairs(source, target)
    moved = reg.RawCloud(points=transform.apply(cloud.points),
                         taus=cloud.taus, sites=cloud.sites,
                         order=cloud.order)
    is_vein = np.array([s.value == "vein" for s in cloud.sites])
    vein, _ = reg.nns_project(moved.subset(is_vein), mesh,
                              int(SurfaceTag.EPI))
    sept, _ = reg.nns_project(moved.subset(~is_vein), mesh,
                              int(SurfaceTag.ENDO))
    merged = reg.RawCloud(
        points=np.vstack([sept.points, vein.points]),
        taus=np.concatenate([sept.taus, vein.taus]),
        sites=list(sept.sites) + list(vein.sites),
        order=np.concatenate([sept.order, vein.order]))
    samples = reg.build_samples(merged)
    inputs = [s for s in samples if s.group is Group.INPUT]
    cal = [s for s in samples if s.group is Group.CAL_I]
    val = [s for s in samples if s.group is Group.VAL_II]
    plan = StimulusPlan(points=np.array([s.location for s in inputs]),
                        onsets=np.array([s.tau for s in inputs]))
    return inputs, cal, val, plan


@pytest.fixture(scope="session")
def star_problem(twin_star, twin_star_files):
    """Registered calibration problem on the twin: (cal, val, plan)."""
    _, cal, val, plan = register_pipeline(
        twin_star.mesh, twin_star_files["measurements"],
        twin_star_files["references"])
    return cal, val, plan
