import numpy as np
import pytest

import ppcreg as pr


@pytest.fixture(scope="session")
def default_geom():
    return pr.ProjectionGeometry(
        sdd=1000.0,
        detector_size=(256, 256),
        pixel_spacing=(1.5, 1.5),
        principal_point=(128.0, 128.0),
    )


@pytest.fixture(scope="session")
def sphere_volume():
    return pr.make_phantom(pr.preset_spec("sphere"), seed=0)


@pytest.fixture(scope="session")
def sphere_pair_volume():
    return pr.make_phantom(pr.preset_spec("sphere_pair"), seed=0)


@pytest.fixture(scope="session")
def sphere_pair_surface(sphere_pair_volume):
    return pr.extract_surface_points(sphere_pair_volume, pr.CannyParams(max_points=4000))


@pytest.fixture(scope="session")
def vertebra_volume():
    return pr.make_phantom(pr.preset_spec("vertebra"), seed=7)


@pytest.fixture(scope="session")
def vertebra_surface(vertebra_volume):
    return pr.extract_surface_points(vertebra_volume, pr.CannyParams(max_points=3000))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    w = rng.normal(size=3)
    return pr.exp_se3(pr.MotionVector(w, np.zeros(3))).rotation


def random_transform(rng: np.random.Generator, t_scale: float = 100.0) -> pr.RigidTransform:
    return pr.RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3) * t_scale)
