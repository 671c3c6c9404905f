import numpy as np
import pytest

from volseg.base import Geometry, Mask, Volume
from volseg.phantom import PhantomSpec, generate


# a phantom small enough for end-to-end CLI runs
SMALL_PHANTOM = dict(body_semi_axes_mm=(20.0, 18.0, 24.0),
                     fat_thickness_mm=4.0,
                     dixon_shape=(40, 40, 32),
                     translation_mm=(3.0, 0.0, 0.0))


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running performance checks')


def make_geometry(shape, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return Geometry.from_spacing(shape, spacing, origin=origin)


def make_mask(voxels, spacing=(1.0, 1.0, 1.0)):
    voxels = np.asarray(voxels, dtype=bool)
    return Mask(voxels=voxels, geometry=make_geometry(voxels.shape, spacing))


def make_volume(voxels, spacing=(1.0, 1.0, 1.0)):
    voxels = np.asarray(voxels, dtype=np.float32)
    return Volume(voxels=voxels, geometry=make_geometry(voxels.shape, spacing))


def random_mask(random_state, shape, density=0.3, spacing=(1.0, 1.0, 1.0)):
    return make_mask(random_state.random_sample(shape) < density, spacing)


@pytest.fixture(scope='session')
def default_phantom():
    return generate(PhantomSpec())


@pytest.fixture(scope='session')
def small_spec():
    return PhantomSpec(**SMALL_PHANTOM)


@pytest.fixture(scope='session')
def small_phantom(small_spec):
    return generate(small_spec)
