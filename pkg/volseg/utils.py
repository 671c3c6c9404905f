import numpy as np
from scipy import ndimage
from sklearn.utils import check_scalar

from .exceptions import GeometryError, SpecError


_connectivity_rank = {6: 1, 18: 2, 26: 3}


def check_connectivity(connectivity):
    if connectivity not in _connectivity_rank:
        raise SpecError(f'Connectivity must be one of 6, 18, 26, got {connectivity!r}')

    return ndimage.generate_binary_structure(3, _connectivity_rank[connectivity])


def check_same_geometry(*masks):
    reference = masks[0].geometry
    for mask in masks[1:]:
        if not reference.same_as(mask.geometry):
            raise GeometryError('Masks do not share the same geometry: '
                                f'{reference.shape}/{reference.spacing} vs '
                                f'{mask.geometry.shape}/{mask.geometry.spacing}')


def check_param(value, name, target_type, **kwargs):
    try:
        return check_scalar(value, name, target_type, **kwargs)
    except (TypeError, ValueError) as e:
        raise SpecError(str(e)) from e


def check_triple(value, name, *, positive=True):
    try:
        triple = tuple(float(v) for v in value)
    except (TypeError, ValueError) as e:
        raise SpecError(f'{name} must be three numbers, got {value!r}') from e

    if len(triple) != 3 or not all(np.isfinite(triple)):
        raise SpecError(f'{name} must be three finite numbers, got {value!r}')
    if positive and min(triple) <= 0:
        raise SpecError(f'{name} entries must be > 0, got {value!r}')

    return triple
