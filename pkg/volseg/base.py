from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from nibabel.affines import voxel_sizes

from .exceptions import GeometryError


def _frozen(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Geometry:
    """Grid shape, voxel spacing (mm) and voxel-to-world affine of a series."""

    shape: tuple
    spacing: tuple
    affine: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        affine = np.array(self.affine, dtype=np.float64)

        if len(shape) != 3 or min(shape) < 1:
            raise GeometryError(f'Invalid grid shape {shape}')
        if len(spacing) != 3 or not all(np.isfinite(spacing)) or min(spacing) <= 0:
            raise GeometryError(f'Invalid voxel spacing {spacing}')
        if affine.shape != (4, 4) or not np.isfinite(affine).all():
            raise GeometryError('Affine must be a finite 4x4 matrix')

        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'affine', _frozen(affine))

    @classmethod
    def from_affine(cls, shape, affine):
        return cls(shape=shape,
                   spacing=tuple(voxel_sizes(np.asarray(affine, dtype=np.float64))),
                   affine=affine)

    @classmethod
    def from_spacing(cls, shape, spacing, origin=(0.0, 0.0, 0.0)):
        affine = np.diag(list(spacing) + [1.0])
        affine[:3, 3] = origin
        return cls(shape=shape, spacing=spacing, affine=affine)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.shape))

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    def same_as(self, other) -> bool:
        return (self.shape == other.shape
                and self.spacing == other.spacing
                and np.array_equal(self.affine, other.affine))

    def translated(self, offset_mm):
        affine = np.array(self.affine)
        affine[:3, 3] += np.asarray(offset_mm, dtype=np.float64)
        return Geometry(shape=self.shape, spacing=self.spacing, affine=affine)


@dataclass(frozen=True, eq=False)
class Volume:
    voxels: np.ndarray
    geometry: Geometry
    header: Optional[object] = field(default=None)

    def __post_init__(self):
        voxels = np.array(self.voxels, dtype=np.float32)
        if voxels.shape != self.geometry.shape:
            raise GeometryError(f'Voxel array shape {voxels.shape} does not '
                                f'match geometry {self.geometry.shape}')
        object.__setattr__(self, 'voxels', _frozen(voxels))

    @property
    def shape(self):
        return self.geometry.shape

    @property
    def spacing(self):
        return self.geometry.spacing

    @property
    def affine(self):
        return self.geometry.affine

    def equals(self, other) -> bool:
        return (self.geometry.same_as(other.geometry)
                and np.array_equal(self.voxels, other.voxels))


@dataclass(frozen=True, eq=False)
class Mask:
    voxels: np.ndarray
    geometry: Geometry

    def __post_init__(self):
        voxels = np.array(self.voxels, dtype=bool)
        if voxels.shape != self.geometry.shape:
            raise GeometryError(f'Mask shape {voxels.shape} does not '
                                f'match geometry {self.geometry.shape}')
        object.__setattr__(self, 'voxels', _frozen(voxels))

    @classmethod
    def like(cls, reference, voxels):
        return cls(voxels=voxels, geometry=reference.geometry)

    @classmethod
    def empty(cls, geometry):
        return cls(voxels=np.zeros(geometry.shape, dtype=bool), geometry=geometry)

    @property
    def shape(self):
        return self.geometry.shape

    @property
    def spacing(self):
        return self.geometry.spacing

    @property
    def affine(self):
        return self.geometry.affine

    def count(self) -> int:
        return int(np.count_nonzero(self.voxels))

    def is_empty(self) -> bool:
        return not self.voxels.any()

    def equals(self, other) -> bool:
        return (self.geometry.same_as(other.geometry)
                and np.array_equal(self.voxels, other.voxels))
