"""NIfTI-1 reading and writing.

Headers are decoded and encoded with nibabel; the data section is sliced
out of the (optionally gzip-compressed) byte stream directly so that
truncation, datatype and scaling rules are enforced exactly.
"""
import io
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from nibabel.nifti1 import Nifti1Header, Nifti1Image

from .base import Geometry, Mask, Volume
from .exceptions import (NiftiFormatError, PrecisionError,
                         TruncatedDataError, UnsupportedDatatypeError)
from .geometry import check_affine


logger = logging.getLogger(__name__)

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16
DT_FLOAT64 = 64

_datatypes = {DT_UINT8: np.uint8,
              DT_INT16: np.int16,
              DT_FLOAT32: np.float32,
              DT_FLOAT64: np.float64,}

_datatype_names = {'uint8': DT_UINT8,
                   'int16': DT_INT16,
                   'float32': DT_FLOAT32,
                   'float64': DT_FLOAT64,}

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352

_gzip_magic = b'\x1f\x8b'
_magics = (b'n+1', b'ni1')


@dataclass(frozen=True, eq=False)
class NiftiHeader:
    dims: tuple
    spacing: tuple
    datatype_code: int
    scl_slope: float
    scl_inter: float
    sform_code: int
    qform_code: int
    affine: np.ndarray
    vox_offset: int
    magic: str
    byteorder: str


def resolve_datatype(name_or_code):
    if isinstance(name_or_code, str):
        try:
            return _datatype_names[name_or_code.lower()]
        except KeyError:
            raise UnsupportedDatatypeError(name_or_code) from None
    if int(name_or_code) not in _datatypes:
        raise UnsupportedDatatypeError(name_or_code)
    return int(name_or_code)


def _read_bytes(path):
    with open(path, 'rb') as f:
        raw = f.read()

    if raw[:2] == _gzip_magic:
        # a truncated gzip stream yields its readable prefix, the size checks
        # below then report the shortfall
        decompressor = zlib.decompressobj(wbits=31)
        try:
            raw = decompressor.decompress(raw) + decompressor.flush()
        except zlib.error as e:
            raise NiftiFormatError(f'Corrupt gzip stream in {path}: {e}') from e

    return raw


def _paired_image_path(path):
    name = path.name
    for suffix, replacement in (('.hdr.gz', '.img.gz'), ('.hdr', '.img')):
        if name.endswith(suffix):
            candidate = path.with_name(name[:-len(suffix)] + replacement)
            if candidate.exists():
                return candidate
            uncompressed = path.with_name(name[:-len(suffix)] + '.img')
            if uncompressed.exists():
                return uncompressed
    raise NiftiFormatError(f'No image file found next to paired header {path}')


def _parse_header(raw):
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(HEADER_SIZE, len(raw))

    magic = raw[344:347]
    if magic not in _magics or raw[347:348] != b'\x00':
        raise NiftiFormatError(f'Not a NIfTI-1 file (magic {raw[344:348]!r})')

    # nibabel detects byte order from sizeof_hdr, dim[0] is validated below
    hdr = Nifti1Header.from_fileobj(io.BytesIO(raw[:HEADER_SIZE]), check=False)

    dim = [int(d) for d in hdr['dim']]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f'Invalid dim[0] = {ndim}')

    dims = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if min(dims[:3]) < 1:
        raise NiftiFormatError(f'Invalid dimensions {tuple(dims[:3])}')
    if any(d > 1 for d in dims[3:]):
        raise NiftiFormatError(f'Only 3D volumes are supported, got dims {tuple(dims[:ndim])}')
    if ndim > 3:
        logger.warning('Squeezing singleton trailing dimensions %s', tuple(dims[3:ndim]))

    spacing = tuple(float(p) for p in hdr['pixdim'][1:4])
    if not all(np.isfinite(spacing)) or min(spacing) <= 0:
        raise NiftiFormatError(f'Voxel spacing must be positive, got {spacing}')

    vox_offset = int(hdr['vox_offset'])
    if magic == b'n+1' and vox_offset < HEADER_SIZE:
        raise NiftiFormatError(f'Single-file vox_offset {vox_offset} overlaps the header')

    code = int(hdr['datatype'])
    if code not in _datatypes:
        raise UnsupportedDatatypeError(code)

    sform_code = int(hdr['sform_code'])
    qform_code = int(hdr['qform_code'])
    if sform_code > 0:
        affine = hdr.get_sform()
    elif qform_code > 0:
        affine = hdr.get_qform()
    else:
        affine = np.diag(list(spacing) + [1.0])
    affine = check_affine(np.asarray(affine, dtype=np.float64))

    return NiftiHeader(dims=tuple(dims[:3]),
                       spacing=spacing,
                       datatype_code=code,
                       scl_slope=float(hdr['scl_slope']),
                       scl_inter=float(hdr['scl_inter']),
                       sform_code=sform_code,
                       qform_code=qform_code,
                       affine=affine,
                       vox_offset=vox_offset,
                       magic=magic.decode('ascii'),
                       byteorder=hdr.endianness)


def _scale(data, slope, inter):
    if slope == 0 or not np.isfinite(slope):
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0

    if slope == 1.0 and inter == 0.0:
        return data.astype(np.float32)
    return (data.astype(np.float64) * slope + inter).astype(np.float32)


def read_nifti(path) -> Volume:
    path = Path(path)
    raw = _read_bytes(path)
    header = _parse_header(raw)

    if header.magic == 'ni1':
        raw = _read_bytes(_paired_image_path(path))

    dtype = np.dtype(_datatypes[header.datatype_code]).newbyteorder(header.byteorder)
    count = int(np.prod(header.dims))
    expected = header.vox_offset + count * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedDataError(expected, len(raw))

    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header.vox_offset)
    data = data.reshape(header.dims, order='F')

    logger.debug('Read %s: dims=%s spacing=%s datatype=%d byteorder=%s',
                 path, header.dims, header.spacing,
                 header.datatype_code, header.byteorder)

    return Volume(voxels=_scale(data, header.scl_slope, header.scl_inter),
                  geometry=Geometry(shape=header.dims,
                                    spacing=header.spacing,
                                    affine=header.affine),
                  header=header)


def read_mask(path) -> Mask:
    volume = read_nifti(path)
    return Mask(voxels=volume.voxels != 0, geometry=volume.geometry)


def _cast(data, dtype, allow_lossy):
    dtype = np.dtype(dtype)
    if dtype.kind == 'f':
        return data.astype(dtype)

    info = np.iinfo(dtype)
    exact = (np.isfinite(data).all()
             and np.array_equal(data, np.round(data))
             and data.min() >= info.min
             and data.max() <= info.max)
    if not exact:
        if not allow_lossy:
            raise PrecisionError(f'Data cannot be stored exactly as {dtype.name}; '
                                 'pass allow_lossy to round and clip')
        data = np.clip(np.rint(np.nan_to_num(data)), info.min, info.max)

    return data.astype(dtype)


def write_nifti(image, path, datatype_code=None, *, allow_lossy=False):
    path = Path(path)
    if not (path.name.endswith('.nii') or path.name.endswith('.nii.gz')):
        raise NiftiFormatError(f'Output must be a .nii or .nii.gz file, got {path}')

    if isinstance(image, Mask):
        data = image.voxels.astype(np.uint8)
        code = DT_UINT8 if datatype_code is None else datatype_code
    else:
        data = image.voxels
        code = DT_FLOAT32 if datatype_code is None else datatype_code
    code = resolve_datatype(code)

    data = _cast(data, _datatypes[code], allow_lossy)

    geometry = image.geometry
    nii = Nifti1Image(data, geometry.affine)
    nii.set_qform(geometry.affine, code=1)
    nii.set_sform(geometry.affine, code=1)
    nii.header.set_data_dtype(_datatypes[code])
    nii.header.set_zooms(geometry.spacing)
    nii.header.set_xyzt_units('mm')

    nii.to_filename(str(path))

    logger.debug('Wrote %s: dims=%s datatype=%d', path, geometry.shape, code)
