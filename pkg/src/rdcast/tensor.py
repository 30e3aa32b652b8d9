"""Dense 3-way tensor layout and the small algebra the rest of the package uses.

Every 3-way array in this package is time-major with a fixed axis order:

    axis 0 : time      (window position, oldest first)
    axis 1 : keyword   (k observed series groups)
    axis 2 : location  (l observed regions)

Unfoldings put the chosen mode on the rows and flatten the remaining two
axes row-major in the fixed order time < keyword < location, so every
matricized quantity in the package shares one column convention.
"""

import numpy as np

from .errors import DimensionMismatchError

MODES = ("time", "key", "loc")

_MODE_AXIS = {"time": 0, "key": 1, "loc": 2}


def mode_axis(mode):
    """Map a mode name (or axis index) to its axis number."""
    if isinstance(mode, str):
        try:
            return _MODE_AXIS[mode]
        except KeyError:
            raise DimensionMismatchError(f"unknown mode {mode!r}; expected one of {MODES}")
    axis = int(mode)
    if axis not in (0, 1, 2):
        raise DimensionMismatchError(f"mode axis must be 0, 1 or 2, got {axis}")
    return axis


def validate_tensor(x, name="tensor"):
    """Check that ``x`` is a finite 3-way array and return it as float64."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"{name} must be 3-way, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DimensionMismatchError(f"{name} contains NaN or Inf entries")
    return arr


def unfold(tensor, mode):
    """Matricize ``tensor`` along ``mode``.

    Rows index the chosen mode; columns run over the remaining axes
    row-major in the fixed time < keyword < location order.
    """
    arr = np.asarray(tensor, dtype=float)
    if arr.ndim != 3:
        raise DimensionMismatchError(f"unfold expects a 3-way tensor, got shape {arr.shape}")
    axis = mode_axis(mode)
    return np.moveaxis(arr, axis, 0).reshape(arr.shape[axis], -1)


def fold(matrix, mode, dims):
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    mat = np.asarray(matrix, dtype=float)
    axis = mode_axis(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DimensionMismatchError(f"dims must have length 3, got {dims}")
    other = [d for i, d in enumerate(dims) if i != axis]
    if mat.shape != (dims[axis], other[0] * other[1]):
        raise DimensionMismatchError(
            f"matrix shape {mat.shape} does not match mode-{axis} unfolding of {dims}"
        )
    moved = mat.reshape(dims[axis], *other)
    return np.moveaxis(moved, 0, axis)


def mode_product(tensor, matrix, mode, transpose=False):
    """Contract ``mode`` of ``tensor`` with a matrix.

    With ``transpose=False`` the matrix columns are contracted, so the mode
    size becomes ``matrix.shape[0]``.  With ``transpose=True`` the rows are
    contracted instead; that is the orientation used when a latent core is
    expanded by a (rank x observed) factor, where observed index u receives
    sum_i matrix[i, u] * core[..., i, ...].
    """
    arr = np.asarray(tensor, dtype=float)
    mat = np.asarray(matrix, dtype=float)
    if arr.ndim != 3 or mat.ndim != 2:
        raise DimensionMismatchError(
            f"mode_product expects (3-way tensor, matrix), got shapes {arr.shape}, {mat.shape}"
        )
    axis = mode_axis(mode)
    if transpose:
        mat = mat.T
    if mat.shape[1] != arr.shape[axis]:
        raise DimensionMismatchError(
            f"cannot contract axis {axis} of size {arr.shape[axis]} with matrix of shape "
            f"{matrix.shape} (transpose={transpose})"
        )
    moved = np.moveaxis(arr, axis, 0)
    out = np.tensordot(mat, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)
