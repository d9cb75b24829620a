"""Load numeric arrays out of MATLAB containers (v5 via scipy, v7.3 via h5py)."""

from __future__ import annotations

import numpy as np


class MatReadError(ValueError):
    pass


def _is_hdf5(path):
    with open(path, "rb") as fh:
        return fh.read(8) == b"\x89HDF\r\n\x1a\n"


def _numeric_vars_v5(path):
    from scipy.io import loadmat

    raw = loadmat(path)
    out = {}
    for key, value in raw.items():
        if key.startswith("__"):
            continue
        arr = np.asarray(value)
        if arr.dtype.kind in "fiu" and arr.size > 1:
            out[key] = arr
    return out


def _collect_hdf5(group, prefix, out):
    import h5py

    for key, item in group.items():
        name = f"{prefix}{key}"
        if isinstance(item, h5py.Group):
            _collect_hdf5(item, f"{name}/", out)
        else:
            arr = np.asarray(item)
            if arr.dtype.kind in "fiu" and arr.size > 1:
                # MATLAB stores column-major; h5py yields the reversed shape
                out[name] = arr.T
    return out


def _numeric_vars_hdf5(path):
    import h5py

    with h5py.File(path, "r") as fh:
        return _collect_hdf5(fh, "", {})


def load_mat_array(path, key=None):
    """One numeric array from a .mat file; largest array when key is None."""
    variables = _numeric_vars_hdf5(path) if _is_hdf5(path) else _numeric_vars_v5(path)
    if not variables:
        raise MatReadError(f"{path}: no numeric arrays found")
    if key is not None:
        if key not in variables:
            raise MatReadError(
                f"{path}: no variable {key!r}; available: {sorted(variables)}"
            )
        return variables[key]
    return max(variables.values(), key=lambda a: a.size)


def orient_cube(arr, height, width, bands):
    """Squeeze and permute axes until the array is (height, width, bands).

    The permutation must be unambiguous; equal extents that allow several
    orderings are an error unless the array already matches.
    """
    arr = np.squeeze(arr)
    if arr.ndim != 3:
        raise MatReadError(f"expected a 3-D cube, got shape {arr.shape}")
    target = (height, width, bands)
    if arr.shape == target:
        return arr
    matches = []
    from itertools import permutations

    for perm in permutations(range(3)):
        if tuple(arr.shape[p] for p in perm) == target:
            matches.append(perm)
    if not matches:
        raise MatReadError(f"cube shape {arr.shape} cannot be oriented to {target}")
    if len(matches) > 1:
        raise MatReadError(
            f"cube shape {arr.shape} is ambiguous for target {target}"
        )
    return np.transpose(arr, matches[0])


def orient_labels(arr, height, width):
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise MatReadError(f"expected a 2-D label map, got shape {arr.shape}")
    if arr.shape == (height, width):
        return arr
    if arr.shape == (width, height) and height != width:
        return arr.T
    raise MatReadError(f"label shape {arr.shape} does not match ({height}, {width})")
