"""Dense tensor primitives: mode unfolding, SVD, singular value and soft thresholding.

Tensors are plain :class:`numpy.ndarray` objects in C (row-major) order.
"""

import numpy as np

from .errors import InvalidArgument


def _check_mode(ndim, mode):
    if not 0 <= mode < ndim:
        raise InvalidArgument(f"mode {mode} out of range for a {ndim}-mode tensor")


def unfold(t, mode):
    """Mode-`mode` unfolding of `t`.

    Rows index `mode`. Columns enumerate the remaining modes in ascending
    order with the lowest-indexed remaining mode varying fastest.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    rest = [k for k in range(t.ndim) if k != mode]
    # Fortran-order reshape makes the first remaining axis the fastest one.
    moved = np.transpose(t, [mode] + rest)
    return np.reshape(moved, (t.shape[mode], -1), order="F")


def fold(m, mode, shape):
    """Inverse of :func:`unfold` for a tensor of the given `shape`."""
    m = np.asarray(m)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), mode)
    if any(s < 1 for s in shape):
        raise InvalidArgument(f"extents must be positive, got {shape}")
    rest = [k for k in range(len(shape)) if k != mode]
    ncols = int(np.prod([shape[k] for k in rest], dtype=np.int64))
    if m.ndim != 2 or m.shape != (shape[mode], ncols):
        raise InvalidArgument(
            f"matrix of shape {m.shape} cannot fold into {shape} along mode {mode}"
        )
    moved = np.reshape(m, [shape[mode]] + [shape[k] for k in rest], order="F")
    return np.ascontiguousarray(np.transpose(moved, np.argsort([mode] + rest)))


def _fix_signs(u, vt):
    # Largest-magnitude entry of each left vector positive; argmax picks the lowest row on ties.
    idx = np.argmax(np.abs(u), axis=-2)
    picked = np.take_along_axis(u, idx[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(picked < 0, -1.0, 1.0)
    return u * sign[..., None, :], vt * sign[..., :, None]


def svd(m):
    """Thin SVD ``m = u @ diag(s) @ v.T`` with a deterministic sign convention.

    Returns ``(u, s, v)``; note that `v` holds right singular vectors as
    columns. Stacks of matrices (leading batch axes) are supported.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2:
        raise InvalidArgument("svd expects a matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidArgument("svd input contains non-finite values")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, vt = _fix_signs(u, vt)
    return u, s, np.swapaxes(vt, -1, -2)


def svt(m, tau):
    """Singular value thresholding, the proximal map of ``tau * ||.||_*``.

    For a stack of matrices `tau` may be an array with one threshold per matrix.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise InvalidArgument(f"threshold must be non-negative, got {tau}")
    u, s, v = svd(m)
    s = np.maximum(s - tau[..., None], 0.0)
    return (u * s[..., None, :]) @ np.swapaxes(v, -1, -2)


def soft_threshold(x, tau):
    """Elementwise ``sign(x) * max(|x| - tau, 0)``."""
    if np.any(np.asarray(tau) < 0):
        raise InvalidArgument(f"threshold must be non-negative, got {tau}")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return out if out.ndim else float(out)


def nuclear_norm(m):
    return float(np.sum(np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)))
