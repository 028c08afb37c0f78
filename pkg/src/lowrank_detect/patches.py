"""Patch tensor construction and patch-to-image aggregation.

Videos are arrays of shape ``(H, W, T)``. Patch origins are ``(x, y, z)``
triples where ``x`` indexes rows, ``y`` columns and ``z`` frames.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, InvalidArgument


@dataclass(frozen=True)
class Patch3Config:
    h: int = 8
    w: int = 8
    t: int = 1
    stride_s: int = 4
    stride_t: int = 1

    def validate(self, shape):
        H, W, T = shape
        if min(self.h, self.w, self.t) < 1 or min(self.stride_s, self.stride_t) < 1:
            raise InvalidArgument(f"patch extents and strides must be >= 1: {self}")
        if self.h > H or self.w > W or self.t > T:
            raise InvalidArgument(
                f"patch {self.h}x{self.w}x{self.t} larger than video {H}x{W}x{T}"
            )


@dataclass
class PatchGroup4:
    """A group of similar patches stacked along a fourth mode.

    ``data`` has shape ``(h, w, t, k)``; ``members`` are indices into the
    patch list the group was built from and ``padded`` flags members that
    repeat the reference because too few candidates were found.
    """

    data: np.ndarray
    origins: list
    members: np.ndarray
    padded: np.ndarray = field(default=None)


@dataclass
class PatchStack3:
    data: np.ndarray  # (h, w, N)
    origins: np.ndarray  # (N, 3) rows of (x, y, frame)


def lattice(n, p, stride):
    """Patch origins along one axis, with a trailing patch flush to the border."""
    if p > n:
        raise InvalidArgument(f"patch extent {p} exceeds axis length {n}")
    if stride < 1:
        raise InvalidArgument(f"stride must be >= 1, got {stride}")
    starts = list(range(0, n - p + 1, stride))
    if starts[-1] != n - p:
        starts.append(n - p)
    return np.array(starts, dtype=np.int64)


def _check_video(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 3:
        raise InvalidArgument(f"video must be H x W x T, got shape {v.shape}")
    return v


def patch_origins(shape, cfg):
    """All 3D patch origins, ordered by frame, then row, then column."""
    H, W, T = shape
    xs = lattice(H, cfg.h, cfg.stride_s)
    ys = lattice(W, cfg.w, cfg.stride_s)
    zs = lattice(T, cfg.t, cfg.stride_t)
    z, x, y = np.meshgrid(zs, xs, ys, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def extract_patch_array(v, cfg):
    """Vectorised form of :func:`extract_patches_3d`.

    Returns ``(patches, origins)`` with ``patches`` of shape ``(P, h, w, t)``.
    """
    v = _check_video(v)
    cfg.validate(v.shape)
    origins = patch_origins(v.shape, cfg)
    windows = np.lib.stride_tricks.sliding_window_view(v, (cfg.h, cfg.w, cfg.t))
    patches = windows[origins[:, 0], origins[:, 1], origins[:, 2]]
    return np.ascontiguousarray(patches), origins


def extract_patches_3d(v, cfg):
    """Overlapping ``h x w x t`` patches of `v` as a list of ``(patch, origin)``."""
    patches, origins = extract_patch_array(v, cfg)
    return [(p, tuple(int(c) for c in o)) for p, o in zip(patches, origins)]


def _window(values, centre, radius):
    # Slice of the sorted `values` lying within `radius` of `centre`.
    lo = np.searchsorted(values, centre - radius, side="left")
    hi = np.searchsorted(values, centre + radius, side="right")
    return slice(lo, hi)


def group_indices(patches, origins, k, search_radius, same_slab=True, refs=None, offsets=None):
    """Nearest-neighbour grouping on index arrays.

    For every reference patch (all patches, or the indices in `refs`, in the
    given order) returns the
    indices of its `k` closest patches by Euclidean distance among those whose
    spatial origin lies within `search_radius` (Chebyshev) of the reference.
    With `same_slab` the candidates must also share the reference's frame
    origin; otherwise candidates come from the whole sequence.

    `offsets` (one ``(dx, dy)`` row per distinct frame origin, in ascending
    order) turns the search into a track: candidates come from the other
    frames only, each searched around the reference origin displaced by the
    offset difference between the two frames.

    Returns ``(members, padded)``, both of shape ``(len(refs), k)``.
    """
    if k < 1:
        raise InvalidArgument(f"group size must be >= 1, got {k}")
    origins = np.asarray(origins, dtype=np.int64)
    flat = np.asarray(patches, dtype=float).reshape(len(origins), -1)
    refs = np.arange(len(origins)) if refs is None else np.asarray(refs, dtype=np.int64)
    offsets = None if offsets is None else np.asarray(offsets, dtype=np.int64)
    members = np.empty((len(refs), k), dtype=np.int64)
    padded = np.zeros((len(refs), k), dtype=bool)
    # Lookup table (x, y, z) -> patch index so each search window is a slice.
    axes = [np.unique(origins[:, d]) for d in range(3)]
    pos = [np.searchsorted(axes[d], origins[:, d]) for d in range(3)]
    table = np.full([len(a) for a in axes], -1, dtype=np.int64)
    table[pos[0], pos[1], pos[2]] = np.arange(len(origins))
    for g, r in enumerate(refs):
        ox, oy, oz = origins[r]
        if offsets is None:
            xs = _window(axes[0], ox, search_radius)
            ys = _window(axes[1], oy, search_radius)
            zs = slice(pos[2][r], pos[2][r] + 1) if same_slab else slice(None)
            cand = table[xs, ys, zs].ravel()
        else:
            z0 = pos[2][r]
            parts = []
            for z in range(len(axes[2])):
                if z == z0:
                    continue
                dx, dy = offsets[z] - offsets[z0]
                xs = _window(axes[0], ox + dx, search_radius)
                ys = _window(axes[1], oy + dy, search_radius)
                parts.append(table[xs, ys, z].ravel())
            cand = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        cand = cand[(cand >= 0) & (cand != r)]
        diff = flat[cand] - flat[r]
        dist = np.einsum("ij,ij->i", diff, diff)
        c = origins[cand]
        order = np.lexsort((c[:, 2], c[:, 1], c[:, 0], dist))
        chosen = cand[order[: k - 1]]
        members[g, 0] = r
        members[g, 1 : 1 + len(chosen)] = chosen
        members[g, 1 + len(chosen) :] = r
        padded[g, 1 + len(chosen) :] = True
    return members, padded


def group_similar_patches(patches, k=16, search_radius=20, same_slab=True):
    """Group each patch with its most similar neighbours into 4th-order tensors.

    `patches` is a list of ``(patch, origin)`` pairs as produced by
    :func:`extract_patches_3d`. Groups are returned in lexicographic order of
    their reference origin, so the result does not depend on input order.
    """
    if not patches:
        return []
    arrs = np.stack([np.asarray(p, dtype=float) for p, _ in patches])
    if arrs.ndim == 3:
        arrs = arrs[..., None]
    origins = np.array([o for _, o in patches], dtype=np.int64)
    members, padded = group_indices(arrs, origins, k, search_radius, same_slab)
    groups = []
    for r in np.lexsort((origins[:, 2], origins[:, 1], origins[:, 0])):
        idx = members[r]
        groups.append(
            PatchGroup4(
                data=np.moveaxis(arrs[idx], 0, -1),
                origins=[tuple(int(c) for c in origins[i]) for i in idx],
                members=idx,
                padded=padded[r],
            )
        )
    return groups


def stack_spatial_patches(v, h, w, stride_s):
    """Per-frame ``h x w`` patches stacked into an ``h x w x N`` tensor.

    Patches are ordered frame-major, then by lattice row, then column.
    """
    v = _check_video(v)
    H, W, T = v.shape
    cfg = Patch3Config(h=h, w=w, t=1, stride_s=stride_s, stride_t=1)
    patches, origins = extract_patch_array(v, cfg)
    return PatchStack3(data=np.moveaxis(patches[..., 0], 0, -1), origins=origins)


def aggregate_array(values, origins, shape, reducer="median", fill=None):
    """Reduce overlapping patch values into a full ``(H, W, T)`` map.

    `values` has shape ``(P, h, w, t)`` (or ``(P, h, w)`` for single-frame
    patches). The median of an even number of values is the mean of the two
    middle ones. Uncovered pixels raise :class:`CoverageError` unless a
    `fill` value is given.
    """
    if reducer not in ("median", "mean"):
        raise InvalidArgument(f"unknown reducer {reducer!r}")
    values = np.asarray(values, dtype=float)
    if values.ndim == 3:
        values = values[..., None]
    origins = np.asarray(origins, dtype=np.int64)
    H, W, T = shape
    P, h, w, t = values.shape
    if P == 0:
        raise CoverageError((0, 0, 0))
    if (
        origins.min() < 0
        or np.any(origins[:, 0] + h > H)
        or np.any(origins[:, 1] + w > W)
        or np.any(origins[:, 2] + t > T)
    ):
        raise InvalidArgument("patch origin out of bounds")
    dx, dy, dz = np.meshgrid(np.arange(h), np.arange(w), np.arange(t), indexing="ij")
    rows = origins[:, 0, None] + dx.ravel()
    cols = origins[:, 1, None] + dy.ravel()
    frames = origins[:, 2, None] + dz.ravel()
    pix = ((rows * W + cols) * T + frames).ravel()
    vals = values.reshape(P, -1).ravel()
    size = H * W * T
    counts = np.bincount(pix, minlength=size)
    covered = counts > 0
    if fill is None and not covered.all():
        raise CoverageError(np.unravel_index(np.flatnonzero(~covered)[0], shape))
    out = np.full(size, np.nan if fill is None else float(fill))
    if reducer == "mean":
        out[covered] = np.bincount(pix, weights=vals, minlength=size)[covered] / counts[covered]
    else:
        order = np.lexsort((vals, pix))
        sorted_vals = vals[order]
        start = (np.cumsum(counts) - counts)[covered]
        n = counts[covered]
        out[covered] = 0.5 * (sorted_vals[start + (n - 1) // 2] + sorted_vals[start + n // 2])
    return out.reshape(shape)


def aggregate_patches(patch_values, H, W, T, reducer="median"):
    """List-of-``(patch, origin)`` front end to :func:`aggregate_array`."""
    if not patch_values:
        raise CoverageError((0, 0, 0))
    vals = [np.asarray(p, dtype=float) for p, _ in patch_values]
    vals = [p[..., None] if p.ndim == 2 else p for p in vals]
    shapes = {p.shape for p in vals}
    if len(shapes) != 1:
        raise InvalidArgument(f"patches must share one shape, got {sorted(shapes)}")
    origins = np.array([o for _, o in patch_values], dtype=np.int64)
    return aggregate_array(np.stack(vals), origins, (H, W, T), reducer)
