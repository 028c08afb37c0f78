"""Video -> patch tensors -> robust PCA -> sparse saliency -> gated masks.

Two tensor views of the video are supported. The third-order view stacks
per-frame spatial patches into ``h x w x N``; the fourth-order view groups
similar spatiotemporal patches into ``h x w x t x k`` tensors and solves
each group separately. ``fused`` runs both and combines their confidences.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument
from .patches import Patch3Config, aggregate_array, extract_patch_array, group_indices, lattice, stack_spatial_patches
from .rpca import RpcaConfig, admm_solve, admm_solve_batch

log = logging.getLogger(__name__)

MODES = ("third_order", "fourth_order", "fused")

# Group solves are batched in fixed-size chunks so results never depend on the thread count.
CHUNK = 256


@dataclass(frozen=True)
class StackConfig:
    h: int = 16
    w: int = 16
    stride_s: int = 8


@dataclass(frozen=True)
class GroupConfig:
    k: int = 8
    search_radius: int = 20
    same_slab: bool = False
    # Reference patches sit on a coarser spatial lattice than the candidates.
    ref_stride: int = 8
    # Search other frames around the position displaced by the global image motion.
    track: bool = True
    track_radius: int = 0
    # Pixels seen in fewer tracked frames than this get no fourth-order saliency.
    min_track: int = 5


@dataclass(frozen=True)
class DetectConfig:
    mode: str = "third_order"
    patch3: Patch3Config = field(default_factory=lambda: Patch3Config(h=8, w=8, t=1, stride_s=2, stride_t=1))
    stack: StackConfig = field(default_factory=StackConfig)
    group: GroupConfig = field(default_factory=GroupConfig)
    # Third-order branch: nuclear norm on the patch-index unfolding only.
    rpca3: RpcaConfig = field(default_factory=lambda: RpcaConfig(mode_weights=(0.0, 0.0, 1.0), tol=1e-5))
    # Fourth-order branch: noise-penalised solve on the member unfolding, residual threshold lam / eta = 0.1.
    rpca4: RpcaConfig = field(default_factory=lambda: RpcaConfig(lam=0.4, eta=4.0, tol=1e-5, mode_weights=(0.0, 0.0, 0.0, 1.0)))
    tau: float = 0.5
    fusion: str = "min"
    normalization: str = "per_frame"
    threads: int = 1

    def validate(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.tau < 1:
            raise InvalidArgument(f"tau must lie in (0, 1), got {self.tau}")
        if self.fusion not in ("min", "product"):
            raise InvalidArgument(f"fusion must be 'min' or 'product', got {self.fusion!r}")
        if self.normalization not in ("per_frame", "global"):
            raise InvalidArgument(f"unknown normalization {self.normalization!r}")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")
        if self.group.ref_stride % self.patch3.stride_s:
            raise InvalidArgument("group ref_stride must be a multiple of the patch stride")


@dataclass
class Component:
    pixels: np.ndarray  # (n, 2) rows of (row, col)
    centroid: tuple
    frame: int = 0


@dataclass
class DetectionResult:
    confidence: np.ndarray
    mask: np.ndarray
    components: list


def connected_components(mask_frame, frame=0):
    """8-connected components of a binary frame in scanline order of their first pixel."""
    mask_frame = np.asarray(mask_frame, dtype=bool)
    labels, n = ndimage.label(mask_frame, structure=np.ones((3, 3), dtype=int))
    comps = []
    for lab in range(1, n + 1):
        pix = np.argwhere(labels == lab)
        comps.append(Component(pixels=pix, centroid=tuple(pix.mean(axis=0).tolist()), frame=frame))
    comps.sort(key=lambda c: tuple(c.pixels[0]))
    return comps


def video_components(mask):
    return [c for t in range(mask.shape[2]) for c in connected_components(mask[..., t], t)]


def third_order_saliency(v, cfg):
    """Median-aggregated ``|S|`` from robust PCA on the stacked spatial patches."""
    # Frames smaller than the stack patch use one whole-frame patch per frame.
    h, w = min(cfg.stack.h, v.shape[0]), min(cfg.stack.w, v.shape[1])
    st = stack_spatial_patches(v, h, w, cfg.stack.stride_s)
    res = admm_solve(st.data, cfg.rpca3)
    log.debug("third-order solve: %d iterations, converged=%s", res.iters, res.converged)
    values = np.moveaxis(np.abs(res.S), -1, 0)
    return aggregate_array(values, st.origins, v.shape, "median")


def _skip_singletons(rpca, shape):
    # A length-1 mode unfolds to a single row; its nuclear norm is just the
    # Frobenius norm, so by default it gets no weight.
    if rpca.mode_weights is not None:
        return rpca
    w = list(rpca.weights_for(len(shape)))
    for m, n in enumerate(shape):
        if n == 1:
            w[m] = 0.0
    return replace(rpca, mode_weights=tuple(w)) if any(w) else rpca


def _solve_chunks(stacks, rpca, threads, observed=None):
    starts = range(0, len(stacks), CHUNK)
    chunks = [(stacks[i:i + CHUNK], None if observed is None else observed[i:i + CHUNK]) for i in starts]

    def run(chunk):
        return np.stack([r.S for r in admm_solve_batch(chunk[0], rpca, chunk[1])])

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, chunks))
    else:
        out = [run(c) for c in chunks]
    return np.concatenate(out)


def global_shifts(v, min_score=8.0):
    """Integer ``(row, col)`` displacement of every frame relative to frame 0.

    Consecutive mean-free frames are registered by the peak of their circular
    cross-correlation and the steps are accumulated. A step is trusted only
    when its peak stands `min_score` robust deviations above the correlation
    surface and moves less than an eighth of the frame; otherwise the previous
    step is repeated (constant velocity; zero at the start).
    """
    H, W, T = v.shape
    spec = np.fft.rfft2(v - v.mean(axis=(0, 1)), axes=(0, 1))
    out = np.zeros((T, 2), dtype=np.int64)
    step = np.zeros(2, dtype=np.int64)
    for t in range(1, T):
        corr = np.fft.irfft2(spec[..., t] * np.conj(spec[..., t - 1]), s=(H, W))
        r, c = np.unravel_index(int(np.argmax(corr)), corr.shape)
        cand = np.array([r - H if r > H // 2 else r, c - W if c > W // 2 else c])
        med = np.median(corr)
        spread = 1.4826 * np.median(np.abs(corr - med))
        score = (corr[r, c] - med) / spread if spread > 0 else 0.0
        if score >= min_score and np.all(np.abs(cand) * 8 < (H, W)):
            step = cand
        out[t] = out[t - 1] + step
    return out


def track_support(offsets, H, W):
    """Number of frames in which each pixel's displaced track stays inside the frame."""
    T = len(offsets)
    rows, cols = np.arange(H), np.arange(W)
    support = np.zeros((H, W, T), dtype=np.int64)
    for z in range(T):
        for z2 in range(T):
            dr, dc = offsets[z2] - offsets[z]
            inside_r = (rows + dr >= 0) & (rows + dr < H)
            inside_c = (cols + dc >= 0) & (cols + dc < W)
            support[..., z] += inside_r[:, None] & inside_c[None, :]
    return support


def fourth_order_saliency(v, cfg):
    """Median-aggregated ``|S|`` over all members of all similar-patch groups."""
    g, p = cfg.group, cfg.patch3
    H, W, T = v.shape
    pad, offsets, k = 0, None, g.k
    if g.track and p.t == 1:
        step = p.stride_s
        offsets = step * np.round(global_shifts(v) / step).astype(np.int64)
        # Pad so every displaced window stays on the lattice.
        pad = int(np.ptp(offsets, axis=0).max()) if T > 1 else 0
        per_frame = (2 * (g.track_radius // step) + 1) ** 2
        k = min(k, 1 + (T - 1) * per_frame)
    known = None
    if pad:
        # Edge values only steer the patch search; the solver treats them as unknown.
        known = np.pad(np.ones(v.shape, dtype=bool), ((pad, pad), (pad, pad), (0, 0)))
        v = np.pad(v, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    patches, origins = extract_patch_array(v, p)
    rows = lattice(v.shape[0], p.h, g.ref_stride)
    cols = lattice(v.shape[1], p.w, g.ref_stride)
    # References only where the patch overlaps the original frame.
    rows = rows[(rows > pad - p.h) & (rows < pad + H)]
    cols = cols[(cols > pad - p.w) & (cols < pad + W)]
    refs = np.flatnonzero(np.isin(origins[:, 0], rows) & np.isin(origins[:, 1], cols))
    radius = g.track_radius if offsets is not None else g.search_radius
    members, padded = group_indices(patches, origins, k, radius, g.same_slab, refs, offsets)
    stacks = np.moveaxis(patches[members], 1, -1)  # (G, h, w, t, k)
    observed = None
    if known is not None:
        observed = np.moveaxis(extract_patch_array(known, p)[0][members], 1, -1)
    S = _solve_chunks(stacks, _skip_singletons(cfg.rpca4, stacks.shape[1:]), cfg.threads, observed)
    values = np.moveaxis(np.abs(S), -1, 1)  # (G, k, h, w, t)
    keep = ~padded
    # Padding pixels far from every reference stay uncovered; they are cropped.
    out = aggregate_array(values[keep], origins[members[keep]], v.shape, "median", fill=0.0 if pad else None)
    out = out[pad:pad + H, pad:pad + W]
    if offsets is not None:
        out[track_support(offsets, H, W) < min(g.min_track, T)] = 0.0
    return out


def normalize(s, per_frame=True):
    """Min-max scaling to [0, 1]; a constant frame (or video) maps to 0."""
    s = np.asarray(s, dtype=float)
    axes = (0, 1) if per_frame else None
    lo = s.min(axis=axes, keepdims=True)
    span = s.max(axis=axes, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (s - lo) / safe, 0.0)


def fuse(a, b, how="min"):
    if how == "min":
        return np.minimum(a, b)
    if how == "product":
        return a * b
    raise InvalidArgument(f"unknown fusion {how!r}")


def gate(confidence, tau):
    return np.asarray(confidence) >= tau


def detect(v, cfg=DetectConfig()):
    """Run the configured pipeline on a ``(H, W, T)`` video with values in [0, 1]."""
    cfg.validate()
    v = np.asarray(v, dtype=float)
    if v.ndim != 3:
        raise InvalidArgument(f"video must be H x W x T, got shape {v.shape}")
    if v.shape[0] < 8 or v.shape[1] < 8:
        raise InvalidArgument(f"video frames must be at least 8x8, got {v.shape[:2]}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("video contains non-finite values")
    per_frame = cfg.normalization == "per_frame"
    conf = None
    if cfg.mode in ("third_order", "fused"):
        conf = normalize(third_order_saliency(v, cfg), per_frame)
    if cfg.mode in ("fourth_order", "fused"):
        c4 = normalize(fourth_order_saliency(v, cfg), per_frame)
        conf = c4 if conf is None else fuse(conf, c4, cfg.fusion)
    mask = gate(conf, cfg.tau)
    return DetectionResult(confidence=conf, mask=mask, components=video_components(mask))
