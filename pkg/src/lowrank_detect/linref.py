"""Strictly linear reference network: a spatiotemporal encoder block (LSE)
and a fusion-refinement block (PFR) followed by a sigmoid hard gate.

Feature maps are ``(B, C, T, H, W)``. There are no biases and no
activations before the gate, so everything up to :func:`gate` is linear in
its input. Weights are untrained: seeded uniform or loaded from an LNW1 file.
"""

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import InvalidArgument

MAGIC = b"LNW1"
KERNEL_SIZES = (3, 5, 7)
POOL = 4
DEFAULT_CHANNELS = 24

# Order of kernels in WeightBundle files.
FIELDS = ("conv3d", "k3", "k5", "k7", "fuse", "pfr_fuse", "pfr_res")


@dataclass
class WeightBundle:
    conv3d: np.ndarray  # (C, in_ch, 3, 4, 4)
    k3: np.ndarray  # (C, in_ch, 3, 3)
    k5: np.ndarray  # (C, in_ch, 5, 5)
    k7: np.ndarray  # (C, in_ch, 7, 7)
    fuse: np.ndarray  # (C, 3C, 1, 1)
    pfr_fuse: np.ndarray  # (C, 2C, 1, 1)
    pfr_res: np.ndarray  # (C, C, 3, 3)
    seed: int = None

    @property
    def channels(self):
        return int(self.conv3d.shape[0])

    @property
    def in_channels(self):
        return int(self.conv3d.shape[1])

    def kernels(self):
        return [getattr(self, f) for f in FIELDS]

    def parameter_count(self):
        return int(sum(k.size for k in self.kernels()))

    def validate(self):
        c, cin = self.channels, self.in_channels
        want = expected_shapes(c, cin)
        for name, k in zip(FIELDS, self.kernels()):
            if k.shape != want[name]:
                raise InvalidArgument(f"{name} kernel has shape {k.shape}, expected {want[name]}")
            if not np.all(np.isfinite(k)):
                raise InvalidArgument(f"{name} kernel contains non-finite values")

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.kernels(), other.kernels()))


def expected_shapes(channels, in_channels=1):
    c, cin = channels, in_channels
    return {
        "conv3d": (c, cin, 3, POOL, POOL),
        "k3": (c, cin, 3, 3),
        "k5": (c, cin, 5, 5),
        "k7": (c, cin, 7, 7),
        "fuse": (c, 3 * c, 1, 1),
        "pfr_fuse": (c, 2 * c, 1, 1),
        "pfr_res": (c, c, 3, 3),
    }


def init_weights(seed, channels=DEFAULT_CHANNELS, in_channels=1):
    """Seeded uniform(-a, a) weights with ``a = 1 / sqrt(fan_in)``.

    Values are rounded to float32 so that a save/load roundtrip is exact.
    """
    if channels < 1 or in_channels < 1:
        raise InvalidArgument("channel counts must be >= 1")
    rng = np.random.default_rng(seed)
    ks = {}
    for name, shape in expected_shapes(channels, in_channels).items():
        a = 1.0 / np.sqrt(np.prod(shape[1:]))
        ks[name] = rng.uniform(-a, a, size=shape).astype(np.float32).astype(np.float64)
    return WeightBundle(**ks, seed=seed)


def save_weights(path, w):
    w.validate()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", w.channels))
        for k in w.kernels():
            f.write(struct.pack("<I", k.ndim))
            f.write(struct.pack(f"<{k.ndim}I", *k.shape))
            f.write(np.ascontiguousarray(k, dtype="<f4").tobytes())


def load_weights(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise InvalidArgument(f"{path}: not an LNW1 weight file")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise InvalidArgument(f"{path}: truncated weight file")
        out = buf[pos:pos + n]
        pos += n
        return out

    (channels,) = struct.unpack("<I", take(4))
    ks = {}
    for name in FIELDS:
        (rank,) = struct.unpack("<I", take(4))
        if not 1 <= rank <= 8:
            raise InvalidArgument(f"{path}: bad rank {rank} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims))
        ks[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise InvalidArgument(f"{path}: {len(buf) - pos} trailing bytes")
    w = WeightBundle(**ks)
    if w.channels != channels:
        raise InvalidArgument(f"{path}: header says {channels} channels, kernels have {w.channels}")
    w.validate()
    return w


def _check_map(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 5 or min(x.shape) < 1:
        raise InvalidArgument(f"{name} must be a non-empty B x C x T x H x W array, got shape {x.shape}")
    return x


def conv3d_strided(x, k, pad_t=1):
    """Valid-stride spatiotemporal convolution (cross-correlation) with stride ``(1, kh, kw)``."""
    _, _, kt, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad_t, pad_t), (0, 0), (0, 0)))
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, :, ::kh, ::kw]
    # win: (B, Cin, T, H/kh, W/kw, kt, kh, kw)
    out = np.tensordot(win, k, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # (B, T, H', W', C)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def conv2d_same(frame, k):
    """'Same' 2D convolution (cross-correlation) of ``(Cin, H, W)`` with ``(C, Cin, k, k)``."""
    r = (k.shape[-1] - 1) // 2
    fp = np.pad(frame, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(fp, k.shape[-2:], axis=(1, 2))  # (Cin, H, W, k, k)
    return np.moveaxis(np.tensordot(win, k, axes=([0, 3, 4], [1, 2, 3])), -1, 0)


def avg_pool(x, p=POOL):
    """Non-overlapping ``p x p`` average pooling over the last two axes."""
    h, w = x.shape[-2] // p, x.shape[-1] // p
    return x.reshape(x.shape[:-2] + (h, p, w, p)).mean(axis=(-3, -1))


def channel_mix(x, k, axis=1):
    """1x1 convolution: ``k`` of shape ``(C_out, C_in, 1, 1)`` mixes channels along `axis`."""
    out = np.tensordot(k[:, :, 0, 0], x, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def lse_branches(x, w):
    """The two LSE branches, each of shape ``(B, C, T, H/4, W/4)``."""
    x = _check_map(x)
    b, cin, t, h, wd = x.shape
    if cin != w.in_channels:
        raise InvalidArgument(f"input has {cin} channels, weights expect {w.in_channels}")
    if h % POOL or wd % POOL:
        raise InvalidArgument(f"spatial dims {h}x{wd} must be divisible by {POOL}")
    a = conv3d_strided(x, w.conv3d)
    c = w.channels
    kernels = (w.k3, w.k5, w.k7)
    fuse = w.fuse[:, :, 0, 0]
    bb = np.zeros((b, c, t, h // POOL, wd // POOL))
    # 1x1 fusion and average pooling commute, so each branch is pooled first
    # and never held at full resolution for all frames at once.
    for i in range(b):
        for j in range(t):
            frame = x[i, :, j]
            pooled = [avg_pool(conv2d_same(frame, k)) for k in kernels]
            cat = np.concatenate(pooled, axis=0)  # (3C, H/4, W/4)
            bb[i, :, j] = np.tensordot(fuse, cat, axes=([1], [0]))
    return a, bb


def lse_forward(x, w):
    a, b = lse_branches(x, w)
    return a + b


def pfr_block(x, skip, w):
    """Concatenate, 1x1 fuse, then a 3x3 refinement with identity residual."""
    x = _check_map(x)
    skip = _check_map(skip, "skip")
    if x.shape != skip.shape:
        raise InvalidArgument(f"x and skip shapes differ: {x.shape} vs {skip.shape}")
    if x.shape[1] != w.channels:
        raise InvalidArgument(f"expected {w.channels} channels, got {x.shape[1]}")
    z = channel_mix(np.concatenate([x, skip], axis=1), w.pfr_fuse)
    b, c, t = z.shape[:3]
    out = np.empty_like(z)
    for i in range(b):
        for j in range(t):
            out[i, :, j] = conv2d_same(z[i, :, j], w.pfr_res) + z[i, :, j]
    return out


def pipeline(x, w):
    """Full pre-gate path: LSE, then PFR with the spatiotemporal branch as the skip input."""
    a, b = lse_branches(x, w)
    return pfr_block(a + b, a, w)


def gate(z, tau):
    """``sigmoid(z)`` where it is at least `tau`, else 0."""
    if not 0 < tau < 1:
        raise InvalidArgument(f"tau must lie in (0, 1), got {tau}")
    s = expit(np.asarray(z, dtype=float))
    return np.where(s >= tau, s, 0.0)


def to_internal(x):
    """Convert ``(B, T, C, H, W)`` input to the internal ``(B, C, T, H, W)`` order."""
    return np.swapaxes(np.asarray(x), 1, 2)


def linearity_residual(f, x, y, alpha, beta):
    """Relative error ``||f(ax + by) - a f(x) - b f(y)|| / ||a f(x) + b f(y)||``."""
    lhs = f(alpha * x + beta * y)
    rhs = alpha * f(x) + beta * f(y)
    den = np.linalg.norm(rhs)
    return float(np.linalg.norm(lhs - rhs) / (den if den > 0 else 1.0))
