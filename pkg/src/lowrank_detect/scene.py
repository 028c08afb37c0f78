"""Synthetic small-target sequences with exact ground truth.

Targets are point (or small disk) sources splatted at sub-pixel positions,
convolved with a diffraction-limited Airy PSF and then a motion-blur line
kernel. Backgrounds are either a drifting bilinear gradient or a star field
moving under one global affine map per frame, so the stars keep their mutual
configuration. Coordinates are ``(row, col)`` pixels; frames run along axis 2.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument

J1_FIRST_ZERO = 3.8317059702075125


def _series_j1(x):
    x = np.asarray(x, dtype=float)
    q = -(x / 2) ** 2
    term = x / 2
    total = term.copy()
    for k in range(1, 45):
        term = term * q / (k * (k + 1))
        total = total + term
    return total


def _asymptotic_j1(x):
    # Hankel expansion for nu = 1: a_k = prod_{j<=k}(4 - (2j-1)^2) / (k! 8^k)
    x = np.asarray(x, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    a = 1.0
    xp = np.ones_like(x)
    for k in range(0, 24):
        if k > 0:
            a *= (4.0 - (2 * k - 1) ** 2) / (k * 8.0)
            xp = xp * x
        contrib = a / xp
        if k % 4 == 0:
            p += contrib
        elif k % 4 == 1:
            q += contrib
        elif k % 4 == 2:
            p -= contrib
        else:
            q -= contrib
    chi = x - 0.75 * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j1(x):
    """Bessel function of the first kind, order one, for ``x >= 0``.

    Power series up to ``x = 12``, Hankel asymptotic expansion beyond.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise InvalidArgument("bessel_j1 is defined here for x >= 0")
    small = arr <= 12.0
    out = np.empty_like(arr)
    out[small] = _series_j1(arr[small])
    out[~small] = _asymptotic_j1(arr[~small])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PsfSpec:
    aperture: float = 0.2  # m
    wavelength: float = 550e-9  # m
    focal_length: float = 1.0  # m
    pixel_pitch: float = 1.5e-6  # m / px
    radius: int = 5  # px

    def validate(self):
        if min(self.aperture, self.wavelength, self.focal_length, self.pixel_pitch) <= 0:
            raise InvalidArgument(f"PSF parameters must be positive: {self}")
        if self.radius < 2:
            raise InvalidArgument(f"PSF kernel radius must be >= 2, got {self.radius}")


def airy_amplitude(r, spec):
    """``2 J1(u) / u`` with ``u = pi D r / (lambda f)``; `r` in metres."""
    u = math.pi * spec.aperture * np.asarray(r, dtype=float) / (spec.wavelength * spec.focal_length)
    out = np.ones_like(u)
    nz = u != 0
    out[nz] = 2.0 * bessel_j1(u[nz]) / u[nz]
    return out if out.ndim else float(out)


def airy_profile(r, spec):
    """Unnormalised Airy intensity at radius `r` metres (1 at the centre)."""
    return np.asarray(airy_amplitude(r, spec)) ** 2


def airy_psf(spec, normalize=True):
    """Airy pattern sampled at pixel centres on a ``(2R+1)^2`` grid."""
    spec.validate()
    d = np.arange(-spec.radius, spec.radius + 1, dtype=float)
    r = np.hypot(d[:, None], d[None, :]) * spec.pixel_pitch
    k = airy_profile(r, spec)
    return k / k.sum() if normalize else k


def motion_blur_kernel(length, angle):
    """Normalised line kernel of `length` px at `angle` rad (0 = along columns).

    ``ceil(length)`` equally spaced points spanning ``length - 1`` px are
    splatted bilinearly, so integer lengths at angle 0 give a flat segment.
    """
    if length < 1:
        raise InvalidArgument(f"blur length must be >= 1, got {length}")
    n = int(math.ceil(length - 1e-12))
    span = length - 1.0
    s = np.linspace(-span / 2, span / 2, n) if n > 1 else np.zeros(1)
    rows = -s * math.sin(angle)
    cols = s * math.cos(angle)
    rows = np.where(np.abs(rows) < 1e-12, 0.0, rows)
    cols = np.where(np.abs(cols) < 1e-12, 0.0, cols)
    half = int(math.ceil(max(np.abs(rows).max(), np.abs(cols).max())))
    k = np.zeros((2 * half + 1, 2 * half + 1))
    _splat(k, rows + half, cols + half, np.full(n, 1.0 / n))
    return k / k.sum()


def _splat(img, rows, cols, weights):
    """Bilinear splat of point masses; mass falling outside `img` is dropped."""
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    H, W = img.shape
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (wgt > 0) & (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        np.add.at(img, (rr[ok], cc[ok]), (weights * wgt)[ok])


@dataclass(frozen=True)
class GradientDrift:
    """Bilinear ramp image translated by `velocity` (rows, cols) px per frame."""

    velocity: tuple = (0.5, 0.25)
    low: float = 0.1
    high: float = 0.6


@dataclass(frozen=True)
class Starfield:
    """Stars on a flat sky moved by one affine map per frame.

    At frame ``t`` a star at reference position ``p`` sits at
    ``c + scale**t * R(rotation * t) (p - c) + translation * t`` with ``c``
    the frame centre. Amplitudes are log-uniform in ``amplitude_range``.
    """

    count: int = 40
    amplitude_range: tuple = (0.1, 0.8)
    translation: tuple = (0.0, 2.0)
    rotation: float = 0.0
    scale: float = 1.0
    sky: float = 0.05
    jitter: float = 0.0


@dataclass(frozen=True)
class Target:
    start: tuple
    velocity: tuple = (0.0, 0.0)
    amplitude: float = 0.5
    extent: float = 0.0  # diameter in px of a uniform disk; 0 means a point


@dataclass(frozen=True)
class SceneSpec:
    H: int = 64
    W: int = 64
    T: int = 8
    background: object = field(default_factory=GradientDrift)
    targets: tuple = ()
    psf: PsfSpec = field(default_factory=PsfSpec)
    blur: tuple = None  # (length px, angle rad)
    noise_sigma: float = 0.0
    impulse_prob: float = 0.0
    seed: int = 0
    allow_exit: bool = False

    def validate(self):
        if self.H < 8 or self.W < 8 or self.T < 1:
            raise InvalidArgument(f"scene must be at least 8x8x1, got {self.H}x{self.W}x{self.T}")
        self.psf.validate()
        if self.noise_sigma < 0 or not 0 <= self.impulse_prob <= 1:
            raise InvalidArgument("noise parameters out of range")
        if self.blur is not None and self.blur[0] < 1:
            raise InvalidArgument("blur length must be >= 1")
        bg = self.background
        if isinstance(bg, Starfield):
            lo, hi = bg.amplitude_range
            if bg.count < 0 or not 0 < lo <= hi or bg.scale <= 0 or bg.jitter < 0:
                raise InvalidArgument(f"invalid starfield {bg}")
        elif isinstance(bg, GradientDrift):
            if not 0 <= bg.low <= bg.high <= 1:
                raise InvalidArgument(f"gradient levels must satisfy 0 <= low <= high <= 1: {bg}")
        else:
            raise InvalidArgument(f"unknown background {bg!r}")
        for tg in self.targets:
            if not 0 < tg.amplitude <= 1 or tg.extent < 0:
                raise InvalidArgument(f"invalid target {tg}")
            if not self.allow_exit:
                for t in range(self.T):
                    r, c = target_position(tg, t)
                    if not (0 <= r <= self.H - 1 and 0 <= c <= self.W - 1):
                        raise InvalidArgument(f"target {tg} leaves the frame at t={t}")


@dataclass
class GroundTruth:
    """Per-pixel target masks and per-target, per-frame centroid and SNR.

    ``centroids[i][t]`` and ``snr[i][t]`` are ``None`` when target ``i`` is
    outside frame ``t``.
    """

    masks: np.ndarray
    centroids: list
    snr: list


def target_position(target, t):
    return (target.start[0] + target.velocity[0] * t, target.start[1] + target.velocity[1] * t)


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


_STARS, _NOISE, _JITTER, _GRADIENT = 1, 2, 3, 4


def _star_reference(spec):
    bg = spec.background
    rng = _rng(spec.seed, _STARS)
    # Reference positions cover every location visited during the sequence.
    reach = abs(bg.translation[0]) * spec.T + spec.H * 0.5, abs(bg.translation[1]) * spec.T + spec.W * 0.5
    rows = rng.uniform(-reach[0], spec.H + reach[0], bg.count)
    cols = rng.uniform(-reach[1], spec.W + reach[1], bg.count)
    lo, hi = bg.amplitude_range
    amps = np.exp(rng.uniform(math.log(lo), math.log(hi), bg.count))
    return rows, cols, amps


def star_positions(spec, t):
    """``(rows, cols)`` of every star at frame `t` (may lie outside the frame)."""
    bg = spec.background
    rows, cols, _ = _star_reference(spec)
    c = np.array([(spec.H - 1) / 2.0, (spec.W - 1) / 2.0])
    a = bg.rotation * t
    m = bg.scale ** t * np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    p = m @ (np.stack([rows, cols]) - c[:, None]) + c[:, None]
    return p[0] + bg.translation[0] * t, p[1] + bg.translation[1] * t


def _render_sources(spec, rows, cols, flux, kernel, pad):
    canvas = np.zeros((spec.H + 2 * pad, spec.W + 2 * pad))
    _splat(canvas, np.asarray(rows) + pad, np.asarray(cols) + pad, np.asarray(flux, dtype=float))
    out = ndimage.convolve(canvas, kernel, mode="constant", cval=0.0)
    return out[pad:pad + spec.H, pad:pad + spec.W], canvas


def _disk_samples(extent):
    if extent <= 1:
        return np.zeros(1), np.zeros(1)
    n = int(math.ceil(extent)) * 4
    g = (np.arange(n) + 0.5) / n * extent - extent / 2
    rr, cc = np.meshgrid(g, g, indexing="ij")
    inside = rr ** 2 + cc ** 2 <= (extent / 2) ** 2
    return rr[inside], cc[inside]


def target_kernel(spec):
    """PSF followed by the optional motion blur, as one unit-sum kernel."""
    k = airy_psf(spec.psf)
    if spec.blur is not None:
        b = motion_blur_kernel(*spec.blur)
        size = k.shape[0] + b.shape[0] - 1
        big = np.zeros((size, size))
        big[b.shape[0] // 2: b.shape[0] // 2 + k.shape[0], b.shape[0] // 2: b.shape[0] // 2 + k.shape[0]] = k
        k = ndimage.convolve(big, b, mode="constant")
        k /= k.sum()
    return k


def render_target(spec, target, t):
    """Noise-free image of one target at frame `t` (before clamping)."""
    kernel = target_kernel(spec)
    peak = kernel.max()
    dr, dc = _disk_samples(target.extent)
    r, c = target_position(target, t)
    flux = np.full(dr.size, target.amplitude / peak / dr.size)
    img, _ = _render_sources(spec, r + dr, c + dc, flux, kernel, kernel.shape[0])
    return img


def render_background(spec, t):
    bg = spec.background
    if isinstance(bg, GradientDrift):
        return _gradient_frame(spec, t)
    rows, cols = star_positions(spec, t)
    _, _, amps = _star_reference(spec)
    if bg.jitter > 0:
        amps = amps * np.maximum(1.0 + bg.jitter * _rng(spec.seed, _JITTER, t).normal(size=amps.size), 0.0)
    k = airy_psf(spec.psf)
    pad = k.shape[0]
    keep = (rows > -pad) & (rows < spec.H + pad - 1) & (cols > -pad) & (cols < spec.W + pad - 1)
    img, _ = _render_sources(spec, rows[keep], cols[keep], amps[keep] / k.max(), k, pad)
    return bg.sky + img


def _gradient_frame(spec, t):
    bg = spec.background
    vr, vc = bg.velocity
    flip = _rng(spec.seed, _GRADIENT).integers(0, 2, size=2)
    rows = np.arange(spec.H, dtype=float)[:, None] - vr * t
    cols = np.arange(spec.W, dtype=float)[None, :] - vc * t
    # Normalise each ramp over the coordinate range visited by the whole sequence.
    r_lo, r_hi = min(0, -vr * (spec.T - 1)), spec.H - 1 + max(0, -vr * (spec.T - 1))
    c_lo, c_hi = min(0, -vc * (spec.T - 1)), spec.W - 1 + max(0, -vc * (spec.T - 1))
    a = (rows - r_lo) / (r_hi - r_lo)
    b = (cols - c_lo) / (c_hi - c_lo)
    if flip[0]:
        a = 1 - a
    if flip[1]:
        b = 1 - b
    return bg.low + (bg.high - bg.low) * (a * b)


def render(spec):
    """Render `spec` to a ``(H, W, T)`` video in [0, 1] and its ground truth."""
    spec.validate()
    H, W, T = spec.H, spec.W, spec.T
    video = np.empty((H, W, T))
    masks = np.zeros((H, W, T), dtype=bool)
    centroids = [[None] * T for _ in spec.targets]
    rr, cc = np.mgrid[0:H, 0:W]
    for t in range(T):
        frame = render_background(spec, t)
        for i, tg in enumerate(spec.targets):
            img = render_target(spec, tg, t)
            frame = frame + img
            peak = img.max()
            if peak <= 0:
                continue
            masks[..., t] |= img >= 0.5 * peak
            r, c = target_position(tg, t)
            if 0 <= r <= H - 1 and 0 <= c <= W - 1:
                centroids[i][t] = (float((img * rr).sum() / img.sum()), float((img * cc).sum() / img.sum()))
        rng = _rng(spec.seed, _NOISE, t)
        if spec.noise_sigma > 0:
            frame = frame + spec.noise_sigma * rng.normal(size=frame.shape)
        if spec.impulse_prob > 0:
            hit = rng.uniform(size=frame.shape) < spec.impulse_prob
            frame = np.where(hit, rng.integers(0, 2, size=frame.shape).astype(float), frame)
        video[..., t] = np.clip(frame, 0.0, 1.0)
    snr = [
        [None if cen is None else _safe_snr(video, cen, t) for t, cen in enumerate(per)]
        for per in centroids
    ]
    return video, GroundTruth(masks=masks, centroids=centroids, snr=snr)


def _safe_snr(video, centroid, t):
    try:
        return measure_snr(video, centroid, t)
    except InvalidArgument:
        return None


def measure_snr(video, centroid, frame, inner=3, outer=11):
    """Local contrast ``(mean_target - mean_bg) / std_bg``.

    The target is the ``inner x inner`` window at the rounded centroid and the
    background the rest of the ``outer x outer`` window, clipped at the frame
    border (at least 20 background pixels are required). A flat background
    gives ``inf`` for a brighter target and 0 otherwise.
    """
    img = np.asarray(video, dtype=float)
    img = img[..., frame] if img.ndim == 3 else img
    H, W = img.shape
    r, c = int(round(centroid[0])), int(round(centroid[1]))
    if not (0 <= r < H and 0 <= c < W):
        raise InvalidArgument(f"centroid {centroid} outside the frame")
    hi, ho = inner // 2, outer // 2
    win = img[max(r - ho, 0):r + ho + 1, max(c - ho, 0):c + ho + 1]
    inside = np.zeros(win.shape, dtype=bool)
    r0, c0 = r - max(r - ho, 0), c - max(c - ho, 0)
    inside[max(r0 - hi, 0):r0 + hi + 1, max(c0 - hi, 0):c0 + hi + 1] = True
    bg = win[~inside]
    if bg.size < 20:
        raise InvalidArgument(f"only {bg.size} background pixels around {centroid}")
    mt, mb = win[inside].mean(), bg.mean()
    diff = mt - mb
    scale = max(abs(mt), abs(mb), 1.0)
    if abs(diff) <= 1e-12 * scale:
        diff = 0.0  # summation rounding, not contrast
    sb = 0.0 if np.ptp(bg) == 0 else bg.std()
    if sb <= 1e-12 * scale:
        return math.inf if diff > 0 else 0.0
    return float(diff / sb)
