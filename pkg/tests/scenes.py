"""Seeded benchmark scenes shared by the detector and acceptance tests."""

import numpy as np

from lowrank_detect.scene import GradientDrift, SceneSpec, Starfield, Target, render

SIZE = (128, 128, 8)
NOISE = 0.01
MIN_SNR = 5.0


def _targets(rng):
    n = int(rng.integers(1, 4))
    return tuple(
        Target(
            start=(float(rng.uniform(20, 108)), float(rng.uniform(20, 108))),
            velocity=(float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.5, 1.5))),
            amplitude=float(rng.uniform(0.3, 0.6)),
        )
        for _ in range(n)
    )


def benchmark_scene(seed):
    """Even seeds: drifting gradient; odd seeds: starfield translating 2 px/frame.

    Targets are redrawn (from the same seeded stream) until every target has
    a measured SNR of at least MIN_SNR in every frame.
    """
    H, W, T = SIZE
    bg = GradientDrift(velocity=(0.5, 0.3)) if seed % 2 == 0 else Starfield(translation=(0.0, 2.0))
    rng = np.random.default_rng([seed, 2024])
    for _ in range(50):
        spec = SceneSpec(H=H, W=W, T=T, background=bg, targets=_targets(rng), noise_sigma=NOISE, seed=seed)
        video, gt = render(spec)
        snrs = [s for per in gt.snr for s in per if s is not None]
        if snrs and min(snrs) >= MIN_SNR:
            return spec, video, gt
    raise RuntimeError(f"no scene with SNR >= {MIN_SNR} for seed {seed}")


def starfield_only(seed):
    H, W, T = SIZE
    spec = SceneSpec(H=H, W=W, T=T, background=Starfield(translation=(0.0, 2.0)), noise_sigma=NOISE, seed=1000 + seed)
    video, gt = render(spec)
    return spec, video, gt


def spike_scene():
    """Drifting gradient with one moving point target of amplitude 0.5 (seed 7)."""
    spec = SceneSpec(
        H=64, W=64, T=8, background=GradientDrift(), noise_sigma=0.0, seed=7,
        targets=(Target(start=(24.0, 30.0), velocity=(1.0, 0.5), amplitude=0.5),),
    )
    video, gt = render(spec)
    return spec, video, gt


def pooled(arrays):
    """Concatenate per-scene H x W x T arrays along the frame axis."""
    return np.concatenate(arrays, axis=2)
