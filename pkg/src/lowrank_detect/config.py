"""TOML run configuration.

Layout (every key optional)::

    seed = 0
    threads = 4          # default: available cores
    out = "out"

    [scene]            H W T background noise_sigma impulse_prob allow_exit blur dtype
    [scene.gradient]   velocity low high
    [scene.starfield]  count amplitude_range translation rotation scale sky jitter
    [scene.psf]        aperture wavelength focal_length pixel_pitch radius
    [[scene.targets]]  start velocity amplitude extent
    [detect]           mode tau fusion normalization
    [detect.patch3]    h w t stride_s stride_t
    [detect.stack]     h w stride_s
    [detect.group]     k search_radius same_slab ref_stride
    [detect.rpca3]     lam eta mu0 rho mu_max tol max_iter mode_weights
    [detect.rpca4]     (same keys as rpca3)
    [metrics]          match_radius n_thresholds
    [sweep]            taus lams
    [net]              channels pairs size

Unknown keys are rejected with the line and column where they appear.
"""

import re
from dataclasses import dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .detector import DetectConfig, GroupConfig, StackConfig
from .errors import InvalidArgument
from .patches import Patch3Config
from .rpca import RpcaConfig
from .scene import GradientDrift, PsfSpec, SceneSpec, Starfield, Target


class ConfigError(InvalidArgument):
    def __init__(self, msg, line=None, col=None):
        self.line, self.col = line, col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + msg)


@dataclass(frozen=True)
class MetricsConfig:
    match_radius: float = 3.0
    n_thresholds: int = 256


@dataclass(frozen=True)
class SweepConfig:
    taus: tuple = (0.3, 0.4, 0.5, 0.6, 0.7)
    lams: tuple = (None,)


@dataclass(frozen=True)
class NetConfig:
    channels: int = 24
    pairs: int = 5
    size: tuple = (8, 32, 32)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = None  # None: all available cores
    out: str = "out"
    dtype: str = "f32"
    scene: SceneSpec = field(default_factory=SceneSpec)
    detect: DetectConfig = field(default_factory=DetectConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    net: NetConfig = field(default_factory=NetConfig)


TUPLE_KEYS = {"velocity", "amplitude_range", "translation", "start", "mode_weights", "taus", "lams", "size", "blur"}


def _locate(text, table, key):
    """Line/column of `key` inside `table` (dotted path) in the TOML source, if found."""
    current = ""
    pat = re.compile(r"^\s*(\"?)" + re.escape(key) + r"\1\s*=")
    for n, raw in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?", raw)
        if head:
            current = head.group(1).replace(" ", "")
            parent = current.rsplit(".", 1)[0] if "." in current else ""
            if current.split(".")[-1] == key and parent == table:
                return n, raw.index(key) + 1
            continue
        m = pat.match(raw)
        if m and current == table:
            return n, raw.index(key) + 1
    return None, None


class _Reader:
    def __init__(self, text):
        self.text = text

    def check(self, table, data, allowed):
        for key in data:
            if key not in allowed:
                line, col = _locate(self.text, table, key)
                where = f"[{table}]" if table else "top level"
                raise ConfigError(f"unknown key {key!r} in {where}", line, col)

    def build(self, cls, table, data, base=None, skip=()):
        if not isinstance(data, dict):
            line, col = _locate(self.text, table.rsplit(".", 1)[0] if "." in table else "", table.split(".")[-1])
            raise ConfigError(f"[{table}] must be a table", line, col)
        names = {f.name for f in fields(cls)} - set(skip)
        self.check(table, data, names)
        kw = {}
        for k, v in data.items():
            if isinstance(v, dict):
                line, col = _locate(self.text, table, k)
                raise ConfigError(f"unexpected table {table}.{k}", line, col)
            if k in TUPLE_KEYS and isinstance(v, list):
                v = tuple(None if x == "default" else x for x in v)
            kw[k] = v
        return replace(base, **kw) if base is not None else cls(**kw)


def _scene(r, data):
    data = dict(data)
    subs = {k: data.pop(k) for k in ("gradient", "starfield", "psf", "targets") if k in data}
    kind = data.pop("background", "gradient")
    dtype = data.pop("dtype", "f32")
    if kind not in ("gradient", "starfield"):
        line, col = _locate(r.text, "scene", "background")
        raise ConfigError(f"background must be 'gradient' or 'starfield', got {kind!r}", line, col)
    bg = (
        r.build(GradientDrift, "scene.gradient", subs.get("gradient", {}))
        if kind == "gradient"
        else r.build(Starfield, "scene.starfield", subs.get("starfield", {}))
    )
    psf = r.build(PsfSpec, "scene.psf", subs.get("psf", {}))
    targets = tuple(r.build(Target, "scene.targets", t) for t in subs.get("targets", []))
    spec = r.build(SceneSpec, "scene", data, SceneSpec(), skip=("background", "targets", "psf", "seed"))
    return replace(spec, background=bg, psf=psf, targets=targets), dtype


def _detect(r, data):
    data = dict(data)
    parts = {}
    for key, cls in (("patch3", Patch3Config), ("stack", StackConfig), ("group", GroupConfig),
                     ("rpca3", RpcaConfig), ("rpca4", RpcaConfig)):
        base = getattr(DetectConfig(), key)
        parts[key] = r.build(cls, f"detect.{key}", data.pop(key, {}), base)
    cfg = r.build(DetectConfig, "detect", data, DetectConfig(), skip=tuple(parts) + ("threads",))
    return replace(cfg, **parts)


MODE_ALIASES = {"third": "third_order", "fourth": "fourth_order", "fused": "fused"}


def parse_config(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+), column (\d+)", str(e))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError(f"TOML syntax error: {e}", line, col) from None
    r = _Reader(text)
    r.check("", doc, {"seed", "threads", "out", "scene", "detect", "metrics", "sweep", "net"})
    cfg = RunConfig()
    kw = {k: doc[k] for k in ("seed", "threads", "out") if k in doc}
    if "scene" in doc:
        kw["scene"], kw["dtype"] = _scene(r, doc["scene"])
    if "detect" in doc:
        det = dict(doc["detect"])
        if "mode" in det:
            det["mode"] = MODE_ALIASES.get(det["mode"], det["mode"])
        kw["detect"] = _detect(r, det)
    for key, cls in (("metrics", MetricsConfig), ("sweep", SweepConfig), ("net", NetConfig)):
        if key in doc:
            kw[key] = r.build(cls, key, doc[key], getattr(cfg, key))
    try:
        cfg = replace(cfg, **kw)
        validate(cfg)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg


def validate(cfg):
    if cfg.threads is not None and (not isinstance(cfg.threads, int) or cfg.threads < 1):
        raise ConfigError(f"threads must be a positive integer, got {cfg.threads!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg.seed!r}")
    if cfg.dtype not in ("u8", "u16", "f32"):
        raise ConfigError(f"dtype must be u8, u16 or f32, got {cfg.dtype!r}")
    if cfg.metrics.match_radius < 0 or cfg.metrics.n_thresholds < 2:
        raise ConfigError("metrics: match_radius must be >= 0 and n_thresholds >= 2")
    if cfg.net.channels < 1 or cfg.net.pairs < 1:
        raise ConfigError("net: channels and pairs must be >= 1")
    try:
        replace(cfg.scene, seed=cfg.seed).validate()
        cfg.detect.validate()
    except InvalidArgument as e:
        raise ConfigError(str(e)) from None


def load_config(path):
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"config is not UTF-8: {e}") from None
    return parse_config(text)
