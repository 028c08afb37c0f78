"""Sequence containers: the VSEQ binary format and directories of PGM frames.

VSEQ layout (little-endian): ``b"VSEQ"``, u32 version (1), u32 H, u32 W,
u32 T, u8 dtype code, then T frames of H x W samples in row-major order.
Integer samples are scaled to [0, 1] on load (u8 / 255, u16 / 65535).
"""

import os
import struct

import numpy as np

VERSION = 1
MAGIC = b"VSEQ"
HEADER = struct.Struct("<4sIIIIB")
DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<u2"), 2: np.dtype("<f4")}
CODES = {"u8": 0, "u16": 1, "f32": 2}
SCALE = {0: 255.0, 1: 65535.0, 2: 1.0}


class FormatError(OSError):
    """A file exists but does not hold a valid sequence."""


def encode(video, dtype="f32"):
    """Serialise an ``(H, W, T)`` array to VSEQ bytes.

    Integer dtypes clip to [0, 1] and round to the nearest level.
    """
    if dtype not in CODES:
        raise ValueError(f"dtype must be one of {sorted(CODES)}, got {dtype!r}")
    v = np.asarray(video, dtype=float)
    if v.ndim == 2:
        v = v[..., None]
    if v.ndim != 3:
        raise ValueError(f"expected an H x W x T array, got shape {v.shape}")
    code = CODES[dtype]
    H, W, T = v.shape
    frames = np.moveaxis(v, -1, 0)
    if code == 2:
        data = frames.astype(DTYPES[2])
    else:
        data = np.rint(np.clip(frames, 0.0, 1.0) * SCALE[code]).astype(DTYPES[code])
    return HEADER.pack(MAGIC, VERSION, H, W, T, code) + data.tobytes()


def decode(buf, name="<buffer>"):
    """Parse VSEQ bytes into a float ``(H, W, T)`` array."""
    if len(buf) < HEADER.size:
        raise FormatError(f"{name}: too short for a VSEQ header")
    magic, version, H, W, T, code = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    if code not in DTYPES:
        raise FormatError(f"{name}: unknown dtype code {code}")
    dt = DTYPES[code]
    n = H * W * T
    payload = len(buf) - HEADER.size
    if payload != n * dt.itemsize:
        raise FormatError(f"{name}: payload is {payload} bytes, header implies {n * dt.itemsize}")
    data = np.frombuffer(buf, dtype=dt, offset=HEADER.size).reshape(T, H, W)
    out = data.astype(float)
    if code != 2:
        out /= SCALE[code]
    return np.ascontiguousarray(np.moveaxis(out, 0, -1))


def write_vseq(path, video, dtype="f32"):
    with open(path, "wb") as f:
        f.write(encode(video, dtype))


def read_vseq(path):
    with open(path, "rb") as f:
        return decode(f.read(), str(path))


def write_mask(path, mask):
    """Binary mask stored as u8 with levels 0 and 255, so it loads back as 0/1."""
    write_vseq(path, np.asarray(mask, dtype=bool).astype(float), "u8")


def _pgm_tokens(buf, name):
    # Header fields are whitespace separated; '#' starts a comment until end of line.
    tokens, i = [], 0
    while len(tokens) < 4:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i >= len(buf):
            raise FormatError(f"{name}: truncated PGM header")
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path):
    """Read one binary (P5) PGM frame scaled to [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    name = str(path)
    tokens, start = _pgm_tokens(buf, name)
    if tokens[0] != b"P5":
        raise FormatError(f"{name}: not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{name}: malformed PGM header") from None
    if not (0 < maxval < 65536) or w < 1 or h < 1:
        raise FormatError(f"{name}: unsupported PGM geometry or maxval")
    dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = w * h * dt.itemsize
    if len(buf) - start < need:
        raise FormatError(f"{name}: PGM raster truncated")
    data = np.frombuffer(buf, dtype=dt, count=w * h, offset=start).reshape(h, w)
    return data.astype(float) / (255.0 if dt.itemsize == 1 else 65535.0)


def read_pgm_dir(path):
    """Stack all ``*.pgm`` files of a directory, in lexicographic name order, as frames."""
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".pgm"))
    if not names:
        raise FormatError(f"{path}: no .pgm frames found")
    frames = [read_pgm(os.path.join(path, n)) for n in names]
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"{path}: frames differ in size")
    return np.stack(frames, axis=-1)


def write_pgm(path, frame, bits=8):
    levels = 255 if bits == 8 else 65535
    f = np.rint(np.clip(np.asarray(frame, dtype=float), 0, 1) * levels)
    data = f.astype("u1" if bits == 8 else ">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{levels}\n".encode("ascii"))
        fh.write(data.tobytes())


def load_video(path):
    """A VSEQ file or a directory of PGM frames."""
    if os.path.isdir(path):
        return read_pgm_dir(path)
    return read_vseq(path)
