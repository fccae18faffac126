"""File formats: CMF1 tensor containers, binary PGM/PPM images, checkpoints.

CMF1 layout (all integers unsigned 32-bit little-endian)::

    "CMF1" | version=1 | ndim | dims[ndim] | float32 LE payload (row-major)

A named container replaces ``ndim`` by the sentinel ``0xFFFFFFFF`` and is
followed by ``count`` entries of ``name_len | utf-8 name | ndim | dims | payload``.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMF1"
VERSION = 1
CONTAINER = 0xFFFFFFFF
MAX_NDIM = 16
MAX_ELEMENTS = 1 << 31


class TensorFileError(ValueError):
    pass


class BadMagicError(TensorFileError):
    pass


class UnsupportedVersionError(TensorFileError):
    pass


class TruncatedError(TensorFileError):
    pass


class DimensionOverflowError(TensorFileError):
    pass


def _record(arr):
    arr = np.asarray(arr)
    if arr.ndim > MAX_NDIM:
        raise DimensionOverflowError(f"tensor has {arr.ndim} dimensions (max {MAX_NDIM})")
    if any(d > 0xFFFFFFFE for d in arr.shape):
        raise DimensionOverflowError("dimension does not fit in 32 bits")
    head = struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode(tensors):
    """Serialize one array, or a ``{name: array}`` mapping, to CMF1 bytes."""
    out = bytearray(MAGIC + struct.pack("<I", VERSION))
    if isinstance(tensors, dict):
        out += struct.pack("<II", CONTAINER, len(tensors))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw + _record(arr)
    else:
        out += _record(tensors)
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"file truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def tensor(self, ndim=None):
        ndim = self.u32("ndim") if ndim is None else ndim
        if ndim > MAX_NDIM:
            raise DimensionOverflowError(f"ndim {ndim} exceeds the supported maximum {MAX_NDIM}")
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim, "dims"))
        count = 1
        for d in dims:
            count *= d
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(f"tensor with dims {dims} is too large")
        payload = self.take(4 * count, "payload")
        return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def decode(data):
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported CMF version {version}")
    ndim = r.u32("ndim")
    if ndim != CONTAINER:
        out = r.tensor(ndim)
    else:
        out = {}
        for _ in range(r.u32("entry count")):
            name = r.take(r.u32("name length"), "name").decode("utf-8")
            out[name] = r.tensor()
    if r.pos != len(data):
        raise TensorFileError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return out


def write_tensor(path, tensors):
    Path(path).write_bytes(encode(tensors))


def read_tensor(path):
    return decode(Path(path).read_bytes())


# -- checkpoints -------------------------------------------------------------

CONFIG_KEY = "__netconfig__"


def save_checkpoint(path, params, cfg):
    from dataclasses import asdict

    tensors = dict(params.weights)
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    tensors[CONFIG_KEY] = np.frombuffer(blob, dtype=np.uint8)
    write_tensor(path, tensors)


def load_checkpoint(path):
    from .capnet import NetConfig, NetParams

    tensors = read_tensor(path)
    if not isinstance(tensors, dict) or CONFIG_KEY not in tensors:
        raise TensorFileError(f"{path} is not a network checkpoint")
    blob = tensors.pop(CONFIG_KEY).astype(np.uint8).tobytes()
    cfg = NetConfig(**json.loads(blob.decode("utf-8")))
    params = NetParams({k: v.astype(np.float64) for k, v in tensors.items()})
    params.check(cfg)
    return params, cfg


# -- PGM / PPM ---------------------------------------------------------------


def _pnm_header(data):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary 8-bit PGM (P5) into a float array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens, offset = _pnm_header(data)
    if tokens[0] != b"P5":
        raise ValueError(f"unsupported PGM variant {tokens[0]!r}; only binary P5 is read")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise ValueError(f"unsupported PGM maxval {maxval}; only 8-bit images are read")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise ValueError("PGM raster is truncated")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / maxval


def write_pgm(path, image):
    img = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def overlay_rgb(image, contours=()):
    """Grayscale ``image`` in [0, 1] as RGB bytes with contour pixels painted."""
    img = np.asarray(image, dtype=np.float64)
    gray = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    for pixels, color in contours:
        for r, c in pixels:
            if not (0 <= r < img.shape[0] and 0 <= c < img.shape[1]):
                raise ValueError(f"contour pixel {(r, c)} outside the {img.shape} image")
            rgb[r, c] = color
    return rgb


def write_ppm_overlay(path, image, contours=()):
    """Write a binary P6 image: grayscale base plus ``(contour, (r, g, b))`` overlays."""
    rgb = overlay_rgb(image, contours)
    h, w = rgb.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    tokens, offset = _pnm_header(data)
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM")
    width, height = int(tokens[1]), int(tokens[2])
    raster = data[offset : offset + 3 * width * height]
    if len(raster) != 3 * width * height:
        raise ValueError("PPM raster is truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def to_unit_range(field):
    """Affine map of a field onto [0, 1] for display (constant fields map to 0.5)."""
    f = np.asarray(field, dtype=np.float64)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.full(f.shape, 0.5)
    return (f - lo) / (hi - lo)
