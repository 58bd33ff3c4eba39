"""On-disk formats: HSI cubes, checkpoints, SRF CSV, PPM previews.

All binary layouts are little endian. Every writer goes through
:func:`atomic_write`, which writes a temporary file next to the target and
renames it into place.
"""
from __future__ import annotations

import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DimensionError, FormatError
from .network import AGDModel, NetConfig, set_fixed_srf
from .observation import SRF

HSI_MAGIC = b"HSI1"
CKPT_MAGIC = b"AGDW"
CKPT_VERSION = 1
CONFIG_TENSOR = "config"
FIXED_SRF_TENSOR = "fixed_srf"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


# -- HSI --------------------------------------------------------------------------

def encode_hsi(cube: np.ndarray) -> bytes:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DimensionError(f"HSI cube must be [s, h, w], got {cube.shape}")
    s, h, w = cube.shape
    return HSI_MAGIC + struct.pack("<III", s, h, w) + np.ascontiguousarray(cube, dtype="<f4").tobytes()


def decode_hsi(raw: bytes) -> np.ndarray:
    if len(raw) < 16 or raw[:4] != HSI_MAGIC:
        raise FormatError("not an HSI1 file")
    s, h, w = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * s * h * w
    if len(raw) != expected:
        raise FormatError(f"HSI payload is {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(s, h, w).astype(np.float64)


def write_hsi(path, cube: np.ndarray) -> None:
    atomic_write(path, encode_hsi(cube))


def read_hsi(path) -> np.ndarray:
    return decode_hsi(Path(path).read_bytes())


# -- SRF CSV ----------------------------------------------------------------------

def write_srf_csv(path, srf: SRF) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in srf.matrix]
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_srf_csv(path) -> SRF:
    text = Path(path).read_text(encoding="ascii")
    rows = [line for line in text.splitlines() if line.strip()]
    if len(rows) != 3:
        raise FormatError(f"SRF CSV needs 3 lines, found {len(rows)}")
    try:
        matrix = [[float(v) for v in row.split(",")] for row in rows]
    except ValueError as exc:
        raise FormatError(f"SRF CSV holds a non-numeric entry: {exc}") from None
    if len({len(r) for r in matrix}) != 1:
        raise FormatError("SRF CSV rows differ in length")
    return SRF(np.array(matrix))


# -- checkpoints ------------------------------------------------------------------

_CONFIG_FIELDS = ("s", "stages", "base_channels", "dense_layers", "mode", "use_init_net",
                  "use_incremental", "share_theta_c", "use_szm")
_MODES = ("learned_srf", "fixed_srf")


def _config_vector(cfg: NetConfig) -> np.ndarray:
    vals = []
    for name in _CONFIG_FIELDS:
        v = getattr(cfg, name)
        vals.append(_MODES.index(v) if name == "mode" else int(v))
    return np.array(vals, dtype=np.float64)


def _config_from_vector(vec: np.ndarray) -> NetConfig:
    if vec.shape != (len(_CONFIG_FIELDS),):
        raise FormatError(f"config tensor has shape {vec.shape}")
    kw = {}
    for name, v in zip(_CONFIG_FIELDS, vec):
        v = int(v)
        if name == "mode":
            kw[name] = _MODES[v]
        elif name.startswith(("use_", "share_")):
            kw[name] = bool(v)
        else:
            kw[name] = v
    return NetConfig(**kw)


def encode_tensors(tensors: list[tuple[str, np.ndarray]]) -> bytes:
    names = [n for n, _ in tensors]
    if len(set(names)) != len(names):
        raise FormatError("checkpoint tensor names must be unique")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors:
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_tensors(raw: bytes) -> dict[str, np.ndarray]:
    if len(raw) < 20 or raw[:4] != CKPT_MAGIC:
        raise FormatError("not an AGDW checkpoint")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if fnv1a64(body) != stored:
        raise ChecksumError("checkpoint checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = math.prod(dims)
            if pos + 4 * n > len(body):
                raise FormatError(f"tensor {name!r} runs past the end of the file")
            out[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from None
    if pos != len(body):
        raise FormatError("trailing bytes after the last tensor")
    return out


def model_tensors(model: AGDModel) -> list[tuple[str, np.ndarray]]:
    tensors = [(CONFIG_TENSOR, _config_vector(model.cfg))]
    tensors += [(name, t.data) for name, t in model.named_parameters()]
    if model.fixed_srf is not None:
        tensors.append((FIXED_SRF_TENSOR, model.fixed_srf.data))
    return tensors


def save_checkpoint(path, model: AGDModel) -> None:
    atomic_write(path, encode_tensors(model_tensors(model)))


def load_checkpoint(path) -> AGDModel:
    tensors = decode_tensors(Path(path).read_bytes())
    if CONFIG_TENSOR not in tensors:
        raise FormatError("checkpoint lacks its config tensor")
    cfg = _config_from_vector(tensors[CONFIG_TENSOR])
    model = AGDModel(cfg)
    expected = dict(model.named_parameters())
    stored = set(tensors) - {CONFIG_TENSOR, FIXED_SRF_TENSOR}
    if stored != set(expected):
        missing, extra = sorted(set(expected) - stored), sorted(stored - set(expected))
        raise FormatError(f"checkpoint tensors do not match the architecture (missing {missing}, extra {extra})")
    for name, param in expected.items():
        if tensors[name].shape != param.shape:
            raise FormatError(f"tensor {name!r} has shape {tensors[name].shape}, expected {param.shape}")
        param.data[...] = tensors[name]
    if FIXED_SRF_TENSOR in tensors:
        set_fixed_srf(model, SRF(tensors[FIXED_SRF_TENSOR]))
    return model


# -- previews ---------------------------------------------------------------------

def pseudo_color_bands(s: int) -> tuple[int, int, int]:
    """Zero-based band indices used as R, G, B (bands 30, 20, 10 of 31, rescaled)."""
    return tuple(max(1, math.ceil(k * s / 31)) - 1 for k in (30, 20, 10))


def encode_ppm(cube: np.ndarray) -> bytes:
    """Binary P6 preview of an HS cube."""
    s, h, w = cube.shape
    rgb = np.stack([cube[b] for b in pseudo_color_bands(s)], axis=-1)
    pixels = np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_ppm(path, cube: np.ndarray) -> None:
    atomic_write(path, encode_ppm(np.asarray(cube)))
