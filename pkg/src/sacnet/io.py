"""File formats: raw tensor files, binary PGM/PPM images, checkpoints.

The tensor format is deliberately minimal:

    bytes 0..3   magic "STF1"
    u32 LE       rank
    rank x u32   dimensions
    payload      float32 LE, C (row-major) order

Malformed files raise ParseError carrying the byte offset of the first
offending byte.  Missing files raise the usual OSError family.
"""

import os
import struct

import numpy as np

from .errors import ParameterError, ParseError, ShapeError

STF_MAGIC = b"STF1"
_MAX_RANK = 32


# ------------------------------------------------------------ tensor files

def write_stf(path, arr):
    arr = np.asarray(arr)
    if arr.ndim > _MAX_RANK:
        raise ParameterError(f"rank {arr.ndim} exceeds the format limit of {_MAX_RANK}")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = STF_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_stf(path):
    """Read a tensor file back as float64 (storage itself is float32)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != STF_MAGIC:
        raise ParseError(f"{path}: not a tensor file, bad magic {data[:4]!r}", offset=0)
    if len(data) < 8:
        raise ParseError(f"{path}: truncated before rank field", offset=len(data))
    rank = struct.unpack_from("<I", data, 4)[0]
    if rank > _MAX_RANK:
        raise ParseError(f"{path}: implausible rank {rank}", offset=4)
    dims_end = 8 + 4 * rank
    if len(data) < dims_end:
        raise ParseError(f"{path}: truncated inside the dimension list", offset=len(data))
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(data) != expected:
        raise ParseError(
            f"{path}: payload is {len(data) - dims_end} bytes, dims {dims} need {4 * count}",
            offset=min(len(data), expected))
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end)
    return flat.reshape(dims).astype(np.float64)


# -------------------------------------------------------------- PGM / PPM

def _next_pnm_token(data, pos, path):
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in b" \t\r\n":
            pos += 1
        elif c == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ParseError(f"{path}: header ends prematurely", offset=n)
    start = pos
    while pos < n and data[pos] not in b" \t\r\n":
        pos += 1
    tok = data[start:pos]
    if not tok.isdigit():
        raise ParseError(f"{path}: expected an integer in the header, got {tok!r}", offset=start)
    return int(tok), pos


def _read_pnm(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != magic:
        raise ParseError(f"{path}: bad magic {data[:2]!r}, expected {magic.decode()}", offset=0)
    width, pos = _next_pnm_token(data, 2, path)
    height, pos = _next_pnm_token(data, pos, path)
    maxval, pos = _next_pnm_token(data, pos, path)
    if width < 1 or height < 1:
        raise ParseError(f"{path}: bad image size {width}x{height}", offset=2)
    if not 1 <= maxval <= 255:
        raise ParseError(f"{path}: maxval {maxval} outside 1..255", offset=pos)
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise ParseError(f"{path}: missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height * channels
    if len(data) - pos != expected:
        raise ParseError(
            f"{path}: payload is {len(data) - pos} bytes, {width}x{height}x{channels} needs {expected}",
            offset=min(len(data), pos + expected))
    img = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    img = img.astype(np.float64) / maxval
    if channels == 1:
        return img.reshape(height, width)
    return img.reshape(height, width, 3).transpose(2, 0, 1)


def _to_bytes(arr, shape_kind):
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        return arr
    arr = np.asarray(arr, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ParameterError(
            f"float {shape_kind} data must lie in [0,1], got range "
            f"[{arr.min():.4f}, {arr.max():.4f}]")
    return np.round(arr * 255.0).astype(np.uint8)


def read_pgm(path):
    """Binary (P5) greyscale image as float64 [H,W] scaled to [0,1]."""
    return _read_pnm(path, b"P5", 1)


def write_pgm(path, arr):
    arr = _to_bytes(arr, "greyscale")
    if arr.ndim != 2:
        raise ShapeError(f"PGM data must be [H,W], got {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def read_ppm(path):
    """Binary (P6) colour image as float64 [3,H,W] scaled to [0,1]."""
    return _read_pnm(path, b"P6", 3)


def write_ppm(path, arr):
    arr = _to_bytes(arr, "colour")
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"PPM data must be [3,H,W], got {arr.shape}")
    _, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.transpose(1, 2, 0).tobytes())


# ------------------------------------------------------- key=value configs

def write_config(path, mapping):
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={mapping[key]}\n")


def read_config(path):
    """key=value per line; '#' starts a comment, blank lines are skipped."""
    out = {}
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8", errors="replace").strip()
            if line and not line.startswith("#"):
                if "=" not in line:
                    raise ParseError(f"{path}: line without '=': {line!r}", offset=offset)
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
            offset += len(raw)
    return out


# --------------------------------------------------------------- checkpoints

def save_checkpoint(directory, arrays, config):
    """Write named arrays plus a config into a directory.

    Layout: manifest.txt maps tensor names to numbered .stf files,
    config.txt holds the key=value configuration.  Iteration is sorted,
    so equal inputs produce byte-identical directories.
    """
    os.makedirs(directory, exist_ok=True)
    lines = []
    for idx, name in enumerate(sorted(arrays)):
        fname = f"param_{idx:04d}.stf"
        write_stf(os.path.join(directory, fname), arrays[name])
        lines.append(f"{name}={fname}\n")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.writelines(lines)
    write_config(os.path.join(directory, "config.txt"), config)


def load_checkpoint(directory):
    """Returns (arrays, config) as written by save_checkpoint."""
    mapping = read_config(os.path.join(directory, "manifest.txt"))
    config = read_config(os.path.join(directory, "config.txt"))
    arrays = {}
    for name, fname in mapping.items():
        arrays[name] = read_stf(os.path.join(directory, fname))
    return arrays, config
