"""Raster and embedding file formats.

* PGM/PPM (P5/P6), 8-bit or 16-bit big-endian samples.
* PFM depth maps (little-endian, scale -1, rows stored bottom-up).
* RGTD raw float32 rasters: 16-byte header ``b"RGTD", width, height, reserved``
  (u32 little-endian) followed by row-major little-endian float32.
* RGTE embedding sets: header ``b"RGTE", version u32, count u32, dim u32,
  modality u8, has_pos u8``, float32 rows, optional float32 positions, then
  newline-delimited UTF-8 ids. ``has_pos`` is 0 (none), 1 (x, y, z metres) or
  2 (one frame index per row).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .crossmodal import MODALITIES, EmbeddingSet
from .errors import ValidationError

RGTD_MAGIC = b"RGTD"
RGTE_MAGIC = b"RGTE"
RGTE_VERSION = 1
_RGTE_HEADER = struct.Struct("<4sIIIBB")


def _need(buf: bytes, nbytes: int, path):
    if len(buf) < nbytes:
        raise ValidationError(f"{path}: truncated file ({len(buf)} of {nbytes} bytes)")


def _read_token(buf: bytes, pos: int):
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (H x W) or PPM (H x W x 3)."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ValidationError(f"{path}: not a binary PGM/PPM")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise ValidationError(f"{path}: malformed PNM header")
        fields.append(int(tok))
    w, h, maxval = fields
    pos += 1  # single whitespace byte before raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    _need(buf, pos + n * dtype.itemsize, path)
    data = np.frombuffer(buf, dtype=dtype, count=n, offset=pos)
    img = data.reshape((h, w, ch) if ch == 3 else (h, w))
    return img.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pnm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise ValidationError("PNM output needs an H x W or H x W x 3 array")
    if img.dtype == np.uint8:
        maxval, data = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, data = 65535, img.astype(">u2").tobytes()
    else:
        raise ValidationError(f"unsupported PNM dtype {img.dtype}")
    h, w = img.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + data)


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    lines = buf.split(b"\n", 3)
    kind = lines[0].strip()
    if kind not in (b"Pf", b"PF") or len(lines) < 4:
        raise ValidationError(f"{path}: not a PFM file")
    w, h = (int(x) for x in lines[1].split())
    scale = float(lines[2])
    ch = 3 if kind == b"PF" else 1
    _need(lines[3], 4 * w * h * ch, path)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(lines[3], dtype=dtype, count=w * h * ch)
    img = data.reshape((h, w, ch) if ch == 3 else (h, w))[::-1]
    return img.astype(np.float32)


def write_pfm(path, img: np.ndarray):
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 2:
        raise ValidationError("only single-channel PFM is written")
    h, w = img.shape
    Path(path).write_bytes(f"Pf\n{w} {h}\n-1.0\n".encode() + img[::-1].tobytes())


def read_rgtd(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _need(buf, 16, path)
    magic, w, h, _ = struct.unpack_from("<4sIII", buf)
    if magic != RGTD_MAGIC:
        raise ValidationError(f"{path}: bad RGTD magic")
    _need(buf, 16 + 4 * w * h, path)
    return np.frombuffer(buf, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(np.float32)


def write_rgtd(path, img: np.ndarray):
    img = np.asarray(img, dtype="<f4")
    h, w = img.shape
    Path(path).write_bytes(struct.pack("<4sIII", RGTD_MAGIC, w, h, 0) + img.tobytes())


def read_depth(path) -> np.ndarray:
    """Depth map from PFM or RGTD, chosen by the file's magic bytes."""
    head = Path(path).read_bytes()[:4]
    if head == RGTD_MAGIC:
        return read_rgtd(path)
    return read_pfm(path)


def read_embeddings(path) -> EmbeddingSet:
    buf = Path(path).read_bytes()
    _need(buf, _RGTE_HEADER.size, path)
    magic, version, count, dim, modality, has_pos = _RGTE_HEADER.unpack_from(buf)
    if magic != RGTE_MAGIC:
        raise ValidationError(f"{path}: bad RGTE magic")
    if version != RGTE_VERSION:
        raise ValidationError(f"{path}: unsupported RGTE version {version}")
    if modality >= len(MODALITIES) or has_pos not in (0, 1, 2):
        raise ValidationError(f"{path}: corrupt RGTE header")
    off = _RGTE_HEADER.size
    pdim = {0: 0, 1: 3, 2: 1}[has_pos]
    _need(buf, off + 4 * count * (dim + pdim), path)
    vec = np.frombuffer(buf, "<f4", count * dim, off).reshape(count, dim)
    off += 4 * count * dim
    positions = None
    if has_pos:
        positions = np.frombuffer(buf, "<f4", count * pdim, off).astype(np.float64)
        positions = positions.reshape(count, 3) if pdim == 3 else positions
        off += 4 * count * pdim
    text = buf[off:].decode("utf-8")
    ids = text.split("\n")[:count] if count else []
    if len(ids) != count:
        raise ValidationError(f"{path}: expected {count} ids")
    return EmbeddingSet(vec.astype(np.float64), ids, MODALITIES[modality], positions)


def write_embeddings(path, emb: EmbeddingSet):
    count, dim = emb.vectors.shape
    if emb.positions is None:
        has_pos, pos = 0, b""
    elif emb.positions.ndim == 1:
        has_pos, pos = 2, np.asarray(emb.positions, "<f4").tobytes()
    else:
        has_pos, pos = 1, np.asarray(emb.positions, "<f4").reshape(count, 3).tobytes()
    if any("\n" in i for i in emb.ids):
        raise ValidationError("embedding ids may not contain newlines")
    header = _RGTE_HEADER.pack(RGTE_MAGIC, RGTE_VERSION, count, dim,
                               MODALITIES.index(emb.modality), has_pos)
    ids = "".join(i + "\n" for i in emb.ids).encode("utf-8")
    Path(path).write_bytes(header + np.asarray(emb.vectors, "<f4").tobytes() + pos + ids)
