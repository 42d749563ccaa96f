"""Readers and writers for the on-disk exchange formats.

* tensors: NPY v1.0/v2.0, C order, float32/float64
* optical flow: Middlebury ``.flo``
* masks and frames: 8-bit PNG, frame directories named ``%05d.png``

See ``docs/formats.md`` for the byte layouts.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format
from PIL import Image

from .errors import FormatError

FLO_MAGIC = np.float32(202021.25)
UNKNOWN_FLOW = 1e9
FRAME_PATTERN = "{:05d}.png"

_TENSOR_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


@dataclass
class FlowField:
    """Per-pixel displacement ``(u, v)`` in pixels, with an optional occlusion map."""

    u: np.ndarray
    v: np.ndarray
    occlusion: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, h: int, w: int) -> "FlowField":
        return cls(np.zeros((h, w)), np.zeros((h, w)))

    def valid(self) -> np.ndarray:
        """Pixels whose flow is known (below the ``.flo`` sentinel)."""
        return (np.abs(self.u) < UNKNOWN_FLOW) & (np.abs(self.v) < UNKNOWN_FLOW)


def _atomic_write_bytes(path: Path, write) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        write(fh)
    os.replace(tmp, path)


# -- NPY ---------------------------------------------------------------------

def read_tensor(path, dtype=None) -> np.ndarray:
    """Read an NPY tensor, validating header and payload length.

    ``dtype`` optionally converts the result (e.g. widening float32 files
    to float64, which is exact).
    """
    with open(path, "rb") as fh:
        try:
            version = npy_format.read_magic(fh)
        except ValueError as exc:
            raise FormatError(f"{path}: not an NPY file ({exc})") from None
        if version == (1, 0):
            shape, fortran, file_dtype = npy_format.read_array_header_1_0(fh)
        elif version == (2, 0):
            shape, fortran, file_dtype = npy_format.read_array_header_2_0(fh)
        else:
            raise FormatError(f"{path}: unsupported NPY version {version}")
        if fortran:
            raise FormatError(f"{path}: Fortran-order arrays are not supported")
        if file_dtype.kind != "f" or file_dtype.itemsize not in (4, 8):
            raise FormatError(f"{path}: unsupported dtype {file_dtype}")
        count = int(np.prod(shape, dtype=np.int64))
        payload = fh.read(count * file_dtype.itemsize)
    if len(payload) < count * file_dtype.itemsize:
        raise FormatError(
            f"{path}: payload short ({len(payload)} of {count * file_dtype.itemsize} bytes)"
        )
    arr = np.frombuffer(payload, dtype=file_dtype).reshape(shape)
    arr = arr.astype(file_dtype.newbyteorder("="), copy=True)
    if dtype is not None:
        arr = arr.astype(dtype)
    return arr


def write_tensor(t: np.ndarray, path) -> None:
    """Write a float32/float64 tensor as NPY v1.0 (C order)."""
    t = np.asarray(t)
    if t.dtype not in _TENSOR_DTYPES:
        raise FormatError(f"unsupported dtype {t.dtype}; expected float32 or float64")
    t = np.ascontiguousarray(t)
    _atomic_write_bytes(
        Path(path), lambda fh: npy_format.write_array(fh, t, version=(1, 0), allow_pickle=False)
    )


# -- Middlebury .flo ----------------------------------------------------------

def read_flo(path) -> FlowField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: not a .flo file (header truncated)")
    magic = np.frombuffer(data, "<f4", count=1)[0]
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: not a .flo file (magic {magic!r})")
    w, h = (int(x) for x in np.frombuffer(data, "<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: invalid .flo size {w}x{h}")
    need = 2 * w * h
    if len(data) - 12 < need * 4:
        raise FormatError(f"{path}: payload short")
    uv = np.frombuffer(data, "<f4", count=need, offset=12).reshape(h, w, 2)
    return FlowField(uv[..., 0].astype(np.float32), uv[..., 1].astype(np.float32))


def write_flo(flow: FlowField, path) -> None:
    u = np.asarray(flow.u, dtype="<f4")
    v = np.asarray(flow.v, dtype="<f4")
    if u.shape != v.shape or u.ndim != 2:
        raise FormatError("flow components must be matching 2-D arrays")
    h, w = u.shape
    header = FLO_MAGIC.astype("<f4").tobytes() + np.array([w, h], "<i4").tobytes()
    payload = np.stack([u, v], axis=-1).tobytes()
    _atomic_write_bytes(Path(path), lambda fh: fh.write(header + payload))


# -- PNG masks and frames -------------------------------------------------------

def read_mask(path) -> np.ndarray:
    """Single-channel mask; pixels >= 128 are foreground. Returns uint8 {0, 1}."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def write_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError("mask must be 2-D")
    Image.fromarray(np.where(mask > 0, 255, 0).astype(np.uint8), mode="L").save(path)


def read_frame(path) -> np.ndarray:
    """RGB frame as float64 ``H x W x 3`` in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_frame(frame: np.ndarray, path) -> None:
    """Write an ``H x W x C`` frame in [0, 1]; one channel -> grayscale, else first three."""
    frame = np.asarray(frame)
    if frame.ndim == 2 or frame.shape[-1] == 1:
        Image.fromarray(to_uint8(frame.reshape(frame.shape[:2])), mode="L").save(path)
        return
    if frame.shape[-1] == 2:
        frame = np.concatenate([frame, np.zeros(frame.shape[:2] + (1,))], axis=-1)
    Image.fromarray(to_uint8(frame[..., :3]), mode="RGB").save(path)


def _indexed_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FormatError(f"{directory}: no PNG files")
    return files


def read_frame_dir(directory) -> np.ndarray:
    frames = [read_frame(p) for p in _indexed_pngs(directory)]
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"{directory}: frames differ in size")
    return np.stack(frames)


def write_frame_dir(frames: np.ndarray, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_frame(frame, directory / FRAME_PATTERN.format(i))


def read_mask_dir(directory) -> np.ndarray:
    masks = [read_mask(p) for p in _indexed_pngs(directory)]
    if len({m.shape for m in masks}) != 1:
        raise FormatError(f"{directory}: masks differ in size")
    return np.stack(masks)


def write_mask_dir(masks: np.ndarray, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        write_mask(m, directory / FRAME_PATTERN.format(i))
