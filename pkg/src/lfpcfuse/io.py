"""Readers and writers for the on-disk formats.

All binary formats are little-endian: a 4-byte magic, ``u32`` dimensions, then
a flat payload.

======  ==========  ====================================================
magic   extension   payload
======  ==========  ====================================================
LFPC    .lfpc       u32 N, N x 4 float32 ``(x, y, z, r)``
LFFM    .lffm       u32 c, h, w, c*h*w float32, channel-major
LFLM    .lflm       u32 h, w, h*w uint8 class ids (255 = ignore)
LFSG    .lfsg       u32 h, w, h*w float32 values, h*w uint8 mask
LFCM    .lfcm       12 float64 ``K``, 16 float64 ``T``, u32 H, W, h, w
======  ==========  ====================================================

Point clouds may also be ASCII (``.txt``/``.xyz``/``.asc``, one ``x y z r``
line per point) and cameras may be plain-text calibration files (``.txt``).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from lfpcfuse.errors import FormatError
from lfpcfuse.geometry import CameraModel, SparseGrid

ASCII_CLOUD_SUFFIXES = {".txt", ".xyz", ".asc"}

_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")
_U8 = np.dtype("u1")


def _header(data: bytes, magic: bytes, ndims: int, path) -> tuple[int, ...]:
    need = 4 + 4 * ndims
    if len(data) < need:
        raise FormatError(f"{path}: file is {len(data)} bytes, header alone needs {need}")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    return struct.unpack(f"<{ndims}I", data[4:need])


def _check_size(data: bytes, expected: int, path, what: str) -> None:
    if len(data) != expected:
        raise FormatError(
            f"{path}: {what} requires {expected} bytes, file has {len(data)} "
            f"({'truncated' if len(data) < expected else 'trailing data'})"
        )


def _u32(*dims: int) -> bytes:
    for d in dims:
        if not 0 <= d < 2**32:
            raise FormatError(f"dimension {d} does not fit in u32")
    return struct.pack(f"<{len(dims)}I", *dims)


# -- point clouds ---------------------------------------------------------------


def save_cloud(path, cloud: np.ndarray) -> None:
    path = Path(path)
    pts = np.asarray(cloud)
    if pts.size == 0:
        pts = pts.reshape(0, 4)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise FormatError(f"point cloud must be N x 4, got {pts.shape}")
    if path.suffix.lower() in ASCII_CLOUD_SUFFIXES:
        lines = [" ".join(repr(float(v)) for v in row) for row in pts]
        path.write_text("".join(line + "\n" for line in lines))
        return
    path.write_bytes(b"LFPC" + _u32(pts.shape[0]) + pts.astype(_F32).tobytes())


def load_cloud(path) -> np.ndarray:
    """``(N, 4)`` float32 for binary files, float64 for ASCII files."""
    path = Path(path)
    if path.suffix.lower() in ASCII_CLOUD_SUFFIXES:
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 values 'x y z r', got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
        return np.array(rows, dtype=np.float64).reshape(-1, 4)
    data = path.read_bytes()
    (n,) = _header(data, b"LFPC", 1, path)
    _check_size(data, 8 + 16 * n, path, f"{n} points")
    return np.frombuffer(data, dtype=_F32, offset=8).reshape(n, 4).copy()


# -- feature maps / depth maps -----------------------------------------------


def save_feature_map(path, fmap: np.ndarray) -> None:
    f = np.asarray(fmap)
    if f.ndim == 2:
        f = f[None]
    if f.ndim != 3:
        raise FormatError(f"feature map must be c x h x w, got {f.shape}")
    Path(path).write_bytes(b"LFFM" + _u32(*f.shape) + np.ascontiguousarray(f, dtype=_F32).tobytes())


def load_feature_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    c, h, w = _header(data, b"LFFM", 3, path)
    _check_size(data, 16 + 4 * c * h * w, path, f"{c}x{h}x{w} float32 map")
    return np.frombuffer(data, dtype=_F32, offset=16).reshape(c, h, w).copy()


# -- label maps ----------------------------------------------------------------


def save_label_map(path, labels: np.ndarray) -> None:
    y = np.asarray(labels)
    if y.ndim == 1:
        y = y[None]
    if y.ndim != 2:
        raise FormatError(f"label map must be 2-D, got {y.shape}")
    if y.size and (y.min() < 0 or y.max() > 255):
        raise FormatError("labels must fit in uint8")
    Path(path).write_bytes(b"LFLM" + _u32(*y.shape) + y.astype(_U8).tobytes())


def load_label_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    h, w = _header(data, b"LFLM", 2, path)
    _check_size(data, 12 + h * w, path, f"{h}x{w} uint8 label map")
    return np.frombuffer(data, dtype=_U8, offset=12).reshape(h, w).copy()


# -- sparse grids --------------------------------------------------------------


def save_sparse_grid(path, grid: SparseGrid) -> None:
    h, w = grid.shape
    Path(path).write_bytes(
        b"LFSG"
        + _u32(h, w)
        + grid.values.astype(_F32).tobytes()
        + grid.mask.astype(_U8).tobytes()
    )


def load_sparse_grid(path) -> SparseGrid:
    data = Path(path).read_bytes()
    h, w = _header(data, b"LFSG", 2, path)
    _check_size(data, 12 + 5 * h * w, path, f"{h}x{w} sparse grid")
    values = np.frombuffer(data, dtype=_F32, offset=12, count=h * w).reshape(h, w)
    raw = np.frombuffer(data, dtype=_U8, offset=12 + 4 * h * w).reshape(h, w)
    if np.any(raw > 1):
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    mask = raw.astype(bool)
    if np.any(values[~mask] != 0):
        raise FormatError(f"{path}: unmasked cells must hold 0")
    grid = SparseGrid(values.astype(np.float64), mask)
    return grid


# -- cameras -------------------------------------------------------------------


def save_camera(path, camera: CameraModel) -> None:
    path = Path(path)
    if path.suffix.lower() == ".txt":
        path.write_text(format_calibration(camera))
        return
    path.write_bytes(
        b"LFCM"
        + camera.K.astype(_F64).tobytes()
        + camera.T.astype(_F64).tobytes()
        + _u32(camera.H, camera.W, camera.h, camera.w)
    )


def load_camera(path) -> CameraModel:
    path = Path(path)
    if path.suffix.lower() == ".txt":
        return parse_calibration(path.read_text(), source=str(path))
    data = path.read_bytes()
    _header(data, b"LFCM", 0, path)
    _check_size(data, 4 + 28 * 8 + 16, path, "camera record")
    K = np.frombuffer(data, dtype=_F64, offset=4, count=12).reshape(3, 4)
    T = np.frombuffer(data, dtype=_F64, offset=100, count=16).reshape(4, 4)
    H, W, h, w = struct.unpack("<4I", data[228:244])
    return CameraModel(K=K.copy(), T=T.copy(), H=H, W=W, h=h, w=w)


def format_calibration(camera: CameraModel) -> str:
    rows = ["K"]
    rows += [" ".join(repr(float(x)) for x in r) for r in camera.K]
    rows.append("T")
    rows += [" ".join(repr(float(x)) for x in r) for r in camera.T]
    rows.append(f"SIZE {camera.H} {camera.W} {camera.h} {camera.w}")
    return "\n".join(rows) + "\n"


def parse_calibration(text: str, source: str = "<calibration>") -> CameraModel:
    """Parse ``K`` (3 rows x 4), ``T`` (4 rows x 4) and ``SIZE H W h w``."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    blocks: dict[str, object] = {}
    i = 0
    while i < len(lines):
        tag = lines[i][0].upper()
        if tag in ("K", "T"):
            nrows = 3 if tag == "K" else 4
            if len(lines[i]) != 1:
                raise FormatError(f"{source}: '{tag}' must stand alone on its line")
            rows = lines[i + 1:i + 1 + nrows]
            if len(rows) != nrows:
                raise FormatError(f"{source}: {tag} needs {nrows} rows, found {len(rows)}")
            for r in rows:
                if len(r) != 4:
                    raise FormatError(f"{source}: {tag} rows need 4 values, got {len(r)}")
            try:
                blocks[tag] = np.array([[float(x) for x in r] for r in rows])
            except ValueError as exc:
                raise FormatError(f"{source}: {exc}") from None
            i += 1 + nrows
        elif tag == "SIZE":
            if len(lines[i]) != 5:
                raise FormatError(f"{source}: SIZE needs 'SIZE H W h w'")
            try:
                blocks["SIZE"] = [int(x) for x in lines[i][1:]]
            except ValueError as exc:
                raise FormatError(f"{source}: {exc}") from None
            i += 1
        else:
            raise FormatError(f"{source}: unexpected line starting with {lines[i][0]!r}")
    missing = {"K", "T", "SIZE"} - blocks.keys()
    if missing:
        raise FormatError(f"{source}: missing section(s) {sorted(missing)}")
    H, W, h, w = blocks["SIZE"]  # type: ignore[misc]
    return CameraModel(K=blocks["K"], T=blocks["T"], H=H, W=W, h=h, w=w)  # type: ignore[arg-type]
