"""Image cleaning: rescale, template-matched crop, intensity normalization.

Images are 2-D numpy arrays indexed ``[row, col]``. Ingest is binary PGM
(P5); anything else should be converted beforehand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import SchemaError

__all__ = [
    "PreprocessConfig",
    "MatchResult",
    "read_pgm",
    "write_pgm",
    "resize_bilinear",
    "ncc_map",
    "match_template",
    "normalize",
    "preprocess_image",
    "default_template",
    "AffineParams",
    "warp_affine",
    "save_tensor",
    "load_tensor",
]


def _default_constants() -> dict:
    text = resources.files("chexhier.resources").joinpath("preprocess.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


_DEFAULTS = _default_constants()


@dataclass(frozen=True)
class PreprocessConfig:
    resize: int = _DEFAULTS["resize"]
    crop: int = _DEFAULTS["crop"]
    mean: float = _DEFAULTS["mean"]
    std: float = _DEFAULTS["std"]
    template: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.crop <= self.resize:
            raise ValueError("crop must be positive and no larger than resize")
        if self.std <= 0:
            raise ValueError("std must be positive")
        if self.template is not None and self.template.shape != (self.crop, self.crop):
            raise ValueError(
                f"template must be {self.crop}x{self.crop}, got {self.template.shape}"
            )

    def get_template(self) -> np.ndarray:
        return default_template(self.crop) if self.template is None else self.template


@dataclass(frozen=True)
class MatchResult:
    """Crop offset and NCC score. ``score`` is NaN when matching was
    undefined and a center crop was used instead (``fallback`` is True)."""

    offset: tuple[int, int]
    score: float
    fallback: bool = False


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM file, 8- or 16-bit."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SchemaError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise SchemaError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return pixels.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img)
    maxval = 255 if img.dtype == np.uint8 or img.max(initial=0) <= 255 else 65535
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + np.clip(img, 0, maxval).astype(dtype).tobytes())


def _bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample at fractional coordinates, clamping to the border (edge padding)."""
    h, w = img.shape
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.minimum(np.floor(rows).astype(int), h - 1)
    c0 = np.minimum(np.floor(cols).astype(int), w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    top = img[r0, c0] + fc * (img[r0, c1] - img[r0, c0])
    bottom = img[r1, c0] + fc * (img[r1, c1] - img[r1, c0])
    return top + fr * (bottom - top)


def resize_bilinear(img: np.ndarray, size: int | tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-center alignment."""
    img = np.asarray(img, dtype=float)
    out_h, out_w = (size, size) if isinstance(size, int) else size
    h, w = img.shape
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    R, C = np.meshgrid(rows, cols, indexing="ij")
    return _bilinear_sample(img, R, C)


def ncc_map(image: np.ndarray, template: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Zero-mean normalized cross-correlation at every valid offset.

    Entry ``[r, c]`` scores the window whose top-left corner is ``(r, c)``.
    Windows with (numerically) zero variance get NaN, as does the whole map
    when the template itself is flat.
    """
    image = np.asarray(image, dtype=float)
    template = np.asarray(template, dtype=float)
    th, tw = template.shape
    if image.shape[0] < th or image.shape[1] < tw:
        raise ValueError("template is larger than the image")
    t0 = template - template.mean()
    t_norm = math.sqrt(float(np.sum(t0 * t0)))
    windows = sliding_window_view(image, (th, tw))
    out = np.full(windows.shape[:2], np.nan)
    if t_norm <= rel_tol * (1.0 + float(np.abs(template).max())) * math.sqrt(t0.size):
        return out
    for r in range(windows.shape[0]):
        row = windows[r]
        means = row.mean(axis=(1, 2))
        centered = row - means[:, None, None]
        w_norm = np.sqrt(np.einsum("cij,cij->c", centered, centered))
        num = np.einsum("cij,ij->c", centered, t0)
        flat = w_norm <= rel_tol * (1.0 + np.abs(means)) * math.sqrt(t0.size)
        with np.errstate(invalid="ignore", divide="ignore"):
            score = num / (w_norm * t_norm)
        score[flat] = np.nan
        out[r] = np.clip(score, -1.0, 1.0)
    return out


def match_template(image: np.ndarray, template: np.ndarray) -> MatchResult:
    """Best NCC offset, ties going to the smallest (row, col).

    Falls back to the centered offset with a NaN score when no window
    yields a defined NCC.
    """
    scores = ncc_map(image, template)
    if np.isnan(scores).all():
        rows, cols = scores.shape
        return MatchResult(((rows - 1) // 2, (cols - 1) // 2), float("nan"), True)
    flat = np.nanargmax(scores)
    r, c = np.unravel_index(flat, scores.shape)
    return MatchResult((int(r), int(c)), float(scores[r, c]), False)


def normalize(img: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (np.asarray(img, dtype=float) / 255.0 - mean) / std


def preprocess_image(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()
                     ) -> tuple[np.ndarray, MatchResult]:
    """Rescale to ``resize``, crop at the best template match, normalize."""
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise SchemaError("expected a non-empty 2-D grayscale image")
    scaled = resize_bilinear(img, cfg.resize)
    match = match_template(scaled, cfg.get_template())
    r, c = match.offset
    crop = scaled[r:r + cfg.crop, c:c + cfg.crop]
    out = normalize(crop, cfg.mean, cfg.std)
    if not np.isfinite(out).all():
        raise SchemaError("preprocessed image has non-finite values")
    return out, match


def default_template(size: int = 224) -> np.ndarray:
    """Synthetic chest-like template: bright mediastinum between two darker
    elliptical lung fields, on a mid-gray background. Values in [0, 255]."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    u = (x + 0.5) / size - 0.5
    v = (y + 0.5) / size - 0.5
    img = np.full((size, size), 150.0)
    for cx in (-0.2, 0.2):
        lung = ((u - cx) / 0.17) ** 2 + ((v + 0.02) / 0.36) ** 2
        img -= 90.0 * np.exp(-2.5 * lung ** 2)
    img += 60.0 * np.exp(-((u / 0.06) ** 2) - ((v - 0.1) / 0.3) ** 2)
    img += 25.0 * (v + 0.5)
    return np.clip(img, 0.0, 255.0)


@dataclass(frozen=True)
class AffineParams:
    """Augmentation applied about the image center, in this order:
    horizontal flip, rotation (degrees, counter-clockwise), isotropic scale,
    horizontal shear (pixels of displacement at the top/bottom edge)."""

    flip: bool = False
    rotation: float = 0.0
    scale: float = 1.0
    shear: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.rotation == 0.0 and self.scale == 1.0 and self.shear == 0.0

    def matrix(self, height: int) -> np.ndarray:
        """Forward 2x2 map on centered (x, y) coordinates."""
        F = np.diag([-1.0 if self.flip else 1.0, 1.0])
        a = math.radians(self.rotation)
        R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        S = np.eye(2) * self.scale
        half = max(height / 2.0, 1.0)
        Sh = np.array([[1.0, self.shear / half], [0.0, 1.0]])
        return Sh @ S @ R @ F


def warp_affine(img: np.ndarray, params: AffineParams) -> np.ndarray:
    """Apply ``params`` with bilinear resampling and edge padding.

    Identity and pure flips are exact copies, with no resampling.
    """
    img = np.asarray(img, dtype=float)
    if params.is_identity:
        return img.copy()
    if params.flip and params.rotation == 0.0 and params.scale == 1.0 and params.shear == 0.0:
        return img[:, ::-1].copy()
    h, w = img.shape
    inv = np.linalg.inv(params.matrix(h))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    y, x = np.mgrid[0:h, 0:w].astype(float)
    pts = np.stack([x.ravel() - cx, y.ravel() - cy])
    src = inv @ pts
    cols = (src[0] + cx).reshape(h, w)
    rows = (src[1] + cy).reshape(h, w)
    return _bilinear_sample(img, rows, cols)


def save_tensor(path, arr: np.ndarray, **meta):
    """Write an array as JSON with ``repr`` floats (exact round trip)."""
    arr = np.asarray(arr, dtype=float)
    doc = {"shape": list(arr.shape), **meta, "data": arr.ravel().tolist()}
    Path(path).write_text(json.dumps(doc, allow_nan=False) + "\n", encoding="utf-8")


def load_tensor(path) -> np.ndarray:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return np.array(doc["data"], dtype=float).reshape(doc["shape"])
