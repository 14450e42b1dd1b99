"""Dataset loading and image preprocessing.

Images go through grayscale conversion, per-image standardization, local
contrast normalization and a cosine edge taper, in that order.  Besides
8-bit raster images (PNG, BMP, TIFF, PGM) the loader accepts ``.npy``
files, whose header carries dtype and shape, for n-D signals.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..errors import InvalidInputError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".pgm", ".ppm")
RAW_SUFFIXES = (".npy",)


@dataclass(frozen=True)
class LcnConfig:
    kernel_size: int = 9
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidInputError(f"LCN kernel size must be odd, got {self.kernel_size}")
        if not self.epsilon > 0:
            raise InvalidInputError(f"LCN epsilon must be positive, got {self.epsilon}")

    @property
    def sigma(self):
        return self.kernel_size / 4


@dataclass(frozen=True)
class TaperConfig:
    margin: int = 8
    window: str = "cosine"

    def __post_init__(self):
        if self.margin < 0:
            raise InvalidInputError("taper margin must be nonnegative")
        if self.window != "cosine":
            raise InvalidInputError(f"unsupported taper window {self.window!r}")


@dataclass(frozen=True)
class PreprocessConfig:
    grayscale: bool = True
    standardize: bool = True
    lcn: LcnConfig | None = field(default_factory=LcnConfig)
    taper: TaperConfig | None = field(default_factory=TaperConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        lcn = d.pop("lcn", {})
        taper = d.pop("taper", {})
        return cls(lcn=None if lcn is None else LcnConfig(**lcn),
                   taper=None if taper is None else TaperConfig(**taper), **d)

    def to_dict(self):
        return asdict(self)


@dataclass
class ManifestEntry:
    filename: str
    shape: tuple
    sha256: str
    ok: bool = True
    error: str = ""

    def to_dict(self):
        return {"filename": self.filename, "shape": list(self.shape), "sha256": self.sha256,
                "ok": self.ok, "error": self.error}


def to_grayscale(img):
    """Luma (ITU-R 601) of an RGB(A) array; 2-D arrays pass through."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[-1] in (3, 4):
        return img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def standardize(x):
    """Zero mean, unit variance.  A constant input yields zeros and a warning."""
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if not sd > 0:
        warnings.warn("zero-variance image replaced by zeros", RuntimeWarning, stacklevel=2)
        return np.zeros_like(x)
    out = (x - x.mean()) / sd
    # one refinement pass pins the mean and variance to rounding level
    return (out - out.mean()) / out.std()


def local_contrast_normalize(x, config=LcnConfig()):
    """Subtract the Gaussian-weighted local mean, divide by the local deviation."""
    x = np.asarray(x, dtype=float)
    radius = config.kernel_size // 2
    blur = dict(sigma=config.sigma, mode="reflect", truncate=radius / config.sigma)
    v = x - gaussian_filter(x, **blur)
    sigma_local = np.sqrt(gaussian_filter(v * v, **blur))
    return v / (sigma_local + config.epsilon)


def taper_window(shape, margin):
    """Separable window rising as a half cosine from 0 to 1 over ``margin`` samples."""
    if any(2 * margin >= n for n in shape):
        raise InvalidInputError(f"taper margin {margin} too large for shape {tuple(shape)}")
    w = np.ones(tuple(shape))
    ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(margin) + 0.5) / margin)
    for axis, n in enumerate(shape):
        prof = np.ones(n)
        if margin:
            prof[:margin] = ramp
            prof[n - margin:] = ramp[::-1]
        view = [1] * len(shape)
        view[axis] = n
        w = w * prof.reshape(view)
    return w


def edge_taper(x, config=TaperConfig()):
    x = np.asarray(x, dtype=float)
    return x * taper_window(x.shape, config.margin)


def preprocess(x, config=PreprocessConfig()):
    if config.grayscale:
        x = to_grayscale(x)
    x = np.asarray(x, dtype=float)
    if config.standardize:
        x = standardize(x)
    if config.lcn is not None:
        x = local_contrast_normalize(x, config.lcn)
    if config.taper is not None:
        x = edge_taper(x, config.taper)
    return x


def read_signal(path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in RAW_SUFFIXES:
        a = np.load(path, allow_pickle=False)
        if a.dtype.kind not in "uif":
            raise InvalidInputError(f"{path.name}: unsupported dtype {a.dtype}")
        return a.astype(float)
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA", "P"):
            raise InvalidInputError(f"{path.name}: unsupported image mode {im.mode}")
        if im.mode == "P":
            im = im.convert("RGB")
        return np.asarray(im, dtype=float)


def list_files(path):
    root = Path(path)
    if root.is_file():
        return [root]
    if not root.is_dir():
        raise InvalidInputError(f"dataset path {root} does not exist")
    return sorted(p for p in root.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES + RAW_SUFFIXES)


def load_dataset(path, config=PreprocessConfig(), shape=None):
    """Preprocessed signals from a directory (lexicographic order) and a manifest.

    Unreadable files, and files whose shape differs from ``shape`` (default:
    the first readable file), are flagged in the manifest and skipped.
    Raises :class:`InvalidInputError` when nothing usable remains.
    """
    signals, manifest = [], []
    expected = None if shape is None else tuple(shape)
    for p in list_files(path):
        raw = p.read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        try:
            x = preprocess(read_signal(p), config)
        except (InvalidInputError, OSError, ValueError) as err:
            log.warning("skipping %s: %s", p.name, err)
            manifest.append(ManifestEntry(p.name, (), digest, False, str(err)))
            continue
        if expected is None:
            expected = x.shape
        if x.shape != expected:
            msg = f"shape {x.shape} differs from {expected}"
            log.warning("skipping %s: %s", p.name, msg)
            manifest.append(ManifestEntry(p.name, x.shape, digest, False, msg))
            continue
        signals.append(x)
        manifest.append(ManifestEntry(p.name, x.shape, digest))
    if not signals:
        raise InvalidInputError(f"no usable signals found in {path}")
    return signals, manifest
