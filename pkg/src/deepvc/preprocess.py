"""Image enhancement before training: fuzzy non-local filtering, Laplacian
sharpening, bilinear standardization and horizontal-flip augmentation."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from . import _kernels
from .data import Dataset, ImageSample

SIGMA_FLOOR = 1e-4
# Gaussian consistency constant for the median absolute deviation
_MAD_TO_STD = 1.482602218505602
SHARPEN_KERNEL = np.array([[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class FuzzyFilterConfig:
    window_side: int = 5
    search_radius: int = 10
    max_matches: int = 16
    mean_tolerance: float = 0.05
    var_tolerance: float = 0.01
    sigma: Union[float, str] = "auto"

    def __post_init__(self):
        if self.window_side < 3 or self.window_side % 2 == 0:
            raise ValueError(f"window_side must be odd and >= 3, got {self.window_side}")
        if self.search_radius < self.window_side / 2:
            raise ValueError("search_radius must be at least window_side / 2")
        if self.max_matches < 1:
            raise ValueError("max_matches must be >= 1")
        if self.mean_tolerance <= 0 or self.var_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if isinstance(self.sigma, str):
            if self.sigma != "auto":
                raise ValueError(f"sigma must be a positive number or 'auto', got {self.sigma!r}")
        elif not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class PreprocessFlags:
    fuzzy: bool = True
    sharpen: bool = True
    flip: bool = True
    side: Optional[int] = 224

    def disabled(self) -> "PreprocessFlags":
        return PreprocessFlags(fuzzy=False, sharpen=False, flip=False, side=self.side)

    def to_dict(self):
        return asdict(self)


def estimate_noise_sigma(image: np.ndarray) -> float:
    """Noise std from the MAD of the 4-neighbour Laplacian response.

    For white noise of std s the response has std sqrt(20) * s. Returns
    ``SIGMA_FLOOR`` for (near) constant images.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.size == 0:
        raise ValueError("image is empty")
    if x.ndim != 2 or min(x.shape) < 3:
        return SIGMA_FLOOR
    lap = (x[1:-1, :-2] + x[1:-1, 2:] + x[:-2, 1:-1] + x[2:, 1:-1]) - 4.0 * x[1:-1, 1:-1]
    mad = np.median(np.abs(lap - np.median(lap)))
    sigma = _MAD_TO_STD * mad / np.sqrt(20.0)
    return float(max(sigma, SIGMA_FLOOR))


def fuzzy_filter(image: np.ndarray, cfg: FuzzyFilterConfig = FuzzyFilterConfig(),
                 backend: Optional[str] = None) -> np.ndarray:
    """Fuzzy non-local filter.

    Each pixel becomes the Gaussian-weighted average of the centre pixels of
    the local window and up to ``max_matches - 1`` non-local windows inside the
    search region. Candidates must match the local window's mean and variance
    within the tolerances; among those the closest (Euclidean window distance)
    are kept, ties going to the earlier row-major offset. Weights are
    ``exp(-d**2 / (2 sigma**2))``; borders are reflect-padded and the output is
    clamped to [0, 1].
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {x.shape}")
    H, W = x.shape
    w = cfg.window_side
    if H <= w or W <= w:
        raise ValueError(f"window side {w} does not fit inside a {H}x{W} image")
    sigma = estimate_noise_sigma(x) if cfg.sigma == "auto" else float(cfg.sigma)
    padded = np.ascontiguousarray(np.pad(x, w // 2, mode="reflect"))
    if backend is None:
        kernel = _kernels.fuzzy_filter_kernel
    elif backend == "python":
        kernel = _kernels.PYTHON_KERNELS["fuzzy_filter_kernel"]
    elif backend == "cython":
        if _kernels.COMPILED_KERNELS is None:
            raise RuntimeError("compiled kernels are not available")
        kernel = _kernels.COMPILED_KERNELS["fuzzy_filter_kernel"]
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return kernel(padded, H, W, w, cfg.search_radius, cfg.max_matches,
                  float(cfg.mean_tolerance), float(cfg.var_tolerance), sigma)


def sharpen(image: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Convolve with the 4-neighbour Laplacian sharpening kernel (reflect borders)."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 3:
        raise ValueError(f"sharpen needs an image of at least 3x3, got {x.shape}")
    p = np.pad(x, 1, mode="reflect")
    # centre plus the four differences: same kernel, exact on flat regions
    out = x + ((x - p[:-2, 1:-1]) + (x - p[2:, 1:-1]) + (x - p[1:-1, :-2]) + (x - p[1:-1, 2:]))
    return np.clip(out, 0.0, 1.0) if clamp else out


def _resize_axis(x: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = x.shape[axis]
    if in_len == out_len:
        return x
    src = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    src = np.clip(src, 0.0, in_len - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_len - 1)
    frac = src - lo
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    shape = [1, 1]
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def standardize(image: np.ndarray, side: int = 224) -> np.ndarray:
    """Bilinear resize to ``side`` x ``side`` (half-pixel centres)."""
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    x = np.asarray(image, dtype=np.float64)
    if x.shape == (side, side):
        return x.copy()
    out = _resize_axis(_resize_axis(x, side, 0), side, 1)
    return np.clip(out, 0.0, 1.0)


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image)[:, ::-1])


def augment_hflip(dataset: Dataset) -> Dataset:
    """Originals plus left-right mirrored copies with ids suffixed ``:flip``."""
    flipped = [s.with_pixels(hflip(s.pixels), id=f"{s.id}:flip") for s in dataset]
    return dataset.replace(list(dataset.samples) + flipped)


def preprocess_image(image: np.ndarray, flags: PreprocessFlags = PreprocessFlags(),
                     cfg: FuzzyFilterConfig = FuzzyFilterConfig()) -> np.ndarray:
    """Enhance one image: fuzzy filter, sharpen, then standardize (each optional)."""
    x = np.asarray(image, dtype=np.float64)
    if flags.fuzzy:
        x = fuzzy_filter(x, cfg)
    if flags.sharpen:
        x = sharpen(x)
    if flags.side is not None:
        x = standardize(x, flags.side)
    return x


def preprocess_pipeline(dataset: Dataset, cfg: FuzzyFilterConfig = FuzzyFilterConfig(),
                        flags: PreprocessFlags = PreprocessFlags(), train: bool = True) -> Dataset:
    """Apply the enhancement stages to every sample; flips are added for training sets only."""
    out = dataset.replace(ImageSample(s.id, preprocess_image(s.pixels, flags, cfg), s.label, s.source_path)
                          for s in dataset)
    if train and flags.flip:
        out = augment_hflip(out)
    return out
