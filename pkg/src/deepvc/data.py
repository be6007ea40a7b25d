"""Image datasets: directory + manifest loading, MNIST IDX files, seeded splits."""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MANIFEST_NAME = "manifest.csv"


class DataFormatError(ValueError):
    """Raised for undecodable images, malformed manifests or IDX headers."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageSample:
    id: str
    pixels: np.ndarray
    label: Optional[int] = None
    source_path: Optional[str] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"sample {self.id!r}: pixels must be a non-empty 2-D array, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"sample {self.id!r}: intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self):
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray, id: Optional[str] = None) -> "ImageSample":
        return ImageSample(id=self.id if id is None else id, pixels=pixels,
                           label=self.label, source_path=self.source_path)


@dataclass(frozen=True)
class Dataset:
    """Ordered, immutable collection of samples, sorted by id."""

    samples: tuple
    name: str = "dataset"
    class_names: Optional[tuple] = None

    def __post_init__(self):
        samples = tuple(sorted(self.samples, key=lambda s: s.id))
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset {self.name!r}: sample ids must be unique")
        object.__setattr__(self, "samples", samples)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    @property
    def has_labels(self) -> bool:
        return len(self.samples) > 0 and all(s.label is not None for s in self.samples)

    def labels(self) -> np.ndarray:
        """Ground-truth labels; -1 where a sample is unlabeled."""
        return np.array([-1 if s.label is None else s.label for s in self.samples], dtype=np.int64)

    def images(self) -> np.ndarray:
        """Stack pixels into an (M, H, W) float32 array; all samples must share one shape."""
        if not self.samples:
            return np.zeros((0, 0, 0), dtype=np.float32)
        shapes = {s.shape for s in self.samples}
        if len(shapes) != 1:
            raise ValueError(f"dataset {self.name!r} mixes image shapes {sorted(shapes)}; standardize first")
        return np.stack([s.pixels for s in self.samples]).astype(np.float32)

    def replace(self, samples: Iterable[ImageSample], name: Optional[str] = None) -> "Dataset":
        return Dataset(tuple(samples), name=self.name if name is None else name,
                       class_names=self.class_names)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction <= 1.0):
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


# --------------------------------------------------------------------------- images

def read_image(path) -> np.ndarray:
    """Decode an image file into a float64 grayscale array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataFormatError(f"cannot decode image {path}: {exc}") from exc

    if mode in ("RGB", "RGBA", "LA", "CMYK", "YCbCr"):
        if mode == "LA":
            arr = arr[..., :1]
        elif mode == "RGBA":
            arr = arr[..., :3]
        # luminance as plain channel average
        arr = arr.astype(np.float64).mean(axis=-1)
        scale = 255.0
    elif mode in ("I;16", "I;16B", "I;16L", "I;16N", "I"):
        scale = 65535.0
    elif mode in ("L", "1"):
        scale = 255.0 if mode == "L" else 1.0
    elif mode == "F":
        scale = 1.0
    else:
        raise DataFormatError(f"unsupported image mode {mode!r} in {path}")
    out = np.asarray(arr, dtype=np.float64) / scale
    return np.clip(out, 0.0, 1.0)


def write_image(path, pixels: np.ndarray) -> None:
    """Write a [0, 1] image as a 16-bit grayscale PNG."""
    px = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    arr = np.round(px * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(Path(path))


def read_manifest(path) -> list:
    """Rows of ``id,filename,label``; the label column is optional."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"id", "filename"} <= cols:
            raise DataFormatError(f"manifest {path} needs columns id,filename[,label]; got {sorted(cols)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            label = (row.get("label") or "").strip()
            try:
                lab = int(label) if label else None
            except ValueError:
                raise DataFormatError(f"manifest {path}:{lineno}: label {label!r} is not an integer") from None
            rows.append((row["id"].strip(), row["filename"].strip(), lab))
    return rows


def load_directory(path, manifest=None, name: Optional[str] = None) -> Dataset:
    """Load every image directly under ``path``.

    Files listed in the manifest take its id and label; other images keep their
    file stem as id and stay unlabeled. A ``manifest.csv`` inside ``path`` is
    picked up automatically.
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"no such directory: {root}")
    if not root.is_dir():
        raise NotADirectoryError(f"not a directory: {root}")
    if manifest is None and (root / MANIFEST_NAME).is_file():
        manifest = root / MANIFEST_NAME

    entries = {}
    for fpath in sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()):
        entries[fpath.resolve()] = (fpath.stem, None, fpath)
    if manifest is not None:
        for sid, fname, label in read_manifest(manifest):
            fpath = root / fname
            if not fpath.is_file():
                raise FileNotFoundError(f"manifest row {sid!r} references missing file {fpath}")
            entries[fpath.resolve()] = (sid, label, fpath)
    if not entries:
        raise DataFormatError(f"no images found in {root}")
    samples = tuple(ImageSample(sid, read_image(fpath), label, str(fpath))
                    for sid, label, fpath in entries.values())
    return Dataset(samples, name=name or root.name)


# --------------------------------------------------------------------------- MNIST

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _open_maybe_gz(path: Path):
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.is_file():
            return gzip.open(candidate, "rb") if candidate.suffix == ".gz" else open(candidate, "rb")
    raise FileNotFoundError(f"missing IDX file {path}[.gz]")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) of unsigned bytes."""
    with _open_maybe_gz(Path(path)) as fh:
        header = fh.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise DataFormatError(f"{path}: malformed IDX header")
        dtype_code, ndim = header[2], header[3]
        if dtype_code != 0x08:
            raise DataFormatError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}")
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise DataFormatError(f"{path}: expected {int(np.prod(dims))} values, found {data.size}")
    return data.reshape(dims)


def mnist_available(root) -> bool:
    root = Path(root)
    return all((root / f).is_file() or (root / (f + ".gz")).is_file()
               for f in _MNIST_FILES["train"])


def load_mnist(root, subset_size: Optional[int] = None, seed: int = 0, split: str = "train") -> Dataset:
    """Load an MNIST split from IDX files under ``root`` (no network access)."""
    if split not in _MNIST_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    img_name, lab_name = _MNIST_FILES[split]
    images = read_idx(Path(root) / img_name)
    labels = read_idx(Path(root) / lab_name)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise DataFormatError(f"{root}: inconsistent MNIST image/label files")
    idx = np.arange(len(images))
    if subset_size is not None:
        if not (1 <= subset_size <= len(images)):
            raise ValueError(f"subset_size must lie in [1, {len(images)}]")
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(images), size=subset_size, replace=False))
    width = len(str(len(images) - 1))
    samples = tuple(
        ImageSample(f"mnist-{split}-{i:0{width}d}", images[i] / 255.0, int(labels[i]))
        for i in idx
    )
    return Dataset(samples, name=f"mnist-{split}", class_names=tuple(str(d) for d in range(10)))


def load_digits_dataset() -> Dataset:
    """scikit-learn's bundled 8x8 handwritten digits (1797 images, labels 0-9)."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = bunch.images / 16.0
    samples = tuple(ImageSample(f"digits-{i:04d}", images[i], int(bunch.target[i]))
                    for i in range(len(images)))
    return Dataset(samples, name="digits", class_names=tuple(str(d) for d in range(10)))


# --------------------------------------------------------------------------- splits

def train_count(m: int, fraction: float) -> int:
    """Round-half-up train size, e.g. 1833 at 0.9 gives 1650."""
    return min(m, int(math.floor(fraction * m + 0.5)))


def split(dataset: Dataset, spec: SplitSpec):
    """Seeded, unstratified train/test partition."""
    if not isinstance(spec, SplitSpec):
        spec = SplitSpec(*spec)
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    m = len(dataset)
    perm = np.random.default_rng(spec.seed).permutation(m)
    n_train = train_count(m, spec.train_fraction)
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    train = Dataset(tuple(dataset.samples[i] for i in train_idx), name=f"{dataset.name}-train",
                    class_names=dataset.class_names)
    test = Dataset(tuple(dataset.samples[i] for i in test_idx), name=f"{dataset.name}-test",
                   class_names=dataset.class_names)
    return train, test


def subset(dataset: Dataset, ids: Sequence[str]) -> Dataset:
    keep = set(ids)
    return dataset.replace(s for s in dataset.samples if s.id in keep)


def make_synthetic(n_per_class: int = 50, side: int = 32, n_classes: int = 3, noise: float = 0.05,
                   seed: int = 0) -> Dataset:
    """Noisy images of a bright square whose position encodes the class.

    Squares of side ``side // 3`` sit on evenly spaced positions along the
    anti-diagonal, so every class is separable by construction.
    """
    if n_classes < 1 or n_per_class < 1:
        raise ValueError("n_classes and n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    sq = max(2, side // 3)
    span = side - sq
    samples = []
    for c in range(n_classes):
        off = int(round(span * c / max(n_classes - 1, 1)))
        for j in range(n_per_class):
            img = rng.normal(0.15, noise, (side, side))
            img[off:off + sq, span - off:span - off + sq] += 0.7
            samples.append(ImageSample(f"synth-{c}-{j:04d}", np.clip(img, 0.0, 1.0), c))
    return Dataset(tuple(samples), name="synthetic", class_names=tuple(str(c) for c in range(n_classes)))
