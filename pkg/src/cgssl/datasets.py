"""Dataset containers, deterministic splitting, augmentation, and loaders.

Sets are stored struct-of-arrays: an (n, H, W, C) float64 image block in
[0, 1], an int label vector, and an int id vector that stays stable through
splits so partitions can be audited by id algebra.
"""

import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, InvalidInputError, InvalidSpecError
from .seeding import rng_for
from . import storage


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (H, W, C), values in [0, 1]
    id: int


def _validate_images(images):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise InvalidInputError(f"expected (n, H, W, C) images, got shape {images.shape}")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise InvalidInputError("pixel values must lie in [0, 1]")
    if images.shape[0] and min(images.shape[1:]) < 1:
        raise InvalidInputError("image dimensions must be positive")
    return images


@dataclass(frozen=True)
class UnlabeledSet:
    images: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "images", _validate_images(self.images))
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (self.images.shape[0],):
            raise InvalidInputError("ids must parallel images")
        if len(np.unique(ids)) != len(ids):
            raise InvalidInputError("sample ids must be unique")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.images.shape[0]

    def sample(self, i) -> ImageSample:
        return ImageSample(self.images[i], int(self.ids[i]))


@dataclass(frozen=True)
class LabeledSet:
    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "images", _validate_images(self.images))
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.asarray(self.ids, dtype=np.int64)
        if labels.shape != (self.images.shape[0],) or ids.shape != labels.shape:
            raise InvalidInputError("labels and ids must parallel images")
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidInputError("labels must lie in [0, num_classes)")
        if len(np.unique(ids)) != len(ids):
            raise InvalidInputError("sample ids must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.images.shape[0]

    def sample(self, i) -> ImageSample:
        return ImageSample(self.images[i], int(self.ids[i]))

    def take(self, indices) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.images[indices], self.labels[indices], self.ids[indices], self.num_classes)

    def drop_labels(self) -> UnlabeledSet:
        return UnlabeledSet(self.images, self.ids)


def concat_labeled(a: LabeledSet, b: LabeledSet) -> LabeledSet:
    if a.num_classes != b.num_classes:
        raise InvalidInputError("num_classes mismatch in union")
    ids = np.concatenate([a.ids, b.ids])
    if len(np.unique(ids)) != len(ids):
        raise InvalidInputError("id collision in union")
    return LabeledSet(
        np.concatenate([a.images, b.images]),
        np.concatenate([a.labels, b.labels]),
        ids,
        a.num_classes,
    )


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 for f in fr):
            raise InvalidSpecError(f"need three non-negative fractions, got {self.fractions}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidSpecError(f"fractions must sum to 1, got {sum(fr)!r}")
        object.__setattr__(self, "fractions", fr)


def _stratified_counts(labels, num_classes, target, frac):
    """Per-class allocation: floor(frac * n_c) plus largest remainders until the global target is met."""
    counts = np.bincount(labels, minlength=num_classes)
    base = np.floor(frac * counts).astype(int)
    short = target - int(base.sum())
    remainders = frac * counts - base
    order = np.lexsort((np.arange(num_classes), -remainders))
    for c in order[:short]:
        base[c] += 1
    return base


def split_dataset(data: LabeledSet, spec: SplitSpec):
    """Partition into (D_L, D_V, D_REF): floor sizes for the first two, remainder to D_REF."""
    if len(data) == 0:
        raise InvalidInputError("cannot split an empty dataset")
    n = len(data)
    f_l, f_v, _ = spec.fractions
    n_l = int(np.floor(f_l * n))
    n_v = int(np.floor(f_v * n))
    rng = rng_for(spec.seed, "split")
    if spec.stratify:
        take_l = _stratified_counts(data.labels, data.num_classes, n_l, f_l)
        take_v = _stratified_counts(data.labels, data.num_classes, n_v, f_v)
        parts = [[], [], []]
        for c in range(data.num_classes):
            idx = np.flatnonzero(data.labels == c)
            idx = idx[rng.permutation(len(idx))]
            parts[0].append(idx[: take_l[c]])
            parts[1].append(idx[take_l[c] : take_l[c] + take_v[c]])
            parts[2].append(idx[take_l[c] + take_v[c] :])
        order = [np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts]
        idx_l, idx_v, idx_ref = order
    else:
        perm = rng.permutation(n)
        idx_l, idx_v, idx_ref = perm[:n_l], perm[n_l : n_l + n_v], perm[n_l + n_v :]
    return data.take(idx_l), data.take(idx_v), data.take(idx_ref)


# ---------------------------------------------------------------------------
# procedural toy dataset

_TOY_SHAPES = 5
_TOY_COLORS = [
    (0.90, 0.20, 0.20),
    (0.20, 0.85, 0.25),
    (0.25, 0.35, 0.95),
    (0.95, 0.85, 0.20),
    (0.85, 0.25, 0.90),
    (0.20, 0.90, 0.90),
]


def _shape_mask(kind, size, cy, cx, radius, yy, xx):
    if kind == 0:  # filled disk
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    if kind == 1:  # square frame
        d = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
        return (d <= radius) & (d >= radius - max(1.5, radius / 2.5))
    if kind == 2:  # horizontal stripes inside a box
        box = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
        return box & (np.floor(yy - cy + radius) % 4 < 2)
    if kind == 3:  # plus sign
        arm = max(1.0, radius / 2.5)
        return ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= radius)) | (
            (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= radius)
        )
    # kind == 4: filled triangle (lower-left half of the bounding box)
    box = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
    return box & ((yy - cy) >= (xx - cx))


def generate_toy_dataset(num_classes: int, per_class: int, image_size: int, seed: int,
                         class_offset: int = 0) -> LabeledSet:
    """Procedural shape/color dataset; class k gets shape k%5 and color family k%6.

    Pixels are quantized to the 8-bit grid so the PNG export round-trips
    exactly. `class_offset` shifts which shape/color combos are used, giving
    disjoint-but-similar auxiliary datasets for encoder pretraining.
    """
    if num_classes < 2 or per_class < 1 or image_size < 8:
        raise InvalidInputError(
            f"need num_classes >= 2, per_class >= 1, image_size >= 8; "
            f"got ({num_classes}, {per_class}, {image_size})"
        )
    if num_classes + class_offset > _TOY_SHAPES * len(_TOY_COLORS):
        raise InvalidInputError(f"at most {_TOY_SHAPES * len(_TOY_COLORS) - class_offset} distinct classes available")
    rng = rng_for(seed, "toy-data")
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    images = np.empty((num_classes * per_class, image_size, image_size, 3))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    i = 0
    for cls in range(num_classes):
        kind = (cls + class_offset) % _TOY_SHAPES
        color = np.array(_TOY_COLORS[(cls + class_offset) % len(_TOY_COLORS)])
        for _ in range(per_class):
            cy, cx = rng.uniform(image_size * 0.25, image_size * 0.75, size=2)
            radius = rng.uniform(image_size * 0.13, image_size * 0.30)
            jitter = rng.normal(0.0, 0.20, size=3)
            brightness = rng.uniform(0.40, 1.15)
            mask = _shape_mask(kind, image_size, cy, cx, radius, yy, xx)
            bg = rng.uniform(0.05, 0.55) + rng.normal(0.0, 0.12, size=(image_size, image_size, 3))
            img = np.where(mask[:, :, None], np.clip(color * brightness + jitter, 0.0, 1.0), bg)
            img += rng.normal(0.0, 0.15, size=img.shape)
            images[i] = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
            labels[i] = cls
            i += 1
    return LabeledSet(images, labels, np.arange(len(labels)), num_classes)


# ---------------------------------------------------------------------------
# stochastic augmentation

def hflip(pixels: np.ndarray) -> np.ndarray:
    return pixels[:, ::-1, :].copy()


def augment_pixels(pixels: np.ndarray, seed: int, flip: bool = True, crop: bool = True) -> np.ndarray:
    """Random horizontal flip (p=0.5) then random crop after reflect padding."""
    rng = np.random.default_rng(seed)
    out = pixels
    if flip and rng.random() < 0.5:
        out = hflip(out)
    if crop:
        h, w = out.shape[:2]
        ph, pw = max(1, h // 8), max(1, w // 8)
        padded = np.pad(out, ((ph, ph), (pw, pw), (0, 0)), mode="reflect")
        oy = rng.integers(0, 2 * ph + 1)
        ox = rng.integers(0, 2 * pw + 1)
        out = padded[oy : oy + h, ox : ox + w, :]
    return np.ascontiguousarray(out)


def augment_stochastic(x: ImageSample, seed: int, flip: bool = True, crop: bool = True) -> ImageSample:
    pixels = _validate_images(x.pixels[None])[0]
    return ImageSample(augment_pixels(pixels, seed, flip, crop), x.id)


def augment_batch(images: np.ndarray, stage_seed: int, step: int) -> np.ndarray:
    from .seeding import derive_seed

    out = np.empty_like(images)
    for i in range(images.shape[0]):
        out[i] = augment_pixels(images[i], derive_seed(stage_seed, "aug", step, i))
    return out


# ---------------------------------------------------------------------------
# benchmark ingestion (standard published binary layouts)

def _require(path: Path) -> Path:
    if not path.exists():
        raise IngestionError(f"missing dataset file: {path}")
    return path


def _load_stl10(root: Path, split: str) -> LabeledSet:
    base = root / "stl10_binary"
    x_file = _require(base / f"{split}_X.bin")
    y_file = _require(base / f"{split}_y.bin")
    raw = np.fromfile(x_file, dtype=np.uint8)
    if raw.size % (3 * 96 * 96):
        raise IngestionError(f"corrupt file (size not a multiple of 3*96*96): {x_file}")
    # stored per image as three 96x96 column-major channel planes
    images = raw.reshape(-1, 3, 96, 96).transpose(0, 3, 2, 1).astype(np.float64) / 255.0
    labels = np.fromfile(y_file, dtype=np.uint8).astype(np.int64) - 1
    if labels.shape[0] != images.shape[0]:
        raise IngestionError(f"label count does not match image count: {y_file}")
    return LabeledSet(images, labels, np.arange(len(labels)), 10)


def _load_cifar100(root: Path, split: str) -> LabeledSet:
    fname = _require(root / "cifar-100-python" / ("train" if split == "train" else "test"))
    try:
        with open(fname, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        data = batch[b"data"]
        labels = np.asarray(batch[b"fine_labels"], dtype=np.int64)
    except (pickle.UnpicklingError, KeyError, EOFError) as exc:
        raise IngestionError(f"corrupt dataset file: {fname} ({exc})") from exc
    if data.shape[1] != 3072:
        raise IngestionError(f"corrupt dataset file (expected 3072 bytes per row): {fname}")
    images = data.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return LabeledSet(images, labels, np.arange(len(labels)), 100)


def load_benchmark(name: str, root_path, split: str = "train") -> LabeledSet:
    """Load a benchmark partition with pixels scaled to [0, 1]."""
    root = Path(root_path)
    if name == "stl10":
        return _load_stl10(root, split)
    if name == "cifar100":
        return _load_cifar100(root, split)
    raise IngestionError(f"unsupported benchmark {name!r}; supported: stl10, cifar100")


# ---------------------------------------------------------------------------
# directory export/import: lossless images + JSON label manifest

def export_labeled(data: LabeledSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(data)):
        fname = f"{int(data.ids[i]):06d}.png"
        storage.save_image(directory / fname, data.images[i])
        entries.append({"id": int(data.ids[i]), "label": int(data.labels[i]), "file": fname})
    storage.write_json(directory / "manifest.json", {
        "schema_version": storage.SCHEMA_VERSION,
        "num_classes": data.num_classes,
        "samples": entries,
    })


def import_labeled(directory) -> LabeledSet:
    directory = Path(directory)
    manifest = storage.read_json(_require(directory / "manifest.json"))
    images, labels, ids = [], [], []
    for entry in manifest["samples"]:
        images.append(storage.load_image(_require(directory / entry["file"])))
        labels.append(entry["label"])
        ids.append(entry["id"])
    return LabeledSet(np.stack(images), labels, ids, manifest["num_classes"])


def save_labeled_npz(data: LabeledSet, path) -> None:
    storage.save_npz(path, {
        "images": data.images, "labels": data.labels, "ids": data.ids,
        "num_classes": np.array(data.num_classes),
    })


def load_labeled_npz(path) -> LabeledSet:
    arrays = storage.load_npz(path)
    return LabeledSet(arrays["images"], arrays["labels"], arrays["ids"],
                      int(arrays["num_classes"].item()))
