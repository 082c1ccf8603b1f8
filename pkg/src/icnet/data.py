"""Datasets and persistence.

Covers the synthetic 2D Gaussian-mixture benchmark (with its analytic
positive density, which the grid oracle integrates exactly), the IDX image
container used by MNIST-style files, pixel normalization, deterministic
splits, and the on-disk pseudo-negative store.
"""

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Array = np.ndarray

NORM_ZERO_CENTERED = "zero-centered-unit-range"


class DataError(Exception):
    pass


class IdxFormatError(DataError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class StoreFormatError(DataError):
    pass


class StoreVersionError(StoreFormatError):
    pass


# ---------------------------------------------------------------------------
# labeled datasets
# ---------------------------------------------------------------------------

@dataclass
class LabeledDataset:
    """Samples with integer labels: either 0..class_count-1, or the binary
    convention {+1, -1}."""

    samples: Array
    labels: Array
    class_count: int
    normalization: str | None = None

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.samples.shape[0]} samples vs "
                            f"{self.labels.shape[0]} labels")
        if self.labels.size:
            in_range = (self.labels >= 0) & (self.labels < self.class_count)
            binary = np.isin(self.labels, (-1, 1))
            if not (in_range.all() or (self.class_count == 2 and binary.all())):
                raise DataError("labels outside the declared class range")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.samples[idx], self.labels[idx],
                              self.class_count, self.normalization)


def split_dataset(ds: LabeledDataset, counts, seed: int) -> list[LabeledDataset]:
    """Disjoint seeded-shuffle split; a remainder part is appended so the
    parts always cover the dataset."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts) or sum(counts) > len(ds):
        raise DataError(f"split sizes {counts} infeasible for {len(ds)} samples")
    # entropy path [seed, 100] keeps split draws clear of trainer streams
    order = np.random.default_rng(np.random.SeedSequence([seed, 100])).permutation(len(ds))
    parts, at = [], 0
    for c in counts:
        parts.append(ds.subset(order[at:at + c]))
        at += c
    if at < len(ds):
        parts.append(ds.subset(order[at:]))
    return parts


def stratified_subset(ds: LabeledDataset, total: int, seed: int) -> LabeledDataset:
    """Class-balanced subset of the requested size (as even as labels allow)."""
    if total > len(ds):
        raise DataError(f"requested {total} of {len(ds)} samples")
    gen = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    classes = np.unique(ds.labels)
    base, extra = divmod(total, len(classes))
    chosen = []
    for i, cls in enumerate(classes):
        pool = np.flatnonzero(ds.labels == cls)
        want = base + (1 if i < extra else 0)
        if want > pool.size:
            raise DataError(f"class {cls} has only {pool.size} samples, need {want}")
        chosen.append(gen.choice(pool, size=want, replace=False))
    idx = np.concatenate(chosen)
    return ds.subset(idx[gen.permutation(idx.size)])


# ---------------------------------------------------------------------------
# synthetic 2D benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    positive_means: tuple
    positive_covs: tuple
    negative_means: tuple
    negative_covs: tuple
    n_positive: int
    n_negative: int

    def __post_init__(self):
        for cov in tuple(self.positive_covs) + tuple(self.negative_covs):
            try:
                np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
            except np.linalg.LinAlgError:
                raise DataError(f"covariance {cov} is not positive-definite") from None


class MixtureDensity:
    """Analytic Gaussian-mixture density over R^2 with fixed weights."""

    def __init__(self, means, covs, weights):
        self.means = np.asarray(means, dtype=np.float64)
        self.covs = np.asarray(covs, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.weights = self.weights / self.weights.sum()
        self._inv = np.stack([np.linalg.inv(c) for c in self.covs])
        dim = self.means.shape[1]
        dets = np.array([np.linalg.det(c) for c in self.covs])
        self._log_norm = -0.5 * (dim * np.log(2 * np.pi) + np.log(dets))

    def log_pdf(self, points) -> Array:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        terms = np.empty((len(self.weights), pts.shape[0]))
        for i in range(len(self.weights)):
            d = pts - self.means[i]
            quad = np.einsum("nj,jk,nk->n", d, self._inv[i], d)
            terms[i] = np.log(self.weights[i]) + self._log_norm[i] - 0.5 * quad
        m = terms.max(axis=0)
        return m + np.log(np.exp(terms - m).sum(axis=0))

    def pdf(self, points) -> Array:
        return np.exp(self.log_pdf(points))


def _component_counts(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def gen_synthetic_2d(spec: SyntheticSpec,
                     rng: np.random.Generator) -> tuple[LabeledDataset, MixtureDensity]:
    """Draw the two-class 2D benchmark; also return the analytic positive
    density p+ whose mixture weights equal the per-component share."""
    samples, labels = [], []
    for means, covs, total, label in (
            (spec.positive_means, spec.positive_covs, spec.n_positive, 1),
            (spec.negative_means, spec.negative_covs, spec.n_negative, -1)):
        counts = _component_counts(total, len(means))
        for mean, cov, count in zip(means, covs, counts):
            chol = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
            z = rng.standard_normal((count, 2))
            samples.append(np.asarray(mean, dtype=np.float64) + z @ chol.T)
            labels.append(np.full(count, label, dtype=np.int64))
    ds = LabeledDataset(np.concatenate(samples), np.concatenate(labels), 2)
    pos_weights = _component_counts(spec.n_positive, len(spec.positive_means))
    density = MixtureDensity(spec.positive_means, spec.positive_covs, pos_weights)
    return ds, density


def default_benchmark_spec(n_positive: int = 200, n_negative: int = 200) -> SyntheticSpec:
    """Two positive blobs in the middle, four negative blobs flanking them."""
    pc = ((0.09, 0.0), (0.0, 0.09))
    nc = ((0.0625, 0.0), (0.0, 0.0625))
    return SyntheticSpec(
        positive_means=((-0.6, 0.0), (0.6, 0.0)),
        positive_covs=(pc, pc),
        negative_means=((0.0, 1.3), (0.0, -1.3), (-1.7, 0.0), (1.7, 0.0)),
        negative_covs=(nc, nc, nc, nc),
        n_positive=n_positive,
        n_negative=n_negative,
    )


# ---------------------------------------------------------------------------
# IDX container (big-endian magic + dims, then unsigned bytes)
# ---------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open_maybe_gzip(path):
    with open(path, "rb") as probe:
        head = probe.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n: int, what: str, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return data


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label file pair into a (n,1,h,w) float dataset with
    raw pixel values in [0,255]."""
    with _open_maybe_gzip(images_path) as fh:
        magic, count, rows, cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, "image header", images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxMagicError(f"{images_path}: magic {magic:#010x}, "
                                f"expected {IDX_IMAGES_MAGIC:#010x}")
        raw = _read_exact(fh, count * rows * cols, "pixels", images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(
            ">II", _read_exact(fh, 8, "label header", labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxMagicError(f"{labels_path}: magic {magic:#010x}, "
                                f"expected {IDX_LABELS_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(fh, n_labels, "labels", labels_path),
                               dtype=np.uint8)
    if count != n_labels:
        raise IdxCountMismatchError(
            f"{count} images in {images_path} vs {n_labels} labels in {labels_path}")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(images.astype(np.float64), labels.astype(np.int64),
                          max(n_classes, 1) if labels.size else 0)


MNIST_STEMS = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def default_mnist_dir() -> Path:
    return Path(os.environ.get("ICNET_MNIST_DIR", "data/mnist"))


def find_mnist_file(root, key: str) -> Path | None:
    for stem in MNIST_STEMS[key]:
        for name in (stem, stem + ".gz"):
            candidate = Path(root) / name
            if candidate.exists():
                return candidate
    return None


def mnist_available(root=None) -> bool:
    root = default_mnist_dir() if root is None else root
    return all(find_mnist_file(root, k) is not None for k in MNIST_STEMS)


def load_mnist(root=None) -> tuple[LabeledDataset, LabeledDataset]:
    root = default_mnist_dir() if root is None else root
    paths = {}
    for key in MNIST_STEMS:
        found = find_mnist_file(root, key)
        if found is None:
            raise DataError(
                f"missing {MNIST_STEMS[key][0]}[.gz] under {root}; "
                "set ICNET_MNIST_DIR or fetch the files (see README)")
        paths[key] = found
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    return train, test


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize(ds: LabeledDataset, mode: str = NORM_ZERO_CENTERED) -> LabeledDataset:
    """Map raw pixels [0,255] to [-1,1]; the mode tag rides on the dataset so
    image dumps can invert it."""
    if mode != NORM_ZERO_CENTERED:
        raise DataError(f"unknown normalization {mode!r}")
    return LabeledDataset(ds.samples / 127.5 - 1.0, ds.labels, ds.class_count, mode)


def denormalize(samples: Array, mode: str = NORM_ZERO_CENTERED) -> Array:
    if mode != NORM_ZERO_CENTERED:
        raise DataError(f"unknown normalization {mode!r}")
    return (np.asarray(samples) + 1.0) * 127.5


# ---------------------------------------------------------------------------
# pseudo-negative store
# ---------------------------------------------------------------------------

@dataclass
class StoreEntry:
    round: int
    class_tag: int  # -1 for binary; synthesizing class index for multi-class
    sample: Array


@dataclass
class PseudoNegativeStore:
    """Append-only archive of synthesized samples across rounds."""

    entries: list[StoreEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def add_batch(self, round_index: int, class_tag: int, samples: Array) -> None:
        for s in np.asarray(samples, dtype=np.float64):
            self.entries.append(StoreEntry(round_index, class_tag, s.copy()))

    def samples_for(self, class_tag: int | None = None) -> Array:
        picked = [e.sample for e in self.entries
                  if class_tag is None or e.class_tag == class_tag]
        if not picked:
            return np.zeros((0,))
        return np.stack(picked)

    def rounds(self) -> list[int]:
        return sorted({e.round for e in self.entries})


STORE_MAGIC = b"ICNPN1\n"
STORE_VERSION = 1


def save_store(store: PseudoNegativeStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<IQ", STORE_VERSION, len(store.entries)))
        for e in store.entries:
            fh.write(struct.pack("<Ii", e.round, e.class_tag))
            fh.write(struct.pack("<I", e.sample.ndim))
            for d in e.sample.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(e.sample, dtype="<f8").tobytes())


def load_store(path) -> PseudoNegativeStore:
    with open(path, "rb") as fh:
        if fh.read(len(STORE_MAGIC)) != STORE_MAGIC:
            raise StoreFormatError(f"{path}: bad magic, not a pseudo-negative store")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != STORE_VERSION:
            raise StoreVersionError(f"{path}: store version {version}, "
                                    f"this build reads {STORE_VERSION}")
        store = PseudoNegativeStore()
        for _ in range(count):
            head = fh.read(12)
            if len(head) != 12:
                raise StoreFormatError(f"{path}: truncated entry header")
            rnd, tag, ndim = struct.unpack("<IiI", head)
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_bytes = int(np.prod(shape)) * 8 if shape else 8
            payload = fh.read(n_bytes)
            if len(payload) != n_bytes:
                raise StoreFormatError(f"{path}: truncated entry payload")
            sample = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
            store.entries.append(StoreEntry(rnd, tag, sample))
        return store


def dataset_to_csv(ds: LabeledDataset, path) -> None:
    """Flat CSV export (full-precision floats) for 2D synthetic data."""
    flat = ds.samples.reshape(len(ds), -1)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{i}" for i in range(flat.shape[1])) + ",label\r\n")
        for row, label in zip(flat, ds.labels):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{label}\r\n")
