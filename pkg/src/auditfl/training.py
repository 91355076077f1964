"""Local data handling and SGD: the ML substrate the protocol masks.

Datasets are read from IDX files (MNIST's distribution format). Models are
flattened parameter vectors in fixed point; forward/backward passes run in
float64 from the fixed-point snapshot and only the resulting gradient is
quantized, so training numerics stay conventional while the protocol path
stays exact.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fixedpoint import DEFAULT_SCALE, FpVector
from .randomness import derive_seed, prg

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    """Raised when dataset files are malformed or inconsistent."""


@dataclass
class Dataset:
    """Feature matrix in [0, 1] plus integer class labels."""

    features: np.ndarray  # (n, dim) float32
    labels: np.ndarray  # (n,) int64
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"{self.features.shape[0]} samples but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


def _read_exact(f, n: int, path: Path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DatasetError(
            f"{path}: truncated while reading {what}: expected {n} bytes "
            f"at offset {f.tell() - len(data)}, got {len(data)}"
        )
    return data


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(
            ">IIII", _read_exact(f, 16, images_path, "image header")
        )
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetError(
                f"{images_path}: bad magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        pixels = _read_exact(f, count * rows * cols, images_path, "pixel data")
        if f.read(1):
            raise DatasetError(f"{images_path}: trailing bytes after pixel data")
    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(
            ">II", _read_exact(f, 8, labels_path, "label header")
        )
        if magic != IDX_LABELS_MAGIC:
            raise DatasetError(
                f"{labels_path}: bad magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw_labels = _read_exact(f, lcount, labels_path, "label data")
    if count != lcount:
        raise DatasetError(
            f"image count {count} != label count {lcount} "
            f"({images_path} vs {labels_path})"
        )
    features = (
        np.frombuffer(pixels, dtype=np.uint8)
        .reshape(count, rows * cols)
        .astype(np.float32)
        / 255.0
    )
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    bad = labels >= n_classes
    if bad.any():
        k = int(np.argmax(bad))
        raise DatasetError(
            f"{labels_path}: label {labels[k]} at index {k} outside 0..{n_classes - 1}"
        )
    return Dataset(features=features, labels=labels, n_classes=n_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels to IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim == 2:
        images = images[:, :, None]
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())


def make_synthetic_corpus(
    out_dir,
    seed: int,
    n_train: int = 22000,
    n_test: int = 4000,
    side: int = 28,
    n_classes: int = 10,
) -> dict[str, Path]:
    """Deterministic MNIST-shaped classification corpus written as IDX files.

    Images are sparse "stroke" patterns: every class activates a pixel set
    drawn from one shared pool (so classes overlap, like digits sharing
    strokes), each sample keeps a random subset at random intensity and adds
    background clutter. Class frequencies are imbalanced, which is what
    makes uniform label flipping genuinely destructive to an undefended
    average: the flipped mass systematically distorts the class priors.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = side * side

    def uniform(*tag_and_count):
        *tag, count = tag_and_count
        return prg(derive_seed(seed, "synth", *tag), count).astype(np.float64) * 2.0**-64

    pool_size = max(min(dim, round(0.153 * dim)), min(dim, 2 * n_classes))
    per_class = max(1, round(0.833 * pool_size))
    clutter = max(1, round(0.23 * dim))
    drop = 0.65

    pool = np.argsort(uniform("pool", dim))[:pool_size]
    class_pixels = [
        pool[np.argsort(uniform("class", c, pool_size))[:per_class]]
        for c in range(n_classes)
    ]
    prior = 1.0 / (np.arange(n_classes) + 2.0)
    prior_cdf = np.cumsum(prior / prior.sum())

    def render(tag: str, n: int):
        labels = np.searchsorted(prior_cdf, uniform(tag, "labels", n), side="right")
        labels = np.minimum(labels, n_classes - 1).astype(np.int64)
        intensity = 0.35 + 0.65 * uniform(tag, "intensity", n * per_class).reshape(
            n, per_class
        )
        kept = uniform(tag, "keep", n * per_class).reshape(n, per_class) > drop
        clut_pos = (
            prg(derive_seed(seed, "synth", tag, "clutter-pos"), n * clutter)
            % np.uint64(dim)
        ).reshape(n, clutter).astype(np.int64)
        clut_val = 0.8 * uniform(tag, "clutter-val", n * clutter).reshape(n, clutter)
        X = np.zeros((n, dim), dtype=np.float32)
        for i in range(n):
            px = class_pixels[labels[i]][kept[i]]
            X[i, px] = intensity[i][kept[i]].astype(np.float32)
            X[i, clut_pos[i]] = np.maximum(
                X[i, clut_pos[i]], clut_val[i].astype(np.float32)
            )
        return np.round(X * 255.0).astype(np.uint8).reshape(n, side, side), labels

    paths = {
        "train_images": out_dir / "train-images-idx3-ubyte",
        "train_labels": out_dir / "train-labels-idx1-ubyte",
        "test_images": out_dir / "t10k-images-idx3-ubyte",
        "test_labels": out_dir / "t10k-labels-idx1-ubyte",
    }
    imgs, labs = render("train", n_train)
    write_idx(imgs, labs, paths["train_images"], paths["train_labels"])
    imgs, labs = render("test", n_test)
    write_idx(imgs, labs, paths["test_images"], paths["test_labels"])
    return paths


def partition(ds: Dataset, parts: int, seed: int) -> list[Dataset]:
    """Seeded shuffle split into `parts` disjoint near-equal subsets.

    Part 0 is conventionally the server's benign root dataset.
    """
    if parts < 2:
        raise ValueError(f"need at least 2 parts, got {parts}")
    if len(ds) < parts:
        raise ValueError(f"cannot split {len(ds)} samples into {parts} parts")
    order = np.argsort(prg(derive_seed(seed, "partition"), len(ds)), kind="stable")
    chunks = np.array_split(order, parts)
    return [
        Dataset(
            features=ds.features[idx],
            labels=ds.labels[idx],
            n_classes=ds.n_classes,
        )
        for idx in chunks
    ]


# ---------------------------------------------------------------------------
# Models: multinomial logistic regression, optional one-hidden-layer MLP.
# Parameters are one flattened vector; layout is documented per architecture.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    """Layer sizes for the flattened parameter vector.

    hidden == 0: logistic regression, params = [W (f*c), b (c)].
    hidden  > 0: one ReLU hidden layer, params = [W1 (f*h), b1 (h),
    W2 (h*c), b2 (c)].
    """

    n_features: int
    n_classes: int
    hidden: int = 0

    @property
    def param_count(self) -> int:
        f, c, h = self.n_features, self.n_classes, self.hidden
        if h == 0:
            return f * c + c
        return f * h + h + h * c + c


def init_params(arch: Architecture, seed: int, scale: int = DEFAULT_SCALE) -> FpVector:
    """Initial parameter vector: zeros for logreg, small seeded values for MLP."""
    if arch.hidden == 0:
        return FpVector.zeros(arch.param_count, scale)
    words = prg(derive_seed(seed, "init"), arch.param_count)
    vals = ((words % np.uint64(2001)).astype(np.float64) / 1000.0 - 1.0) * 0.05
    return FpVector.from_floats(vals, scale)


def _unpack(arch: Architecture, params: np.ndarray):
    f, c, h = arch.n_features, arch.n_classes, arch.hidden
    if h == 0:
        W = params[: f * c].reshape(f, c)
        b = params[f * c :]
        return (W, b)
    o = 0
    W1 = params[o : o + f * h].reshape(f, h)
    o += f * h
    b1 = params[o : o + h]
    o += h
    W2 = params[o : o + h * c].reshape(h, c)
    o += h * c
    b2 = params[o:]
    return (W1, b1, W2, b2)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    arch: Architecture, params: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flattened parameters."""
    n = X.shape[0]
    X = X.astype(np.float64, copy=False)
    if arch.hidden == 0:
        (W, b) = _unpack(arch, params)
        probs = _softmax(X @ W + b)
        loss = float(-np.log(probs[np.arange(n), y] + 1e-300).mean())
        delta = probs
        delta[np.arange(n), y] -= 1.0
        delta /= n
        gW = X.T @ delta
        gb = delta.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])
    (W1, b1, W2, b2) = _unpack(arch, params)
    z1 = X @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    probs = _softmax(a1 @ W2 + b2)
    loss = float(-np.log(probs[np.arange(n), y] + 1e-300).mean())
    delta2 = probs
    delta2[np.arange(n), y] -= 1.0
    delta2 /= n
    gW2 = a1.T @ delta2
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ W2.T) * (z1 > 0.0)
    gW1 = X.T @ delta1
    gb1 = delta1.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def sample_batch(ds: Dataset, batch: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded minibatch (with replacement; bias at these sizes is negligible)."""
    if batch > len(ds):
        raise ValueError(f"batch {batch} exceeds shard size {len(ds)}")
    idx = (prg(seed, batch) % np.uint64(len(ds))).astype(np.int64)
    return ds.features[idx], ds.labels[idx]


def local_gradient(
    arch: Architecture,
    params: FpVector,
    shard: Dataset,
    batch: int,
    seed: int,
) -> tuple[FpVector, float]:
    """One seeded minibatch cross-entropy gradient, quantized to fixed point."""
    X, y = sample_batch(shard, batch, seed)
    loss, grad = loss_and_grad(arch, params.to_floats(), X, y)
    return FpVector.from_floats(grad, params.scale), loss


def evaluate(arch: Architecture, params: FpVector, ds: Dataset) -> tuple[float, float]:
    """(accuracy fraction, mean cross-entropy) on a dataset; must be nonempty."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    p = params.to_floats()
    X = ds.features.astype(np.float64, copy=False)
    if arch.hidden == 0:
        (W, b) = _unpack(arch, p)
        logits = X @ W + b
    else:
        (W1, b1, W2, b2) = _unpack(arch, p)
        logits = np.maximum(X @ W1 + b1, 0.0) @ W2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    logprobs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    acc = float((logits.argmax(axis=1) == ds.labels).mean())
    loss = float(-logprobs[np.arange(len(ds)), ds.labels].mean())
    return acc, loss


# ---------------------------------------------------------------------------
# Adversaries.
# ---------------------------------------------------------------------------

ADVERSARY_KINDS = ("honest", "label_flip", "sign_flip", "scale_amplify")


@dataclass(frozen=True)
class AdversarySpec:
    """What a participant does to corrupt training, if anything."""

    kind: str = "honest"
    factor: int = 10  # scale_amplify only

    def __post_init__(self):
        if self.kind not in ADVERSARY_KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if self.kind == "scale_amplify" and self.factor <= 1:
            raise ValueError("scale_amplify factor must be > 1")


def flip_labels(ds: Dataset, seed: int) -> Dataset:
    """Remap every label to a uniformly random *different* class."""
    c = ds.n_classes
    words = prg(derive_seed(seed, "label-flip"), len(ds))
    shift = 1 + (words % np.uint64(c - 1)).astype(np.int64)
    return Dataset(
        features=ds.features,
        labels=(ds.labels + shift) % c,
        n_classes=c,
    )


def corrupt_shard(ds: Dataset, spec: AdversarySpec, seed: int) -> Dataset:
    """Apply the data-level attack (label flipping) to a shard, once."""
    if spec.kind == "label_flip":
        return flip_labels(ds, seed)
    return ds


def corrupt_gradient(g: FpVector, spec: AdversarySpec) -> FpVector:
    """Apply the gradient-level attack to a computed local gradient."""
    if spec.kind == "sign_flip":
        return -g
    if spec.kind == "scale_amplify":
        return g.scalar_mul(spec.factor)
    return g
