"""STL-10 ingestion, deterministic splits, and test-game enumeration.

The binary layout is one record per image: 3 channel planes of 96x96 bytes
each (R then G then B), column-major within a plane.  Labels are 1-indexed
on disk, 0-indexed in memory.  Decoded images are kept as uint8 so a decode
-> re-encode round trip is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

CLASS_NAMES = ("airplane", "bird", "car", "cat", "deer", "dog", "horse", "monkey", "ship", "truck")

IMAGE_SIDE = 96
IMAGE_BYTES = 3 * IMAGE_SIDE * IMAGE_SIDE  # 27648
SPLIT_SIZES = {"train": 5000, "test": 8000}

CACHE_FORMAT = "sketchgame.dataset.v1"


@dataclass
class Dataset:
    """Decoded images (uint8, [N,3,H,W]) with labels and stable ids."""

    images: np.ndarray
    labels: np.ndarray
    ids: list[str]
    split: str
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if self.images.dtype != np.uint8 or self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"expected uint8 [N,3,H,W] images, got {self.images.dtype} {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.ids) != len(self.images):
            raise ValueError("images, labels and ids must align")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.images)

    def image_float(self, index) -> torch.Tensor:
        """Image(s) as float tensors in [0,1]; accepts an int or an index array."""
        return torch.from_numpy(self.images[index]).float() / 255.0

    def label_name(self, index: int) -> str:
        return self.class_names[int(self.labels[index])]

    def class_histogram(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.class_names))
        return {name: int(c) for name, c in zip(self.class_names, counts)}


def decode_stl10_images(raw: bytes) -> np.ndarray:
    """Raw binary records -> uint8 [N,3,96,96] (plane transpose applied)."""
    if len(raw) == 0:
        raise ValueError("empty STL-10 image file")
    if len(raw) % IMAGE_BYTES != 0:
        raise ValueError(f"truncated STL-10 image file: {len(raw)} bytes is not a multiple of {IMAGE_BYTES}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3, IMAGE_SIDE, IMAGE_SIDE)
    return arr.transpose(0, 1, 3, 2).copy()


def encode_stl10_images(images: np.ndarray) -> bytes:
    """Inverse of :func:`decode_stl10_images` (byte-identical round trip)."""
    return images.transpose(0, 1, 3, 2).tobytes()


def load_stl10(root: str | Path, split: str = "test") -> Dataset:
    """Load a split from ``<root>/stl10_binary`` (or ``root`` itself)."""
    if split not in SPLIT_SIZES:
        raise ValueError(f"split must be one of {sorted(SPLIT_SIZES)}, got {split!r}")
    root = Path(root)
    base = root / "stl10_binary" if (root / "stl10_binary").exists() else root
    x_path = base / f"{split}_X.bin"
    y_path = base / f"{split}_y.bin"
    for p in (x_path, y_path):
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run `sketchgame fetch-data` or point at an stl10_binary dir")

    images = decode_stl10_images(x_path.read_bytes())
    labels_raw = np.frombuffer(y_path.read_bytes(), dtype=np.uint8)
    if len(labels_raw) != len(images):
        raise ValueError(f"label count {len(labels_raw)} does not match image count {len(images)}")
    if len(images) != SPLIT_SIZES[split]:
        raise ValueError(f"{split} split has {len(images)} images, expected {SPLIT_SIZES[split]}")
    if labels_raw.min() < 1 or labels_raw.max() > 10:
        raise ValueError("labels on disk must be 1..10")
    labels = (labels_raw.astype(np.int64) - 1).copy()
    ids = [f"{split}-{i:05d}" for i in range(len(images))]
    return Dataset(images=images, labels=labels, ids=ids, split=split)


def toy_subset(ds: Dataset, per_class: int = 100, seed: int = 0) -> Dataset:
    """Class-balanced random subsample (the --toy desk-scale split)."""
    rng = np.random.default_rng([seed, 0xBA1A])
    picks = []
    for cls in range(len(ds.class_names)):
        members = np.flatnonzero(ds.labels == cls)
        if len(members) < per_class:
            raise ValueError(f"class {cls} has only {len(members)} members, need {per_class}")
        picks.append(rng.choice(members, size=per_class, replace=False))
    order = np.sort(np.concatenate(picks))
    return Dataset(
        images=ds.images[order],
        labels=ds.labels[order],
        ids=[ds.ids[i] for i in order],
        split=f"{ds.split}-toy{per_class}",
        class_names=ds.class_names,
    )


@dataclass(frozen=True)
class Game:
    """One referential game: a pool of ids with a designated target."""

    target_id: int
    pool_ids: tuple[int, ...]
    target_index: int

    def __post_init__(self):
        if self.pool_ids[self.target_index] != self.target_id:
            raise ValueError("target_index must point at target_id inside the pool")
        if len(set(self.pool_ids)) != len(self.pool_ids):
            raise ValueError("pool contains duplicate images")


def sample_game(n_images: int, k: int, rng: np.random.Generator) -> Game:
    """K+1 distinct images with the target at a uniformly random position."""
    if n_images < k + 1:
        raise ValueError(f"dataset of {n_images} images cannot fill a pool of {k + 1}")
    pool = rng.choice(n_images, size=k + 1, replace=False)
    target_index = int(rng.integers(k + 1))
    return Game(target_id=int(pool[target_index]), pool_ids=tuple(int(i) for i in pool), target_index=target_index)


def enumerate_test_games(ds: Dataset, k: int, seed: int) -> list[Game]:
    """One game per dataset image as target, distractors drawn without
    replacement from the rest; deterministic in ``seed``."""
    n = len(ds)
    if k > n - 1:
        raise ValueError(f"k={k} needs at least {k + 1} images, dataset has {n}")
    rng = np.random.default_rng([seed, 0x6A3E5])
    games = []
    for target in range(n):
        others = rng.permutation(n - 1)[:k]
        distractors = np.where(others >= target, others + 1, others)  # skip the target slot
        target_index = int(rng.integers(k + 1))
        pool = np.insert(distractors, target_index, target)
        games.append(Game(target_id=target, pool_ids=tuple(int(i) for i in pool), target_index=target_index))
    return games


def synthetic_dataset(per_class: int = 10, seed: int = 0, side: int = IMAGE_SIDE, split: str = "synthetic") -> Dataset:
    """Stand-in photos for demos and offline tests.

    Each class gets a base hue plus per-image random rectangles and discs so
    images are distinct and weak features carry class information.  Not a
    substitute for STL-10 in any reported number.
    """
    rng = np.random.default_rng([seed, 0x5E7])
    n = per_class * len(CLASS_NAMES)
    images = np.zeros((n, 3, side, side), dtype=np.uint8)
    labels = np.zeros(n, dtype=np.int64)
    yy, xx = np.mgrid[0:side, 0:side]
    idx = 0
    for cls in range(len(CLASS_NAMES)):
        base = np.array([40 + 20 * cls, 230 - 18 * cls, 60 + 13 * (cls * 7 % 10)], dtype=np.float64)
        for _ in range(per_class):
            img = np.ones((3, side, side), dtype=np.float64) * base[:, None, None]
            margin = max(2, side // 8)
            for _ in range(int(rng.integers(2, 5))):
                color = rng.uniform(0, 255, size=3)
                if rng.random() < 0.5:
                    x0, y0 = rng.integers(0, side - margin, size=2)
                    w, h = rng.integers(margin, max(margin + 1, side // 2), size=2)
                    img[:, y0 : y0 + h, x0 : x0 + w] = color[:, None, None]
                else:
                    cx, cy = rng.integers(margin, side - margin, size=2)
                    r = int(rng.integers(max(2, side // 12), max(3, side // 3)))
                    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
                    img[:, disc] = color[:, None]
            noise = rng.normal(0, 6, size=img.shape)
            images[idx] = np.clip(img + noise, 0, 255).astype(np.uint8)
            labels[idx] = cls
            idx += 1
    ids = [f"{split}-{i:05d}" for i in range(n)]
    return Dataset(images=images, labels=labels, ids=ids, split=split)


def save_cache(ds: Dataset, cache_dir: str | Path) -> Path:
    """Binary-blob-plus-index layout: raw uint8 blob next to a JSON index."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    blob = cache_dir / "images.u8"
    blob.write_bytes(ds.images.tobytes())
    index = {
        "format": CACHE_FORMAT,
        "count": len(ds),
        "shape": list(ds.images.shape[1:]),
        "labels": ds.labels.tolist(),
        "ids": ds.ids,
        "split": ds.split,
        "class_names": list(ds.class_names),
    }
    (cache_dir / "index.json").write_text(json.dumps(index))
    return cache_dir


def load_cache(cache_dir: str | Path) -> Dataset:
    cache_dir = Path(cache_dir)
    index = json.loads((cache_dir / "index.json").read_text())
    if index.get("format") != CACHE_FORMAT:
        raise ValueError(f"unsupported dataset cache format {index.get('format')!r}")
    shape = (index["count"], *index["shape"])
    images = np.frombuffer((cache_dir / "images.u8").read_bytes(), dtype=np.uint8).reshape(shape).copy()
    return Dataset(
        images=images,
        labels=np.asarray(index["labels"], dtype=np.int64),
        ids=list(index["ids"]),
        split=index["split"],
        class_names=tuple(index["class_names"]),
    )


def load_dataset(path: str | Path, split: str = "test") -> Dataset:
    """Dispatch: a decoded cache dir (index.json) or an STL-10 root."""
    path = Path(path)
    if (path / "index.json").exists():
        return load_cache(path)
    return load_stl10(path, split=split)
