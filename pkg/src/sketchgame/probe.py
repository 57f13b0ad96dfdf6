"""Prompt-based probe of what sketches convey.

Twenty prompts (two templates x ten classes) are embedded once with the
text encoder; an image is then assigned the class and the template of its
nearest prompt by cosine similarity.  Playing every enumerated game with a
trained sender/receiver and classifying sketch, target, and guess yields
the eight statistics of the probe report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from sketchgame.agents import Receiver, Sender, score_pool
from sketchgame.data import CLASS_NAMES, Dataset, Game
from sketchgame.encoders import EncoderHandle, encode_embedding, encode_text
from sketchgame.game import FeatureCache, GameConfig
from sketchgame.rasterizer import RasterConfig

TEMPLATES = ("a drawing of a {}.", "a photo of a {}.")
TYPE_NAMES = ("drawing", "photo")

STAT_KEYS = (
    "c_sketch_eq_gt",
    "c_sketch_eq_c_target",
    "c_sketch_eq_c_guess",
    "c_target_eq_gt",
    "c_guess_eq_gt",
    "tp_sketch_drawing",
    "tp_target_photo",
    "tp_guess_photo",
)

STAT_LABELS = {
    "c_sketch_eq_gt": "c(sketch)==gt(input)",
    "c_sketch_eq_c_target": "c(sketch)==c(target)",
    "c_sketch_eq_c_guess": "c(sketch)==c(guess)",
    "c_target_eq_gt": "c(target)==gt(input)",
    "c_guess_eq_gt": "c(guess)==gt(input)",
    "tp_sketch_drawing": "tp(sketch)=='drawing'",
    "tp_target_photo": "tp(target)=='photo'",
    "tp_guess_photo": "tp(guess)=='photo'",
}


@dataclass
class PromptSet:
    """The 20 filled prompts with their cached text embeddings.

    Prompt order is template-major: the ten drawing prompts first, then the
    ten photo prompts, classes in dataset label order.  Index arithmetic
    (template = i // n_classes, class = i % n_classes) relies on it.
    """

    classes: tuple[str, ...]
    prompts: tuple[str, ...]
    embeddings: torch.Tensor  # [2 * n_classes, D]

    @classmethod
    def build(cls, handle: EncoderHandle, classes: tuple[str, ...] = CLASS_NAMES) -> "PromptSet":
        prompts = tuple(template.format(name) for template in TEMPLATES for name in classes)
        embeddings = encode_text(list(prompts), handle)
        return cls(classes=classes, prompts=prompts, embeddings=embeddings)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_of(self, prompt_index: int) -> str:
        return self.classes[prompt_index % self.n_classes]

    def type_of(self, prompt_index: int) -> str:
        return TYPE_NAMES[prompt_index // self.n_classes]


def classify_embeddings(image_embeddings: torch.Tensor, prompts: PromptSet) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-prompt class and template indices by cosine similarity.

    Ties break to the lowest prompt index.  Returns (class_idx, type_idx)
    int arrays of length B.
    """
    img = torch.nn.functional.normalize(image_embeddings.detach().float(), dim=-1)
    txt = torch.nn.functional.normalize(prompts.embeddings.float(), dim=-1)
    sims = (img @ txt.T).cpu().numpy()
    best = sims.argmax(axis=-1)  # numpy argmax returns the first maximum
    return best % prompts.n_classes, best // prompts.n_classes


def clip_classify(image, prompts: PromptSet, handle: EncoderHandle) -> tuple[str, str]:
    """Class and type ('drawing'/'photo') of a single image."""
    if not handle.has_text_encoder:
        raise ValueError(f"{handle.kind.value} cannot embed text prompts")
    with torch.no_grad():
        emb = encode_embedding(image, handle)
    cls_idx, type_idx = classify_embeddings(emb, prompts)
    return prompts.classes[int(cls_idx[0])], TYPE_NAMES[int(type_idx[0])]


def classify_dataset(
    ds: Dataset, prompts: PromptSet, handle: EncoderHandle, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-prompt class/type indices for every dataset image."""
    cls_all, type_all = [], []
    with torch.no_grad():
        for lo in range(0, len(ds), batch_size):
            batch = ds.image_float(np.arange(lo, min(lo + batch_size, len(ds))))
            emb = encode_embedding(batch, handle)
            c, t = classify_embeddings(emb, prompts)
            cls_all.append(c)
            type_all.append(t)
    return np.concatenate(cls_all), np.concatenate(type_all)


@dataclass
class ProbeReport:
    """Exact integer counts over a played game collection."""

    n_games: int
    counts: dict[str, int]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(STAT_KEYS) - set(self.counts)
        if missing:
            raise ValueError(f"missing probe statistics: {sorted(missing)}")
        for key, value in self.counts.items():
            if not (0 <= value <= self.n_games):
                raise ValueError(f"count {key}={value} outside [0, {self.n_games}]")

    def percentage(self, key: str) -> float:
        return 100.0 * self.counts[key] / self.n_games

    @property
    def percentages(self) -> dict[str, float]:
        return {k: self.percentage(k) for k in STAT_KEYS}

    def to_json(self) -> str:
        doc = {
            "n_games": self.n_games,
            "counts": {k: self.counts[k] for k in STAT_KEYS},
            "percentages": {k: self.percentage(k) for k in STAT_KEYS},
            "meta": self.meta,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProbeReport":
        doc = json.loads(text)
        return cls(n_games=doc["n_games"], counts=doc["counts"], meta=doc.get("meta", {}))

    def render_table(self, title: str = "probe") -> str:
        label_width = max(len(v) for v in STAT_LABELS.values())
        lines = [f"{'':{label_width}}  {title}", "-" * (label_width + 2 + max(len(title), 6))]
        for key in STAT_KEYS:
            lines.append(f"{STAT_LABELS[key]:{label_width}}  {self.percentage(key):5.1f}%")
        lines.append(f"{'games':{label_width}}  {self.n_games}")
        return "\n".join(lines)


def render_comparison(reports: dict[str, ProbeReport]) -> str:
    """Several model columns side by side, one row per statistic."""
    label_width = max(len(v) for v in STAT_LABELS.values())
    names = list(reports)
    widths = [max(len(n), 6) for n in names]
    header = " " * label_width + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths))
    lines = [header, "-" * len(header)]
    for key in STAT_KEYS:
        cells = "  ".join(f"{reports[n].percentage(key):.1f}%".rjust(w) for n, w in zip(names, widths))
        lines.append(f"{STAT_LABELS[key]:{label_width}}  {cells}")
    return "\n".join(lines)


def probe_games(
    sender: Sender,
    receiver: Receiver,
    handle: EncoderHandle,
    probe_handle: EncoderHandle,
    prompts: PromptSet,
    ds: Dataset,
    games: list[Game],
    raster_cfg: RasterConfig,
    batch_size: int = 32,
    cosine_scores: bool = False,
    draw_fn=None,
    meta: dict | None = None,
) -> ProbeReport:
    """Play every game and aggregate the eight nearest-prompt statistics.

    ``handle`` is the generating model's encoder (drives sender features and
    receiver guesses); ``probe_handle`` performs all prompt classification.
    ``draw_fn`` overrides the sketching step (photos -> images), e.g. for a
    stub sender in tests.
    """
    if not probe_handle.has_text_encoder:
        raise ValueError("probe handle must embed text prompts")
    cls_ds, type_ds = classify_dataset(ds, prompts, probe_handle, batch_size=batch_size)
    gt = ds.labels
    cache = FeatureCache(ds, handle, batch_size=batch_size)

    counts = {k: 0 for k in STAT_KEYS}
    with torch.no_grad():
        for lo in range(0, len(games), batch_size):
            chunk = games[lo : lo + batch_size]
            target_ids = np.array([g.target_id for g in chunk])
            photos = ds.image_float(target_ids)
            if draw_fn is not None:
                sketches = draw_fn(photos)
            else:
                coords = sender(cache[target_ids])
                from sketchgame.rasterizer import rasterize

                sketches = rasterize(coords, raster_cfg)

            pool_ids = np.array([g.pool_ids for g in chunk])
            sketch_emb = receiver(encode_embedding(sketches, handle))
            pool_feats = cache[pool_ids.reshape(-1)].reshape(len(chunk), pool_ids.shape[1], -1)
            pool_emb = receiver(pool_feats.reshape(-1, pool_feats.shape[-1])).reshape(
                len(chunk), pool_ids.shape[1], -1
            )
            guess_pos = score_pool(sketch_emb, pool_emb, cosine=cosine_scores).argmax(dim=1).cpu().numpy()
            guess_ids = pool_ids[np.arange(len(chunk)), guess_pos]

            cls_sketch, type_sketch = classify_embeddings(encode_embedding(sketches, probe_handle), prompts)

            counts["c_sketch_eq_gt"] += int((cls_sketch == gt[target_ids]).sum())
            counts["c_sketch_eq_c_target"] += int((cls_sketch == cls_ds[target_ids]).sum())
            counts["c_sketch_eq_c_guess"] += int((cls_sketch == cls_ds[guess_ids]).sum())
            counts["c_target_eq_gt"] += int((cls_ds[target_ids] == gt[target_ids]).sum())
            counts["c_guess_eq_gt"] += int((cls_ds[guess_ids] == gt[target_ids]).sum())
            counts["tp_sketch_drawing"] += int((type_sketch == 0).sum())
            counts["tp_target_photo"] += int((type_ds[target_ids] == 1).sum())
            counts["tp_guess_photo"] += int((type_ds[guess_ids] == 1).sum())

    return ProbeReport(n_games=len(games), counts=counts, meta=meta or {})
