"""Game objective and the two representational losses.

The game is trained with a multi-class hinge loss over pool scores.  Two
optional losses pull sketch and photo representations together: a layerwise
normalized squared feature distance, and a negative cosine similarity
between embeddings of randomly transformed sketches and the photo (the
transforms being a random perspective warp followed by a random resized
crop, sampled fresh per call from an explicit generator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from sketchgame.encoders import EncoderHandle, FeatureStack, encode_embedding, encode_layers

_NORM_EPS = 1e-10


def game_hinge_loss(scores: torch.Tensor, target_index, margin: float = 1.0) -> torch.Tensor:
    """Sum over distractors of max(0, margin - s_target + s_j).

    Zero iff the target beats every distractor by at least ``margin``.
    ``scores`` is ``[P]`` with an int target, or ``[B, P]`` with ``[B]``
    targets (returns ``[B]``).
    """
    squeeze = scores.ndim == 1
    if squeeze:
        scores = scores.unsqueeze(0)
        target_index = torch.tensor([int(target_index)])
    else:
        target_index = torch.as_tensor(target_index, dtype=torch.long)
    n_pool = scores.shape[-1]
    if target_index.lt(0).any() or target_index.ge(n_pool).any():
        raise IndexError(f"target index out of range for pool of {n_pool}")
    s_target = scores.gather(1, target_index.view(-1, 1))
    violations = F.relu(margin - s_target + scores)
    distractor_mask = torch.ones_like(scores).scatter(1, target_index.view(-1, 1), 0.0)
    per_game = (violations * distractor_mask).sum(dim=1)
    return per_game.squeeze(0) if squeeze else per_game


def unit_normalize(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Unit norm along ``dim`` (channels of a conv map, width of a token)."""
    return x / (x.norm(dim=dim, keepdim=True) + _NORM_EPS)


def feature_stack_distance(a: FeatureStack, b: FeatureStack, weights=None) -> torch.Tensor:
    """Sum over layers of (w_l / n_l) * ||unit(a_l) - unit(b_l)||^2, per image."""
    if len(a) != len(b):
        raise ValueError(f"stacks differ in depth: {len(a)} vs {len(b)}")
    if weights is None:
        weights = torch.ones(len(a))
    weights = torch.as_tensor(weights, dtype=torch.float32)
    if weights.numel() != len(a):
        raise ValueError(f"expected {len(a)} layer weights, got {weights.numel()}")
    if weights.lt(0).any():
        raise ValueError("layer weights must be nonnegative")

    total = None
    for w, la, lb, n_l in zip(weights, a.layers, b.layers, a.dims):
        na = unit_normalize(la, a.channel_dim)
        nb = unit_normalize(lb, b.channel_dim)
        contrib = (na - nb).pow(2).flatten(1).sum(dim=1) * (w / n_l)
        total = contrib if total is None else total + contrib
    return total


def perceptual_loss(sketch, photo, weights=None, handle: EncoderHandle | None = None) -> torch.Tensor:
    """Layerwise normalized squared feature distance between two images.

    Symmetric in its arguments, exactly zero when they coincide, and
    differentiable w.r.t. the sketch pixels.  Returns a scalar for single
    images, ``[B]`` for batches.
    """
    stack_s = encode_layers(sketch, handle)
    stack_p = encode_layers(photo, handle)
    out = feature_stack_distance(stack_s, stack_p, weights)
    return out.squeeze(0) if out.numel() == 1 else out


@dataclass(frozen=True)
class AugmentationSet:
    """Distribution the per-call image transforms are drawn from."""

    count: int = 4
    perspective_scale: float = 0.5
    crop_min: float = 0.7
    crop_max: float = 1.0
    aspect_min: float = 3.0 / 4.0
    aspect_max: float = 4.0 / 3.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("augmentation count must be >= 1")
        if not (0.0 <= self.perspective_scale <= 1.0):
            raise ValueError("perspective_scale must be in [0, 1]")
        if not (0.0 < self.crop_min <= self.crop_max <= 1.0):
            raise ValueError("crop scale range must satisfy 0 < min <= max <= 1")

    @classmethod
    def identity(cls, count: int = 4) -> "AugmentationSet":
        """Degenerate configuration whose every draw is the identity map."""
        return cls(count=count, perspective_scale=0.0, crop_min=1.0, crop_max=1.0, aspect_min=1.0, aspect_max=1.0)


@dataclass(frozen=True)
class ImageTransform:
    """One concrete sampled transform: perspective warp then resized crop.

    ``perspective`` holds (startpoints, endpoints) pixel corners or None for
    the identity; ``crop`` holds (top, left, height, width) or None.  Both
    resample bilinearly, pad with white, and are differentiable w.r.t. the
    input pixels.
    """

    perspective: tuple[tuple, tuple] | None
    crop: tuple[int, int, int, int] | None
    size: int

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        x = image
        unbatched = x.ndim == 2
        if unbatched:
            x = x.unsqueeze(0)
        channeled = x.ndim == 3
        if channeled:
            x = x.unsqueeze(1)
        if self.perspective is not None:
            start, end = self.perspective
            x = TF.perspective(x, list(start), list(end), InterpolationMode.BILINEAR, fill=[1.0])
        if self.crop is not None:
            top, left, h, w = self.crop
            x = TF.resized_crop(x, top, left, h, w, [self.size, self.size], InterpolationMode.BILINEAR, antialias=True)
        if channeled:
            x = x.squeeze(1)
        if unbatched:
            x = x.squeeze(0)
        return x

    @property
    def is_identity(self) -> bool:
        return self.perspective is None and self.crop is None


def _rand(generator: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * torch.rand(1, generator=generator).item()


def sample_augmentations(aug: AugmentationSet, generator: torch.Generator, size: int) -> list[ImageTransform]:
    """Draw ``aug.count`` transforms for a ``size`` x ``size`` canvas.

    Fully determined by the generator state; parameter draws happen in a
    fixed order so equal states give equal transforms.
    """
    transforms = []
    for _ in range(aug.count):
        # perspective: each corner moves inward by up to scale/2 of the side
        if aug.perspective_scale > 0.0:
            half_w = aug.perspective_scale * size / 2.0
            start = ((0, 0), (size - 1, 0), (size - 1, size - 1), (0, size - 1))
            sign = ((1, 1), (-1, 1), (-1, -1), (1, -1))
            end = tuple(
                (sx + dx * _rand(generator, 0, half_w), sy + dy * _rand(generator, 0, half_w))
                for (sx, sy), (dx, dy) in zip(start, sign)
            )
            perspective = (start, end)
        else:
            perspective = None

        if aug.crop_min == aug.crop_max == 1.0 and aug.aspect_min == aug.aspect_max == 1.0:
            crop = None
        else:
            area = _rand(generator, aug.crop_min, aug.crop_max) * size * size
            ratio = math.exp(_rand(generator, math.log(aug.aspect_min), math.log(aug.aspect_max)))
            w = min(size, max(1, round(math.sqrt(area * ratio))))
            h = min(size, max(1, round(math.sqrt(area / ratio))))
            top = int(_rand(generator, 0, size - h + 1))
            left = int(_rand(generator, 0, size - w + 1))
            crop = None if (top, left, h, w) == (0, 0, size, size) else (top, left, h, w)
        transforms.append(ImageTransform(perspective=perspective, crop=crop, size=size))
    return transforms


def clip_aug_loss(sketch, photo, aug: AugmentationSet, handle: EncoderHandle, generator: torch.Generator) -> torch.Tensor:
    """Negative summed cosine similarity between embeddings of transformed
    sketches and the photo; bounded in [-count, count]."""
    sketch_t = sketch if torch.is_tensor(sketch) else torch.as_tensor(sketch, dtype=torch.float32)
    size = sketch_t.shape[-1]
    transforms = sample_augmentations(aug, generator, size)
    photo_emb = encode_embedding(photo, handle)
    total = None
    for t in transforms:
        emb = encode_embedding(t(sketch_t), handle)
        cos = F.cosine_similarity(emb, photo_emb, dim=-1)
        total = cos if total is None else total + cos
    out = -total
    return out.squeeze(0) if out.numel() == 1 else out


@dataclass(frozen=True)
class LossWeights:
    lambda_percep: float = 1.0
    lambda_clip: float = 1.0

    def __post_init__(self):
        if self.lambda_percep < 0 or self.lambda_clip < 0:
            raise ValueError("loss weights must be nonnegative")


def total_loss(game, percep=None, clip=None, weights: LossWeights = LossWeights()):
    """Game loss plus at most one weighted representational term."""
    if percep is not None and clip is not None:
        raise ValueError("at most one representational loss may be active")
    if percep is not None:
        return game + weights.lambda_percep * percep
    if clip is not None:
        return game + weights.lambda_clip * clip
    return game
