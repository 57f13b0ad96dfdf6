"""Frozen pretrained visual encoders shared by both agents.

Two real backbones are supported — the CLIP ViT-B/32 image+text model and an
ImageNet VGG16 — plus a tiny fixed random-weight "toy" encoder used by tests
and demos when no weights are provisioned (not a paper configuration).

Every handle exposes a final embedding, an ordered per-layer feature stack
for the layerwise loss, and (where available) a text encoder.  Weights are
immutable for the lifetime of a handle and one handle instance is shared by
sender and receiver.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from sketchgame import clip_vit
from sketchgame.assets import weight_path

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# relu1_2, relu2_2, relu3_3, relu4_3, relu5_3 in torchvision's vgg16.features
VGG_TAP_INDICES = (3, 8, 15, 22, 29)


class EncoderKind(str, Enum):
    VIT_B32 = "vit_b32"
    VGG16 = "vgg16"
    TOY = "toy"


@dataclass
class FeatureStack:
    """Ordered per-layer activations for one batch of images.

    ``layout`` is ``"chw"`` for conv stacks ([B,C,H,W], channel dim 1) and
    ``"tokens"`` for transformer stacks ([B,T,D], channel dim -1).
    """

    layers: list[torch.Tensor]
    layout: str

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def channel_dim(self) -> int:
        return 1 if self.layout == "chw" else -1

    @property
    def dims(self) -> tuple[int, ...]:
        """Per-layer feature dimensionality (element count per image)."""
        return tuple(layer[0].numel() for layer in self.layers)


class EncoderHandle(nn.Module):
    """Frozen encoder with a fixed preprocessing contract."""

    kind: EncoderKind
    layout = "chw"

    def __init__(self, kind: EncoderKind, input_resolution: int, mean, std):
        super().__init__()
        self.kind = kind
        self.input_resolution = input_resolution
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1))

    def freeze(self) -> "EncoderHandle":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def weight_fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    # subclass surface
    def embed(self, batch: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def taps(self, batch: torch.Tensor) -> list[torch.Tensor]:
        raise NotImplementedError

    def embed_text(self, prompts: list[str]) -> torch.Tensor:
        raise NotImplementedError(f"{self.kind.value} has no text encoder")

    @property
    def has_text_encoder(self) -> bool:
        return type(self).embed_text is not EncoderHandle.embed_text


def preprocess(image, handle: EncoderHandle) -> torch.Tensor:
    """Raw [0,1] image(s) to a normalized ``[B, 3, R, R]`` batch.

    Accepts ``[H,W]``, ``[C,H,W]`` (C in {1,3}), or batched variants;
    grayscale is replicated across channels and resizing is bicubic (and so
    differentiable w.r.t. the input pixels).
    """
    x = image if torch.is_tensor(image) else torch.as_tensor(image, dtype=torch.float32)
    if not x.is_floating_point():
        x = x.float()
    if not torch.isfinite(x).all():
        raise ValueError("image contains non-finite values")

    if x.ndim == 2:
        x = x.unsqueeze(0).unsqueeze(0)  # [1,1,H,W]
    elif x.ndim == 3:
        if x.shape[0] in (1, 3):
            x = x.unsqueeze(0)  # [1,C,H,W]
        else:
            x = x.unsqueeze(1)  # batch of grayscale
    elif x.ndim != 4:
        raise ValueError(f"cannot interpret image of shape {tuple(image.shape)}")

    if x.shape[1] == 1:
        x = x.expand(-1, 3, -1, -1)
    elif x.shape[1] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {x.shape[1]}")

    res = handle.input_resolution
    if x.shape[-2:] != (res, res):
        x = F.interpolate(x, size=(res, res), mode="bicubic", align_corners=False, antialias=True)
        x = x.clamp(0.0, 1.0)
    mean = handle.mean.to(x.dtype)
    std = handle.std.to(x.dtype)
    return (x - mean) / std


def encode_embedding(image, handle: EncoderHandle) -> torch.Tensor:
    """Final embedding ``[B, D]``; gradients reach the input pixels only."""
    return handle.embed(preprocess(image, handle))


def encode_layers(image, handle: EncoderHandle) -> FeatureStack:
    """Per-layer feature stack used by the layerwise perceptual loss."""
    return FeatureStack(layers=handle.taps(preprocess(image, handle)), layout=handle.layout)


def encode_text(prompts: list[str], handle: EncoderHandle) -> torch.Tensor:
    """One embedding per prompt, same width as the image embedding."""
    if len(prompts) == 0:
        raise ValueError("prompt list is empty")
    if any(not isinstance(p, str) or p == "" for p in prompts):
        raise ValueError("prompts must be non-empty strings")
    with torch.no_grad():
        return handle.embed_text(list(prompts))


class ClipVitEncoder(EncoderHandle):
    layout = "tokens"

    def __init__(self, model: clip_vit.ClipModel, tokenizer=None):
        super().__init__(EncoderKind.VIT_B32, clip_vit.IMAGE_RESOLUTION, clip_vit.CLIP_IMAGE_MEAN, clip_vit.CLIP_IMAGE_STD)
        self.model = model
        self.tokenizer = tokenizer
        self.embed_dim = clip_vit.EMBED_DIM
        self.freeze()

    def embed(self, batch):
        return self.model.encode_image(batch)

    def taps(self, batch):
        _, taps = self.model.encode_image_with_taps(batch)
        return taps

    def embed_text(self, prompts):
        if self.tokenizer is None:
            from sketchgame.clip_bpe import load_default_tokenizer

            self.tokenizer = load_default_tokenizer()
        return self.model.encode_text(self.tokenizer.tokenize(prompts))


class VggEncoder(EncoderHandle):
    layout = "chw"

    def __init__(self, features: nn.Module, input_resolution: int = 96):
        super().__init__(EncoderKind.VGG16, input_resolution, IMAGENET_MEAN, IMAGENET_STD)
        # keep layers only up to the last tap; pool5 and the classifier are unused
        self.features = nn.Sequential(*list(features.children())[: VGG_TAP_INDICES[-1] + 1])
        self.freeze()
        with torch.no_grad():
            probe = torch.zeros(1, 3, input_resolution, input_resolution)
            self.embed_dim = self.taps(probe)[-1][0].numel()

    def taps(self, batch):
        out = []
        x = batch
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in VGG_TAP_INDICES:
                out.append(x)
        return out

    def embed(self, batch):
        return self.taps(batch)[-1].flatten(1)


class _ToyNet(nn.Module):
    def __init__(self, seed: int):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        for m in (self.conv1, self.conv2):
            nn.init.uniform_(m.weight, -0.5, 0.5, generator=gen)
            nn.init.uniform_(m.bias, -0.1, 0.1, generator=gen)


class ToyEncoder(EncoderHandle):
    """Tiny fixed random conv net; tanh keeps it smooth for gradient checks."""

    layout = "chw"

    def __init__(self, input_resolution: int = 32, seed: int = 0):
        super().__init__(EncoderKind.TOY, input_resolution, (0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        self.net = _ToyNet(seed)
        self.freeze()
        self.embed_dim = 16 * (input_resolution // 4) ** 2

    def taps(self, batch):
        a = torch.tanh(self.net.conv1(batch))
        b = torch.tanh(self.net.conv2(a))
        return [a, b]

    def embed(self, batch):
        return self.taps(batch)[-1].flatten(1)

    def embed_text(self, prompts):
        # deterministic stand-in: one fixed gaussian vector per distinct string
        out = torch.empty(len(prompts), self.embed_dim)
        for i, p in enumerate(prompts):
            digest = hashlib.sha256(p.encode("utf-8")).digest()
            gen = torch.Generator().manual_seed(int.from_bytes(digest[:8], "little"))
            out[i] = torch.randn(self.embed_dim, generator=gen)
        return out


def load_encoder(kind: EncoderKind | str, pretrained: bool = True, toy_resolution: int = 32, seed: int = 0) -> EncoderHandle:
    """Construct a frozen handle; ``pretrained=False`` keeps random weights
    (architecture-only mode for offline structural tests)."""
    kind = EncoderKind(kind)
    if kind is EncoderKind.TOY:
        return ToyEncoder(input_resolution=toy_resolution, seed=seed)
    if kind is EncoderKind.VIT_B32:
        if pretrained:
            model = clip_vit.load_clip_vit_b32(weight_path("clip_vit_b32"))
        else:
            model = clip_vit.ClipModel().eval()
        return ClipVitEncoder(model)
    if kind is EncoderKind.VGG16:
        from torchvision.models import vgg16

        model = vgg16(weights=None)
        if pretrained:
            sd = torch.load(weight_path("vgg16"), map_location="cpu", weights_only=True)
            model.load_state_dict(sd)
        return VggEncoder(model.features)
    raise ValueError(f"unknown encoder kind {kind}")
