"""CLIP ViT-B/32 image and text towers, checkpoint-compatible with the
released model.

Module and parameter names mirror the published checkpoint exactly
(``visual.conv1``, ``visual.transformer.resblocks.N.attn.in_proj_weight``,
``text_projection``, ...), so the provisioned ``ViT-B-32.pt`` — either the
TorchScript archive or a plain state dict — loads without any renaming.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import torch
from torch import nn

EMBED_DIM = 512
IMAGE_RESOLUTION = 224
VISION_WIDTH = 768
VISION_LAYERS = 12
VISION_PATCH = 32
CONTEXT_LENGTH = 77
VOCAB_SIZE = 49408
TEXT_WIDTH = 512
TEXT_HEADS = 8
TEXT_LAYERS = 12

CLIP_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


class QuickGELU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.sigmoid(1.702 * x)


class ResidualAttentionBlock(nn.Module):
    def __init__(self, d_model: int, n_head: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, n_head)
        self.ln_1 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            OrderedDict(
                [
                    ("c_fc", nn.Linear(d_model, d_model * 4)),
                    ("gelu", QuickGELU()),
                    ("c_proj", nn.Linear(d_model * 4, d_model)),
                ]
            )
        )
        self.ln_2 = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor | None = None) -> torch.Tensor:
        y = self.ln_1(x)
        attn_out, _ = self.attn(y, y, y, need_weights=False, attn_mask=attn_mask)
        x = x + attn_out
        return x + self.mlp(self.ln_2(x))


class Transformer(nn.Module):
    def __init__(self, width: int, layers: int, heads: int):
        super().__init__()
        self.resblocks = nn.ModuleList(ResidualAttentionBlock(width, heads) for _ in range(layers))

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor | None = None) -> torch.Tensor:
        for block in self.resblocks:
            x = block(x, attn_mask)
        return x

    def forward_with_taps(self, x: torch.Tensor, attn_mask: torch.Tensor | None = None):
        """Output plus the residual stream after every block (LND layout)."""
        taps = []
        for block in self.resblocks:
            x = block(x, attn_mask)
            taps.append(x)
        return x, taps


class VisionTransformer(nn.Module):
    def __init__(self, resolution: int, patch: int, width: int, layers: int, heads: int, out_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, kernel_size=patch, stride=patch, bias=False)
        scale = width**-0.5
        self.class_embedding = nn.Parameter(scale * torch.randn(width))
        self.positional_embedding = nn.Parameter(scale * torch.randn((resolution // patch) ** 2 + 1, width))
        self.ln_pre = nn.LayerNorm(width)
        self.transformer = Transformer(width, layers, heads)
        self.ln_post = nn.LayerNorm(width)
        self.proj = nn.Parameter(scale * torch.randn(width, out_dim))

    def _embed_patches(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv1(x)  # [B, width, g, g]
        x = x.reshape(x.shape[0], x.shape[1], -1).permute(0, 2, 1)  # [B, g*g, width]
        cls = self.class_embedding.to(x.dtype).expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding.to(x.dtype)
        x = self.ln_pre(x)
        return x.permute(1, 0, 2)  # LND

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.transformer(self._embed_patches(x))
        x = x.permute(1, 0, 2)
        return self.ln_post(x[:, 0, :]) @ self.proj

    def forward_with_taps(self, x: torch.Tensor):
        x, taps = self.transformer.forward_with_taps(self._embed_patches(x))
        x = x.permute(1, 0, 2)
        embedding = self.ln_post(x[:, 0, :]) @ self.proj
        return embedding, [t.permute(1, 0, 2) for t in taps]  # [B, tokens, width] each


class ClipModel(nn.Module):
    """Joint image-text embedding model (ViT-B/32 configuration)."""

    def __init__(self):
        super().__init__()
        self.visual = VisionTransformer(
            IMAGE_RESOLUTION, VISION_PATCH, VISION_WIDTH, VISION_LAYERS, VISION_WIDTH // 64, EMBED_DIM
        )
        self.transformer = Transformer(TEXT_WIDTH, TEXT_LAYERS, TEXT_HEADS)
        self.token_embedding = nn.Embedding(VOCAB_SIZE, TEXT_WIDTH)
        self.positional_embedding = nn.Parameter(torch.empty(CONTEXT_LENGTH, TEXT_WIDTH).normal_(std=0.01))
        self.ln_final = nn.LayerNorm(TEXT_WIDTH)
        self.text_projection = nn.Parameter(torch.empty(TEXT_WIDTH, EMBED_DIM).normal_(std=TEXT_WIDTH**-0.5))
        self.logit_scale = nn.Parameter(torch.tensor(0.0))
        # plain attribute: the causal mask is derived, not a checkpoint entry
        self.attn_mask = torch.full((CONTEXT_LENGTH, CONTEXT_LENGTH), float("-inf")).triu_(1)

    def encode_image(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.visual(pixels)

    def encode_image_with_taps(self, pixels: torch.Tensor):
        return self.visual.forward_with_taps(pixels)

    def encode_text(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.token_embedding(tokens) + self.positional_embedding.to(self.token_embedding.weight.dtype)
        x = x.permute(1, 0, 2)
        x = self.transformer(x, self.attn_mask.to(x.dtype))
        x = x.permute(1, 0, 2)
        x = self.ln_final(x)
        # features at the EOT position (highest token id per sequence)
        x = x[torch.arange(x.shape[0]), tokens.argmax(dim=-1)]
        return x @ self.text_projection


def _extract_state_dict(path: str | Path) -> dict[str, torch.Tensor]:
    try:
        scripted = torch.jit.load(str(path), map_location="cpu")
        sd = scripted.state_dict()
    except RuntimeError:
        sd = torch.load(str(path), map_location="cpu", weights_only=True)
        if isinstance(sd, dict) and "state_dict" in sd:
            sd = sd["state_dict"]
    for junk in ("input_resolution", "context_length", "vocab_size"):
        sd.pop(junk, None)
    return {k: v for k, v in sd.items() if not k.endswith("attn_mask")}


def load_clip_vit_b32(path: str | Path) -> ClipModel:
    """Build the model and load the released checkpoint into it."""
    sd = _extract_state_dict(path)
    width = sd["visual.conv1.weight"].shape[0]
    patch = sd["visual.conv1.weight"].shape[-1]
    if (width, patch) != (VISION_WIDTH, VISION_PATCH):
        raise ValueError(f"checkpoint is not ViT-B/32 (width {width}, patch {patch})")
    model = ClipModel()
    model.load_state_dict({k: v.float() for k, v in sd.items()}, strict=True)
    model.eval()
    return model


def expected_checkpoint_keys() -> set[str]:
    """Key schema of the released ViT-B/32 state dict, for structural checks."""
    keys = {
        "visual.class_embedding",
        "visual.positional_embedding",
        "visual.proj",
        "visual.conv1.weight",
        "visual.ln_pre.weight",
        "visual.ln_pre.bias",
        "visual.ln_post.weight",
        "visual.ln_post.bias",
        "positional_embedding",
        "text_projection",
        "logit_scale",
        "token_embedding.weight",
        "ln_final.weight",
        "ln_final.bias",
    }
    for prefix, layers in (("visual.", VISION_LAYERS), ("", TEXT_LAYERS)):
        for i in range(layers):
            base = f"{prefix}transformer.resblocks.{i}."
            keys |= {
                base + "attn.in_proj_weight",
                base + "attn.in_proj_bias",
                base + "attn.out_proj.weight",
                base + "attn.out_proj.bias",
                base + "ln_1.weight",
                base + "ln_1.bias",
                base + "mlp.c_fc.weight",
                base + "mlp.c_fc.bias",
                base + "mlp.c_proj.weight",
                base + "mlp.c_proj.bias",
                base + "ln_2.weight",
                base + "ln_2.bias",
            }
    return keys
