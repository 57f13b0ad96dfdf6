"""Sender and receiver agents.

The sender projects frozen encoder features into a 64-d latent and decodes
them with an MLP into 80 endpoint coordinates (20 lines); the receiver maps
encoder features of sketches and photos alike into a 64-d scoring space.
Only the projection/MLP parameters train; encoder weights never do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from sketchgame.encoders import EncoderHandle, EncoderKind, encode_embedding
from sketchgame.rasterizer import DEFAULT_N_LINES, RasterConfig, rasterize

LATENT_DIM = 64
RECEIVER_DIM = 64

# primitive-decoder hidden sizes per encoder backbone
SENDER_HIDDEN = {
    EncoderKind.VGG16: (64, 256),
    EncoderKind.VIT_B32: (1024, 1024),
    EncoderKind.TOY: (64, 256),
}

CHECKPOINT_FORMAT = "sketchgame.checkpoint.v1"


class Sender(nn.Module):
    """Photo features -> 64-d latent -> MLP -> squashed line coordinates."""

    def __init__(self, feature_dim: int, hidden: tuple[int, int], n_lines: int = DEFAULT_N_LINES):
        super().__init__()
        h1, h2 = hidden
        self.n_lines = n_lines
        self.project = nn.Linear(feature_dim, LATENT_DIM)
        self.decode = nn.Sequential(
            nn.Linear(LATENT_DIM, h1),
            nn.ReLU(),
            nn.Linear(h1, h2),
            nn.ReLU(),
            nn.Linear(h2, 4 * n_lines),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        raw = self.decode(self.project(features))
        # logistic squash keeps every endpoint inside the canvas
        return torch.sigmoid(raw).reshape(-1, self.n_lines, 4)


class Receiver(nn.Module):
    """Encoder features -> 64-d scoring embedding (shared for sketches and photos)."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.project = nn.Linear(feature_dim, LATENT_DIM)
        self.mlp = nn.Sequential(nn.Linear(LATENT_DIM, RECEIVER_DIM), nn.ReLU(), nn.Linear(RECEIVER_DIM, RECEIVER_DIM))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.project(features))


def build_agents(handle: EncoderHandle, n_lines: int = DEFAULT_N_LINES, seed: int = 0) -> tuple[Sender, Receiver]:
    """Freshly initialized agents sized for the given encoder."""
    torch.manual_seed(seed)
    sender = Sender(handle.embed_dim, SENDER_HIDDEN[handle.kind], n_lines=n_lines)
    receiver = Receiver(handle.embed_dim)
    return sender, receiver


def sender_forward(photo, sender: Sender, handle: EncoderHandle, cfg: RasterConfig):
    """Draw: photo(s) -> (line coordinates, rasterized sketch).

    Returns ``([B, n, 4], [B, res, res])``; fully differentiable from sketch
    pixels back to the sender parameters.
    """
    features = encode_embedding(photo, handle)
    return sender_forward_from_features(features, sender, cfg)


def sender_forward_from_features(features: torch.Tensor, sender: Sender, cfg: RasterConfig):
    coords = sender(features)
    return coords, rasterize(coords, cfg)


def receiver_embed(image, receiver: Receiver, handle: EncoderHandle) -> torch.Tensor:
    """64-d scoring embedding of a sketch or photo."""
    return receiver(encode_embedding(image, handle))


def score_pool(sketch_embedding: torch.Tensor, pool_embeddings: torch.Tensor, cosine: bool = False) -> torch.Tensor:
    """Inner-product scores of a sketch against a pool.

    ``sketch_embedding`` is ``[D]`` or ``[B, D]``; ``pool_embeddings`` is
    ``[P, D]`` or ``[B, P, D]``.  ``cosine=True`` normalizes both sides.
    """
    if sketch_embedding.shape[-1] != pool_embeddings.shape[-1]:
        raise ValueError(
            f"embedding width mismatch: {sketch_embedding.shape[-1]} vs {pool_embeddings.shape[-1]}"
        )
    if cosine:
        sketch_embedding = torch.nn.functional.normalize(sketch_embedding, dim=-1)
        pool_embeddings = torch.nn.functional.normalize(pool_embeddings, dim=-1)
    if sketch_embedding.ndim == 1:
        return pool_embeddings @ sketch_embedding
    return torch.einsum("bd,bpd->bp", sketch_embedding, pool_embeddings)


@dataclass
class Checkpoint:
    sender: Sender
    receiver: Receiver
    encoder_kind: EncoderKind
    raster: RasterConfig
    config: dict
    config_hash: str
    step: int
    optimizer_state: dict | None = None


def save_checkpoint(
    path: str | Path,
    sender: Sender,
    receiver: Receiver,
    encoder_kind: EncoderKind,
    raster: RasterConfig,
    config: dict,
    config_hash: str,
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "encoder_kind": encoder_kind.value,
        "feature_dim": sender.project.in_features,
        "n_lines": sender.n_lines,
        "raster": raster.to_dict(),
        "config_json": json.dumps(config, sort_keys=True),
        "config_hash": config_hash,
        "step": step,
        "sender": sender.state_dict(),
        "receiver": receiver.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    kind = EncoderKind(payload["encoder_kind"])
    sender = Sender(payload["feature_dim"], SENDER_HIDDEN[kind], n_lines=payload["n_lines"])
    sender.load_state_dict(payload["sender"])
    receiver = Receiver(payload["feature_dim"])
    receiver.load_state_dict(payload["receiver"])
    return Checkpoint(
        sender=sender,
        receiver=receiver,
        encoder_kind=kind,
        raster=RasterConfig.from_dict(payload["raster"]),
        config=json.loads(payload["config_json"]),
        config_hash=payload["config_hash"],
        step=payload["step"],
        optimizer_state=payload.get("optimizer"),
    )
