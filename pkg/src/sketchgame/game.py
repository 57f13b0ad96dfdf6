"""Game sampling, training loop, checkpointing, and communication-rate
evaluation for the original game variant (receiver's target is the sender's
photo).

All stochasticity is derived statelessly from (seed, step, purpose), so a
resumed run continues bit-identically and two runs with the same config
produce the same metrics.  Photo features through the frozen encoder are
precomputed once per run; only sketches are re-encoded every step.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from sketchgame.agents import (
    Receiver,
    Sender,
    build_agents,
    load_checkpoint,
    save_checkpoint,
    score_pool,
    sender_forward_from_features,
)
from sketchgame.data import Dataset, Game, enumerate_test_games, load_dataset, sample_game, toy_subset
from sketchgame.encoders import EncoderHandle, EncoderKind, encode_embedding, load_encoder
from sketchgame.losses import AugmentationSet, LossWeights, clip_aug_loss, game_hinge_loss, perceptual_loss, total_loss
from sketchgame.rasterizer import RasterConfig

LOSS_KINDS = ("game", "game+percep", "game+clip")

_GAME_SALT = 0x9A11E
_AUG_SALT = 0xA06
_EVAL_SALT = 0xE7A1

DEFAULT_LR = {EncoderKind.VGG16: 1e-4, EncoderKind.VIT_B32: 1e-3, EncoderKind.TOY: 1e-3}


@dataclass
class GameConfig:
    encoder: str = "vit_b32"
    loss_kind: str = "game"
    loss_lambda: float = 1.0
    k: int = 99
    batch_size: int = 32
    steps: int = 2000
    lr: float | None = None
    seed: int = 0
    n_lines: int = 20
    resolution: int | None = None  # raster canvas; None = encoder input size
    sigma2: float | None = None
    aug: AugmentationSet = field(default_factory=AugmentationSet)
    data_path: str = ""
    split: str = "train"
    toy: bool = False
    toy_per_class: int = 100
    toy_encoder_resolution: int = 32
    toy_encoder_seed: int = 0
    eval_every: int = 500
    eval_k: int = 9
    eval_games: int | None = None  # None = every image once as target
    eval_seed: int = 1234
    checkpoint_every: int = 500
    out_dir: str = "runs/run"
    cosine_scores: bool = False

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.k < 1 and self.steps > 0:
            raise ValueError("k must be >= 1 for training")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")

    @property
    def encoder_kind(self) -> EncoderKind:
        return EncoderKind(self.encoder)

    @property
    def effective_lr(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.encoder_kind]

    def raster_config(self, handle: EncoderHandle) -> RasterConfig:
        res = self.resolution if self.resolution is not None else handle.input_resolution
        return RasterConfig(resolution=res, sigma2=self.sigma2)

    def to_json_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "loss": {"kind": self.loss_kind, "lambda": self.loss_lambda},
            "aug": {
                "count": self.aug.count,
                "perspective_scale": self.aug.perspective_scale,
                "crop_min": self.aug.crop_min,
                "crop_max": self.aug.crop_max,
                "aspect_min": self.aug.aspect_min,
                "aspect_max": self.aug.aspect_max,
            },
            "game": {
                "k": self.k,
                "batch_size": self.batch_size,
                "steps": self.steps,
                "lr": self.lr,
                "seed": self.seed,
                "n_lines": self.n_lines,
                "cosine_scores": self.cosine_scores,
            },
            "raster": {"resolution": self.resolution, "sigma2": self.sigma2},
            "data": {
                "path": self.data_path,
                "split": self.split,
                "toy": self.toy,
                "toy_per_class": self.toy_per_class,
                "toy_encoder_resolution": self.toy_encoder_resolution,
                "toy_encoder_seed": self.toy_encoder_seed,
            },
            "eval": {"every": self.eval_every, "k": self.eval_k, "games": self.eval_games, "seed": self.eval_seed},
            "run": {"out_dir": self.out_dir, "checkpoint_every": self.checkpoint_every},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GameConfig":
        aug_doc = doc.get("aug", {})
        aug_defaults = AugmentationSet()
        aug = AugmentationSet(
            count=aug_doc.get("count", aug_defaults.count),
            perspective_scale=aug_doc.get("perspective_scale", aug_defaults.perspective_scale),
            crop_min=aug_doc.get("crop_min", aug_defaults.crop_min),
            crop_max=aug_doc.get("crop_max", aug_defaults.crop_max),
            aspect_min=aug_doc.get("aspect_min", aug_defaults.aspect_min),
            aspect_max=aug_doc.get("aspect_max", aug_defaults.aspect_max),
        )
        game = doc.get("game", {})
        data = doc.get("data", {})
        eval_doc = doc.get("eval", {})
        run = doc.get("run", {})
        loss = doc.get("loss", {})
        defaults = cls()
        return cls(
            encoder=doc.get("encoder", defaults.encoder),
            loss_kind=loss.get("kind", defaults.loss_kind),
            loss_lambda=loss.get("lambda", defaults.loss_lambda),
            k=game.get("k", defaults.k),
            batch_size=game.get("batch_size", defaults.batch_size),
            steps=game.get("steps", defaults.steps),
            lr=game.get("lr", defaults.lr),
            seed=game.get("seed", defaults.seed),
            n_lines=game.get("n_lines", defaults.n_lines),
            cosine_scores=game.get("cosine_scores", defaults.cosine_scores),
            resolution=doc.get("raster", {}).get("resolution", defaults.resolution),
            sigma2=doc.get("raster", {}).get("sigma2", defaults.sigma2),
            aug=aug,
            data_path=data.get("path", defaults.data_path),
            split=data.get("split", defaults.split),
            toy=data.get("toy", defaults.toy),
            toy_per_class=data.get("toy_per_class", defaults.toy_per_class),
            toy_encoder_resolution=data.get("toy_encoder_resolution", defaults.toy_encoder_resolution),
            toy_encoder_seed=data.get("toy_encoder_seed", defaults.toy_encoder_seed),
            eval_every=eval_doc.get("every", defaults.eval_every),
            eval_k=eval_doc.get("k", defaults.eval_k),
            eval_games=eval_doc.get("games", defaults.eval_games),
            eval_seed=eval_doc.get("seed", defaults.eval_seed),
            checkpoint_every=run.get("checkpoint_every", defaults.checkpoint_every),
            out_dir=run.get("out_dir", defaults.out_dir),
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path) -> "GameConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def build_handle(cfg: GameConfig, pretrained: bool = True) -> EncoderHandle:
    return load_encoder(
        cfg.encoder_kind,
        pretrained=pretrained,
        toy_resolution=cfg.toy_encoder_resolution,
        seed=cfg.toy_encoder_seed,
    )


def handle_for_checkpoint(ck_config: dict, pretrained: bool = True) -> EncoderHandle:
    return build_handle(GameConfig.from_json_dict(ck_config), pretrained=pretrained)


class FeatureCache:
    """Embeddings of every dataset photo through the frozen encoder."""

    def __init__(self, ds: Dataset, handle: EncoderHandle, batch_size: int = 64):
        self.ds = ds
        self.handle = handle
        self.batch_size = batch_size
        self._features: torch.Tensor | None = None

    @property
    def features(self) -> torch.Tensor:
        if self._features is None:
            chunks = []
            with torch.no_grad():
                for lo in range(0, len(self.ds), self.batch_size):
                    batch = self.ds.image_float(np.arange(lo, min(lo + self.batch_size, len(self.ds))))
                    chunks.append(encode_embedding(batch, self.handle))
            self._features = torch.cat(chunks, dim=0)
        return self._features

    def __getitem__(self, ids) -> torch.Tensor:
        return self.features[torch.as_tensor(np.asarray(ids), dtype=torch.long)]


def _step_rng(seed: int, step: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, salt])


def _torch_gen(seed: int, step: int, salt: int) -> torch.Generator:
    derived = int(_step_rng(seed, step, salt).integers(0, 2**63 - 1))
    return torch.Generator().manual_seed(derived)


def sample_batch(ds: Dataset, k: int, batch_size: int, seed: int, step: int) -> list[Game]:
    rng = _step_rng(seed, step, _GAME_SALT)
    return [sample_game(len(ds), k, rng) for _ in range(batch_size)]


@dataclass
class StepResult:
    loss: float
    comm_rate: float


def _forward_batch(games, models, handle, cache, raster_cfg, cfg, with_loss_terms, step):
    sender, receiver = models
    target_ids = np.array([g.target_id for g in games])
    pool_ids = np.array([g.pool_ids for g in games])
    target_idx = torch.tensor([g.target_index for g in games], dtype=torch.long)

    coords, sketches = sender_forward_from_features(cache[target_ids], sender, raster_cfg)
    sketch_emb = receiver(encode_embedding(sketches, handle))
    pool_feats = cache[pool_ids.reshape(-1)].reshape(len(games), pool_ids.shape[1], -1)
    pool_emb = receiver(pool_feats.reshape(-1, pool_feats.shape[-1])).reshape(len(games), pool_ids.shape[1], -1)
    scores = score_pool(sketch_emb, pool_emb, cosine=cfg.cosine_scores)
    hinge = game_hinge_loss(scores, target_idx).mean()

    percep = clip_term = None
    if with_loss_terms and cfg.loss_kind == "game+percep":
        photos = _target_photos(games, cache.ds)
        percep = perceptual_loss(sketches, photos, handle=handle)
        percep = percep.mean() if percep.ndim else percep
    elif with_loss_terms and cfg.loss_kind == "game+clip":
        photos = _target_photos(games, cache.ds)
        gen = _torch_gen(cfg.seed, step, _AUG_SALT)
        clip_term = clip_aug_loss(sketches, photos, cfg.aug, handle, gen)
        clip_term = clip_term.mean() if clip_term.ndim else clip_term

    loss = total_loss(hinge, percep=percep, clip=clip_term, weights=LossWeights(cfg.loss_lambda, cfg.loss_lambda))
    comm = (scores.argmax(dim=1) == target_idx).float().mean().item()
    return loss, comm, {"coords": coords, "scores": scores}


def _target_photos(games, ds: Dataset):
    return ds.image_float(np.array([g.target_id for g in games]))


def train_step(
    games: list[Game],
    models: tuple[Sender, Receiver],
    optimizer: torch.optim.Optimizer,
    handle: EncoderHandle,
    cache: FeatureCache,
    cfg: GameConfig,
    step: int,
) -> StepResult:
    """One optimization step on a batch of games; encoders stay untouched."""
    raster_cfg = cfg.raster_config(handle)
    loss, comm, extras = _forward_batch(games, models, handle, cache, raster_cfg, cfg, True, step)
    if not torch.isfinite(loss):
        dump = _diagnostic_dump(cfg, step, loss, extras)
        raise RuntimeError(f"non-finite loss at step {step}; diagnostics in {dump}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return StepResult(loss=loss.item(), comm_rate=comm)


def _diagnostic_dump(cfg: GameConfig, step: int, loss, extras) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"diagnostic-step{step}.json"
    doc = {
        "step": step,
        "loss": float(loss.item()) if torch.is_tensor(loss) else loss,
        "coords_min": float(extras["coords"].min()),
        "coords_max": float(extras["coords"].max()),
        "scores_abs_max": float(extras["scores"].abs().max()),
    }
    path.write_text(json.dumps(doc, indent=2))
    return path


def evaluate_comm_rate(
    models: tuple[Sender, Receiver],
    handle: EncoderHandle,
    ds: Dataset,
    k: int,
    n_games: int | None,
    seed: int,
    cache: FeatureCache | None = None,
    cfg: GameConfig | None = None,
    batch_size: int = 64,
) -> float:
    """Fraction of games whose argmax score hits the target.

    ``n_games=None`` (or the dataset size) enumerates every image once as
    target; otherwise that many games are sampled.  K=0 pools are always
    guessed correctly by construction.
    """
    cfg = cfg or GameConfig(encoder=handle.kind.value, steps=0, k=max(k, 1))
    cache = cache or FeatureCache(ds, handle)
    raster_cfg = cfg.raster_config(handle)
    if n_games is None or n_games == len(ds):
        games = enumerate_test_games(ds, k, seed)
    else:
        if n_games < 1:
            raise ValueError("n_games must be >= 1")
        rng = _step_rng(seed, 0, _EVAL_SALT)
        games = [sample_game(len(ds), k, rng) for _ in range(n_games)]

    hits = 0
    with torch.no_grad():
        for lo in range(0, len(games), batch_size):
            chunk = games[lo : lo + batch_size]
            _, comm, _ = _forward_batch(chunk, models, handle, cache, raster_cfg, cfg, False, 0)
            hits += comm * len(chunk)
    return hits / len(games)


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    final_step: int
    final_eval_comm_rate: float | None


def load_training_dataset(cfg: GameConfig) -> Dataset:
    ds = load_dataset(cfg.data_path, split=cfg.split)
    if cfg.toy:
        ds = toy_subset(ds, per_class=cfg.toy_per_class, seed=cfg.seed)
    return ds


def train(cfg: GameConfig, resume: str | Path | None = None, pretrained: bool = True, log=print) -> TrainResult:
    """Full training run: periodic eval, periodic checkpoints, JSONL metrics.

    Metrics rows carry {step, loss, comm_rate, wallclock}; rows written at
    eval points additionally carry eval_comm_rate.  Wallclock is elapsed
    seconds and is the only nondeterministic field.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ds = load_training_dataset(cfg)  # missing data raises before any step
    handle = build_handle(cfg, pretrained=pretrained)
    raster_cfg = cfg.raster_config(handle)
    cache = FeatureCache(ds, handle)

    start_step = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        sender, receiver = ck.sender, ck.receiver
        optimizer = torch.optim.Adam(list(sender.parameters()) + list(receiver.parameters()), lr=cfg.effective_lr)
        if ck.optimizer_state is not None:
            optimizer.load_state_dict(ck.optimizer_state)
        start_step = ck.step
    else:
        sender, receiver = build_agents(handle, n_lines=cfg.n_lines, seed=cfg.seed)
        optimizer = torch.optim.Adam(list(sender.parameters()) + list(receiver.parameters()), lr=cfg.effective_lr)

    (out_dir / "config.json").write_text(json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True))
    metrics_path = out_dir / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    started = time.monotonic()
    last_eval: float | None = None

    def save(step):
        path = out_dir / f"ckpt-{step:06d}.pt"
        save_checkpoint(
            path, sender, receiver, handle.kind, raster_cfg, cfg.to_json_dict(), cfg.config_hash(), step, optimizer
        )
        return path

    ckpt_path = save(start_step)
    with open(metrics_path, mode) as metrics:
        for step in range(start_step + 1, cfg.steps + 1):
            games = sample_batch(ds, cfg.k, cfg.batch_size, cfg.seed, step)
            result = train_step(games, (sender, receiver), optimizer, handle, cache, cfg, step)
            row = {
                "step": step,
                "loss": result.loss,
                "comm_rate": result.comm_rate,
                "wallclock": round(time.monotonic() - started, 3),
            }
            if cfg.eval_every and step % cfg.eval_every == 0:
                last_eval = evaluate_comm_rate(
                    (sender, receiver), handle, ds, cfg.eval_k, cfg.eval_games, cfg.eval_seed, cache, cfg
                )
                row["eval_comm_rate"] = last_eval
                log(f"step {step}: loss {result.loss:.4f}, train comm {result.comm_rate:.3f}, eval comm {last_eval:.3f}")
            metrics.write(json.dumps(row) + "\n")
            metrics.flush()
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ckpt_path = save(step)

    if cfg.steps > start_step:
        ckpt_path = save(cfg.steps)
    if cfg.steps == 0 or last_eval is None:
        final_eval = None
    else:
        final_eval = last_eval
    return TrainResult(
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        final_step=max(cfg.steps, start_step),
        final_eval_comm_rate=final_eval,
    )


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def metrics_equal_ignoring_wallclock(a: list[dict], b: list[dict]) -> bool:
    """Bit-identical comparison of metric logs minus the wallclock field."""
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wallclock"} for r in rows]
    return strip(a) == strip(b)
