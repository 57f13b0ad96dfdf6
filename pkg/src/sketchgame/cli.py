"""Command-line surface: rendering, provisioning, training, evaluation,
probing, and the human-evaluation server."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np
import torch


@click.group()
def main():
    """Visual communication games played by drawing 20-line sketches."""


@main.command()
@click.option("--lines", "lines_path", type=click.Path(exists=True), help="JSON file of 80 floats (x0 y0 x1 y1 per line).")
@click.option("--checkpoint", type=click.Path(exists=True), help="Checkpoint whose sender draws the photo.")
@click.option("--photo", type=click.Path(exists=True), help="Photo to sketch (used with --checkpoint).")
@click.option("--resolution", default=224, show_default=True)
@click.option("--sigma2", type=float, default=None, help="Stroke falloff; default gives ~2px strokes.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--n-lines", default=20, show_default=True)
def render(lines_path, checkpoint, photo, resolution, sigma2, out, n_lines):
    """Rasterize a LineSet (or a checkpoint's sketch of a photo) to a PNG."""
    from sketchgame.rasterizer import LineSet, RasterConfig, rasterize, save_png

    cfg = RasterConfig(resolution=resolution, sigma2=sigma2)
    if lines_path is not None:
        lines = LineSet.from_json_file(lines_path, n_lines=n_lines)
        image = rasterize(lines, cfg)
    elif checkpoint is not None and photo is not None:
        from PIL import Image

        from sketchgame.agents import load_checkpoint, sender_forward
        from sketchgame.game import handle_for_checkpoint

        ck = load_checkpoint(checkpoint)
        handle = handle_for_checkpoint(ck.config)
        arr = np.asarray(Image.open(photo).convert("RGB"), dtype=np.float32) / 255.0
        tensor = torch.from_numpy(arr).permute(2, 0, 1)
        with torch.no_grad():
            _, image = sender_forward(tensor, ck.sender, handle, cfg)
        image = image[0]
    else:
        raise click.UsageError("provide either --lines, or --checkpoint with --photo")
    save_png(image, out)
    click.echo(f"wrote {out}")


@main.command("fetch-weights")
@click.option("--name", "names", multiple=True, type=click.Choice(["clip_vit_b32", "vgg16", "clip_bpe_vocab"]),
              help="Subset to fetch; default is everything.")
@click.option("--dest", type=click.Path(), default=None, help="Weight cache dir (default $SKETCHGAME_WEIGHTS).")
@click.option("--force", is_flag=True)
def fetch_weights(names, dest, force):
    """Download and checksum-verify the pretrained encoder weights."""
    from sketchgame import assets

    paths = assets.fetch_weights(list(names) or None, Path(dest) if dest else None, force=force)
    for p in paths:
        click.echo(f"ready: {p}")


@main.command("fetch-data")
@click.option("--dest", type=click.Path(), default=None, help="Data dir (default $SKETCHGAME_DATA).")
@click.option("--force", is_flag=True)
def fetch_data(dest, force):
    """Download STL-10 binaries and verify the pinned digests."""
    from sketchgame import assets

    root = assets.fetch_stl10(Path(dest) if dest else None, force=force)
    click.echo(f"ready: {root}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--resume", type=click.Path(exists=True), default=None)
def train(config_path, resume):
    """Run a training loop described by a JSON config file."""
    from sketchgame.game import GameConfig
    from sketchgame.game import train as run_train

    cfg = GameConfig.from_file(config_path)
    result = run_train(cfg, resume=resume)
    click.echo(f"final checkpoint: {result.checkpoint_path}")
    click.echo(f"metrics: {result.metrics_path}")
    if result.final_eval_comm_rate is not None:
        click.echo(f"final eval comm rate: {result.final_eval_comm_rate:.4f}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--k", default=9, show_default=True)
@click.option("--games", default=None, type=int, help="Number of games; default plays every image once.")
@click.option("--seed", default=0, show_default=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
def eval_cmd(checkpoint, k, games, seed, data_path, split):
    """Communication rate of a checkpoint on a dataset."""
    from sketchgame.agents import load_checkpoint
    from sketchgame.data import load_dataset
    from sketchgame.game import GameConfig, evaluate_comm_rate, handle_for_checkpoint

    ck = load_checkpoint(checkpoint)
    handle = handle_for_checkpoint(ck.config)
    ds = load_dataset(data_path, split=split)
    cfg = GameConfig.from_json_dict(ck.config)
    rate = evaluate_comm_rate((ck.sender, ck.receiver), handle, ds, k, games, seed, cfg=cfg)
    click.echo(json.dumps({"comm_rate": rate, "k": k, "games": games or len(ds), "seed": seed}))


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--games", default="all", show_default=True, help="Game count, or 'all' for one per image.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--k", default=99, show_default=True)
@click.option("--probe-encoder", default="vit_b32", show_default=True,
              help="Encoder performing prompt classification; 'toy' is test-only.")
def probe(checkpoint, games, seed, out, data_path, split, k, probe_encoder):
    """Prompt-probe a checkpoint: play games, classify sketch/target/guess."""
    from sketchgame.agents import load_checkpoint
    from sketchgame.data import enumerate_test_games, load_dataset
    from sketchgame.encoders import load_encoder
    from sketchgame.game import GameConfig, handle_for_checkpoint
    from sketchgame.probe import PromptSet, probe_games

    ck = load_checkpoint(checkpoint)
    handle = handle_for_checkpoint(ck.config)
    probe_handle = handle if probe_encoder == ck.config.get("encoder") else load_encoder(probe_encoder)
    ds = load_dataset(data_path, split=split)
    all_games = enumerate_test_games(ds, k=k, seed=seed)
    if games != "all":
        all_games = all_games[: int(games)]
    cfg = GameConfig.from_json_dict(ck.config)
    report = probe_games(
        ck.sender, ck.receiver, handle, probe_handle, PromptSet.build(probe_handle), ds, all_games,
        ck.raster, cosine_scores=cfg.cosine_scores,
        meta={"checkpoint": str(checkpoint), "seed": seed, "k": k, "split": split},
    )
    Path(out).write_text(report.to_json())
    click.echo(report.render_table(Path(checkpoint).stem))
    click.echo(f"wrote {out}")


@main.command()
@click.option("--checkpoints", "checkpoint_dir", type=click.Path(exists=True), required=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--store", "store_dir", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--k", default=9, show_default=True)
@click.option("--games-per-session", default=30, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(), default=None, help="Static dir with the built browser app.")
def serve(checkpoint_dir, port, host, store_dir, data_path, split, k, games_per_session, ui_dir):
    """Serve the human-evaluation HTTP API (and optionally the UI)."""
    import uvicorn

    from sketchgame.service import build_service, create_app

    service = build_service(checkpoint_dir, store_dir, data_path, split=split, k=k,
                            games_per_session=games_per_session)
    app = create_app(service, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("init-checkpoint")
@click.option("--encoder", default="toy", show_default=True, type=click.Choice(["toy", "vit_b32", "vgg16"]))
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--toy-resolution", default=32, show_default=True)
@click.option("--pretrained/--no-pretrained", default=True,
              help="Load provisioned encoder weights (ignored for toy).")
def init_checkpoint(encoder, out, seed, toy_resolution, pretrained):
    """Write an untrained checkpoint (stub sender) for demos and UI tests."""
    from sketchgame.agents import build_agents, save_checkpoint
    from sketchgame.game import GameConfig, build_handle

    cfg = GameConfig(encoder=encoder, steps=0, seed=seed, toy_encoder_resolution=toy_resolution)
    handle = build_handle(cfg, pretrained=pretrained and encoder != "toy")
    sender, receiver = build_agents(handle, seed=seed)
    save_checkpoint(Path(out), sender, receiver, handle.kind, cfg.raster_config(handle),
                    cfg.to_json_dict(), cfg.config_hash(), step=0)
    click.echo(f"wrote {out}")


@main.command("make-synthetic-data")
@click.option("--out", type=click.Path(), required=True)
@click.option("--per-class", default=10, show_default=True)
@click.option("--side", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
def make_synthetic_data(out, per_class, side, seed):
    """Write a synthetic stand-in dataset cache (for demos without STL-10)."""
    from sketchgame.data import save_cache, synthetic_dataset

    ds = synthetic_dataset(per_class=per_class, seed=seed, side=side)
    save_cache(ds, out)
    click.echo(f"wrote {out} ({len(ds)} images)")


if __name__ == "__main__":
    main()
