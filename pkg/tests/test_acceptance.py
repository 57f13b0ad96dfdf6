"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria that require the provisioned pretrained weights or the STL-10
binaries skip with an explicit reason when those assets are absent (this
sandbox has no network egress; `sketchgame fetch-weights` / `fetch-data`
provision them where the hosts are reachable).  Everything else runs
offline and must be green.

Run with: pytest tests/test_acceptance.py -v -s
"""

import json
import time

import numpy as np
import pytest
import torch

from sketchgame import assets
from sketchgame.data import enumerate_test_games, load_stl10, synthetic_dataset, save_cache, toy_subset
from sketchgame.encoders import load_encoder
from sketchgame.losses import AugmentationSet, clip_aug_loss, game_hinge_loss, perceptual_loss
from sketchgame.rasterizer import RasterConfig, rasterize

CLIP_ASSETS = ("clip_vit_b32", "clip_bpe_vocab")

requires_clip = pytest.mark.skipif(
    not assets.have_weights(*CLIP_ASSETS),
    reason="CLIP ViT-B/32 weights + BPE vocab not provisioned (sketchgame fetch-weights); "
    "no network egress in this sandbox",
)
requires_stl10 = pytest.mark.skipif(
    not assets.have_stl10("test"),
    reason="STL-10 binaries not provisioned (sketchgame fetch-data); no network egress in this sandbox",
)
requires_stl10_train = pytest.mark.skipif(
    not assets.have_stl10("train"),
    reason="STL-10 train split not provisioned (sketchgame fetch-data); no network egress in this sandbox",
)


def ok(name: str, detail: str = ""):
    print(f"ACCEPTANCE PASS: {name}" + (f" ({detail})" if detail else ""))


@requires_clip
@requires_stl10
def test_probe_zero_shot_reproduction():
    """c(target)==gt on the 8000 STL-10 test photos, 20-prompt set."""
    from sketchgame.probe import PromptSet, classify_dataset

    handle = load_encoder("vit_b32", pretrained=True)
    prompts = PromptSet.build(handle)
    ds = load_stl10(assets.stl10_root(), "test")
    cls_idx, type_idx = classify_dataset(ds, prompts, handle, batch_size=64)
    class_acc = 100.0 * float((cls_idx == ds.labels).mean())
    photo_rate = 100.0 * float((type_idx == 1).mean())
    assert class_acc == pytest.approx(97.3, abs=0.5), f"c(target)==gt(input) = {class_acc:.2f}%"
    assert photo_rate == pytest.approx(99.4, abs=0.5), f"tp(target)=='photo' = {photo_rate:.2f}%"
    ok("probe zero-shot reproduction", f"c==gt {class_acc:.2f}%, tp==photo {photo_rate:.2f}%")


def test_rasterizer_gradient_suite():
    """FD agreement on >=20 LineSets at 32x32, bit-exact permutation
    invariance, outputs in [0,1], all inside a minute."""
    from gradutils import grad_check_passes, rasterizer_grad_errors, sample_checkable_lineset

    start = time.monotonic()
    cfg = RasterConfig(resolution=32)
    for seed in range(20):
        lines, mask = sample_checkable_lineset(seed, cfg)
        analytic, numeric = rasterizer_grad_errors(lines, mask, cfg)
        assert grad_check_passes(analytic, numeric), f"gradient mismatch at seed {seed}"

    gen = torch.Generator().manual_seed(0)
    for _ in range(5):
        lines = torch.rand(20, 4, generator=gen)
        base = rasterize(lines, cfg)
        assert base.ge(0).all() and base.le(1).all()
        perm = torch.randperm(20, generator=gen)
        assert torch.equal(rasterize(lines[perm], cfg), base)

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    ok("rasterizer gradient suite", f"{elapsed:.1f}s")


def test_loss_identities():
    toy = load_encoder("toy", toy_resolution=32)
    img = torch.rand(32, 32, generator=torch.Generator().manual_seed(0))
    other = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(1))

    assert perceptual_loss(img, img, handle=toy).item() == 0.0
    ab = perceptual_loss(img, other, handle=toy).item()
    ba = perceptual_loss(other, img, handle=toy).item()
    assert abs(ab - ba) <= 1e-6

    loss = clip_aug_loss(img, img, AugmentationSet.identity(), toy, torch.Generator().manual_seed(0))
    assert loss.item() == pytest.approx(-4.0, abs=1e-5)

    assert game_hinge_loss(torch.tensor([5.0, 0.0, 0.0]), 0).item() == 0.0
    assert game_hinge_loss(torch.tensor([1.0, 3.0, 2.0]), 0).item() == 5.0
    ok("loss identities", f"percep(A,A)=0, sym diff {abs(ab - ba):.1e}, clip id {loss.item():.6f}")


@requires_clip
@requires_stl10_train
def test_desk_scale_training_smoke(tmp_path):
    """1000-image class-balanced toy split, K=9, ViT, game loss only,
    <=2000 steps, eval comm rate >= 30% (3x chance).

    The paper's full-scale accuracies (ViT 69.8/63.4/61.1%, VGG
    75.7/72.1/51.8% at K=99) and the human rates are documentation
    references only, not desk targets.
    """
    from sketchgame.game import GameConfig, train

    cfg = GameConfig(
        encoder="vit_b32",
        loss_kind="game",
        k=9,
        batch_size=16,
        steps=2000,
        seed=0,
        data_path=str(assets.stl10_root()),
        split="train",
        toy=True,
        toy_per_class=100,
        eval_every=2000,
        eval_k=9,
        eval_seed=7,
        checkpoint_every=1000,
        out_dir=str(tmp_path / "smoke"),
    )
    result = train(cfg)
    assert result.final_eval_comm_rate is not None
    assert result.final_eval_comm_rate >= 0.30, f"eval comm rate {result.final_eval_comm_rate:.3f}"
    ok("desk-scale training smoke", f"eval comm rate {result.final_eval_comm_rate:.3f}")


def test_determinism(tmp_path):
    """Same config+seed: metric logs (minus wallclock), enumerated games,
    and probe reports are bit-identical."""
    from sketchgame.agents import build_agents
    from sketchgame.game import GameConfig, metrics_equal_ignoring_wallclock, read_metrics, train
    from sketchgame.probe import PromptSet, probe_games

    ds = synthetic_dataset(per_class=8, seed=0, side=32)
    cache_dir = save_cache(ds, tmp_path / "cache")

    def run(out):
        cfg = GameConfig(
            encoder="toy", k=9, batch_size=8, steps=5, lr=1e-3, seed=3,
            data_path=str(cache_dir), eval_every=5, eval_k=9, eval_seed=11,
            checkpoint_every=0, out_dir=str(tmp_path / out),
        )
        return train(cfg, log=lambda *_: None)

    m1 = read_metrics(run("a").metrics_path)
    m2 = read_metrics(run("b").metrics_path)
    assert metrics_equal_ignoring_wallclock(m1, m2)

    g1 = enumerate_test_games(ds, k=9, seed=5)
    g2 = enumerate_test_games(ds, k=9, seed=5)
    assert g1 == g2

    toy = load_encoder("toy", toy_resolution=32)
    sender, receiver = build_agents(toy, seed=0)
    prompts = PromptSet.build(toy)
    raster = RasterConfig(resolution=32)
    r1 = probe_games(sender, receiver, toy, toy, prompts, ds, g1[:30], raster, meta={"seed": 5})
    r2 = probe_games(sender, receiver, toy, toy, prompts, ds, g2[:30], raster, meta={"seed": 5})
    assert r1.to_json() == r2.to_json()
    ok("determinism", "metrics, games, probe reports bit-identical")


def test_data_integrity_synthetic_roundtrip():
    """Codec invariant provable offline: decode -> re-encode is byte-identical."""
    from sketchgame.data import decode_stl10_images, encode_stl10_images

    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(64, 3, 96, 96), dtype=np.uint8)
    raw = encode_stl10_images(images)
    assert encode_stl10_images(decode_stl10_images(raw)) == raw
    ok("data integrity (codec round-trip)", "64 synthetic records byte-identical")


@requires_stl10
def test_data_integrity_stl10():
    ds = load_stl10(assets.stl10_root(), "test")
    assert len(ds) == 8000
    hist = ds.class_histogram()
    assert all(count == 800 for count in hist.values()), hist

    from sketchgame.data import decode_stl10_images, encode_stl10_images

    raw = (assets.stl10_root() / "test_X.bin").read_bytes()
    assert encode_stl10_images(decode_stl10_images(raw)) == raw
    ok("data integrity (STL-10)", "8000 images, 800/class, byte-identical round-trip")


def test_service_durability(tmp_path):
    """Crash between answer persistence and ack loses nothing; the replayed
    event log reproduces the summary exactly.  Runs with no UI built."""
    from sketchgame.agents import build_agents, save_checkpoint
    from sketchgame.game import GameConfig
    from sketchgame.service import EvalService, SessionStore, summarize

    ds = synthetic_dataset(per_class=5, seed=0, side=32)
    ckpt_dir = tmp_path / "ckpts"
    ckpt_dir.mkdir()
    handle = load_encoder("toy", toy_resolution=32)
    sender, receiver = build_agents(handle, seed=0)
    cfg = GameConfig(encoder="toy", steps=0, k=9)
    save_checkpoint(ckpt_dir / "stub.pt", sender, receiver, handle.kind, cfg.raster_config(handle),
                    cfg.to_json_dict(), cfg.config_hash(), step=0)

    service = EvalService(ckpt_dir, SessionStore(tmp_path / "store"), ds, k=9, games_per_session=30)
    sid = service.create_session("stub", "participant-1", seed=1)["session_id"]
    state = service.store.load_session(sid)

    # crash after persisting the answer but before the ack
    first_ref = state.games[0].photo_refs[state.games[0].display_pool_ids.index(state.games[0].target_id)]
    service.store.append_answer(sid, 0, first_ref)

    revived = EvalService(ckpt_dir, SessionStore(tmp_path / "store"), ds, k=9, games_per_session=30)
    ack = revived.submit_answer(sid, 0, first_ref)  # idempotent client retry
    assert ack["ok"] and ack["duplicate"]

    rng = np.random.default_rng(2)
    for i in range(1, 30):
        game = state.games[i]
        if i % 2 == 0:  # half right, half random
            ref = game.photo_refs[game.display_pool_ids.index(game.target_id)]
        else:
            ref = game.photo_refs[int(rng.integers(10))]
        revived.submit_answer(sid, i, ref)

    direct = revived.summary(sid).to_payload()
    replayed_state = SessionStore(tmp_path / "store").load_session(sid)
    assert len(replayed_state.answers) == 30
    assert summarize(replayed_state, ds).to_payload() == direct
    assert direct["class_comm_rate"] >= direct["comm_rate"]
    ok("service durability", f"30 answers intact, comm rate {direct['comm_rate']:.3f}")
