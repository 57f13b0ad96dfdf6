import pytest
import torch

from sketchgame.agents import (
    Receiver,
    Sender,
    build_agents,
    load_checkpoint,
    receiver_embed,
    save_checkpoint,
    score_pool,
    sender_forward,
)
from sketchgame.encoders import EncoderKind, encode_embedding, load_encoder
from sketchgame.losses import game_hinge_loss
from sketchgame.rasterizer import RasterConfig


@pytest.fixture(scope="module")
def toy():
    return load_encoder("toy", toy_resolution=32)


@pytest.fixture(scope="module")
def agents(toy):
    return build_agents(toy, seed=0)


class TestSender:
    def test_decoder_shapes_by_encoder(self):
        vit = load_encoder("vit_b32", pretrained=False)
        sender, _ = build_agents(vit)
        dims = [m.out_features for m in sender.decode if isinstance(m, torch.nn.Linear)]
        assert dims == [1024, 1024, 80]

        vgg = load_encoder("vgg16", pretrained=False)
        sender_vgg, _ = build_agents(vgg)
        dims = [m.out_features for m in sender_vgg.decode if isinstance(m, torch.nn.Linear)]
        assert dims == [64, 256, 80]

    def test_projection_is_64d(self, agents):
        sender, receiver = agents
        assert sender.project.out_features == 64
        assert receiver.project.out_features == 64

    def test_sketch_has_twenty_inrange_segments(self, agents, toy):
        sender, _ = agents
        photo = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(0))
        coords, raster = sender_forward(photo, sender, toy, RasterConfig(resolution=32))
        assert coords.shape == (1, 20, 4)
        assert coords.ge(0).all() and coords.le(1).all()
        assert raster.shape == (1, 32, 32)
        assert raster.ge(0).all() and raster.le(1).all()

    def test_same_photo_same_sketch(self, agents, toy):
        sender, _ = agents
        photo = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(1))
        cfg = RasterConfig(resolution=32)
        c1, r1 = sender_forward(photo, sender, toy, cfg)
        c2, r2 = sender_forward(photo, sender, toy, cfg)
        assert torch.equal(c1, c2) and torch.equal(r1, r2)


class TestReceiver:
    def test_embedding_is_64d_finite(self, agents, toy):
        _, receiver = agents
        emb = receiver_embed(torch.rand(3, 32, 32), receiver, toy)
        assert emb.shape == (1, 64)
        assert torch.isfinite(emb).all()

    def test_deterministic(self, agents, toy):
        _, receiver = agents
        img = torch.rand(32, 32)
        assert torch.equal(receiver_embed(img, receiver, toy), receiver_embed(img, receiver, toy))

    def test_white_sketch_vs_photo_differ(self, agents, toy):
        _, receiver = agents
        white = torch.ones(32, 32)
        photo = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(2))
        assert not torch.allclose(receiver_embed(white, receiver, toy), receiver_embed(photo, receiver, toy))


class TestScorePool:
    def test_unit_basis(self):
        e1 = torch.zeros(64)
        e1[0] = 1.0
        e2 = torch.zeros(64)
        e2[1] = 1.0
        scores = score_pool(e1, torch.stack([e1, e2]))
        assert torch.equal(scores, torch.tensor([1.0, 0.0]))

    def test_zero_embedding_zero_scores(self):
        pool = torch.rand(5, 64)
        assert score_pool(torch.zeros(64), pool).eq(0).all()

    def test_matches_bruteforce_inner_products(self):
        gen = torch.Generator().manual_seed(3)
        sketch = torch.rand(64, generator=gen)
        pool = torch.rand(3, 64, generator=gen)
        scores = score_pool(sketch, pool)
        for j in range(3):
            want = sum(sketch[d].item() * pool[j, d].item() for d in range(64))
            assert scores[j].item() == pytest.approx(want, rel=1e-5)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            score_pool(torch.rand(32), torch.rand(3, 64))

    def test_argmax_invariant_to_common_positive_rescale(self):
        gen = torch.Generator().manual_seed(4)
        sketch = torch.rand(64, generator=gen)
        pool = torch.rand(10, 64, generator=gen)
        base = score_pool(sketch, pool).argmax()
        for scale in (0.01, 3.7, 1000.0):
            assert score_pool(sketch, pool * scale).argmax() == base

    def test_batched(self):
        gen = torch.Generator().manual_seed(5)
        sk = torch.rand(4, 64, generator=gen)
        pool = torch.rand(4, 7, 64, generator=gen)
        scores = score_pool(sk, pool)
        assert scores.shape == (4, 7)
        assert torch.allclose(scores[2], pool[2] @ sk[2])


class TestTrainableSurface:
    def test_only_agent_parameters_get_gradients(self, toy):
        sender, receiver = build_agents(toy, seed=1)
        cfg = RasterConfig(resolution=32)
        photos = torch.rand(3, 3, 32, 32, generator=torch.Generator().manual_seed(6))
        _, sketch = sender_forward(photos[:1], sender, toy, cfg)
        sk_emb = receiver_embed(sketch, receiver, toy)
        pool_emb = receiver_embed(photos, receiver, toy)
        loss = game_hinge_loss(score_pool(sk_emb[0], pool_emb), 0)
        loss.backward()
        assert all(p.grad is not None for p in sender.parameters())
        assert all(p.grad is not None for p in receiver.parameters())
        assert all(p.grad is None for p in toy.parameters())

    def test_end_to_end_gradient_matches_finite_differences(self):
        # float64 pipeline at reduced resolution; no stochastic layers anywhere
        toy = load_encoder("toy", toy_resolution=16).double()
        cfg = RasterConfig(resolution=16)
        sender, receiver = build_agents(toy, seed=2)
        sender.double()
        receiver.double()
        photos = torch.rand(3, 3, 16, 16, generator=torch.Generator().manual_seed(7), dtype=torch.float64)

        def game_loss():
            _, sketch = sender_forward(photos[:1], sender, toy, cfg)
            sk_emb = receiver_embed(sketch, receiver, toy)
            pool_emb = receiver_embed(photos, receiver, toy)
            return game_hinge_loss(score_pool(sk_emb[0], pool_emb), 0)

        loss = game_loss()
        loss.backward()
        weight = sender.decode[2].weight  # a hidden-layer parameter
        idx = (5, 11)
        analytic = weight.grad[idx].item()

        h = 1e-5
        with torch.no_grad():
            weight[idx] += h
        hi = game_loss().item()
        with torch.no_grad():
            weight[idx] -= 2 * h
        lo = game_loss().item()
        with torch.no_grad():
            weight[idx] += h
        numeric = (hi - lo) / (2 * h)
        assert numeric == pytest.approx(analytic, rel=1e-2, abs=1e-8)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, toy):
        sender, receiver = build_agents(toy, seed=3)
        cfg = RasterConfig(resolution=32)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, sender, receiver, toy.kind, cfg, {"k": 9}, "abc123", step=17)
        ck = load_checkpoint(path)
        assert ck.encoder_kind == EncoderKind.TOY
        assert ck.step == 17
        assert ck.config == {"k": 9}
        assert ck.config_hash == "abc123"
        assert ck.raster == cfg
        for a, b in zip(sender.state_dict().values(), ck.sender.state_dict().values()):
            assert torch.equal(a, b)
        photo = torch.rand(3, 32, 32)
        _, r1 = sender_forward(photo, sender, toy, cfg)
        _, r2 = sender_forward(photo, ck.sender, toy, cfg)
        assert torch.equal(r1, r2)

    def test_format_tag_enforced(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"format": "something.else"}, path)
        with pytest.raises(ValueError):
            load_checkpoint(path)
