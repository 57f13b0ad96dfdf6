import numpy as np
import pytest

from sketchgame import assets
from sketchgame.data import (
    CLASS_NAMES,
    IMAGE_BYTES,
    Dataset,
    Game,
    decode_stl10_images,
    encode_stl10_images,
    enumerate_test_games,
    load_cache,
    load_dataset,
    load_stl10,
    sample_game,
    save_cache,
    synthetic_dataset,
    toy_subset,
)

requires_stl10 = pytest.mark.skipif(
    not assets.have_stl10("test"),
    reason="STL-10 binaries not provisioned (run `sketchgame fetch-data`); "
    "this sandbox has no network egress to ai.stanford.edu",
)


def fake_stl10_root(tmp_path, n=12, split="test"):
    """Synthetic files in the exact on-disk binary layout."""
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(n, 3, 96, 96), dtype=np.uint8)
    labels = rng.integers(1, 11, size=n, dtype=np.uint8)
    base = tmp_path / "stl10_binary"
    base.mkdir(parents=True)
    (base / f"{split}_X.bin").write_bytes(encode_stl10_images(images))
    (base / f"{split}_y.bin").write_bytes(labels.tobytes())
    return tmp_path, images, labels


class TestBinaryCodec:
    def test_roundtrip_byte_identical(self):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(5, 3, 96, 96), dtype=np.uint8)
        raw = encode_stl10_images(images)
        assert len(raw) == 5 * IMAGE_BYTES
        again = decode_stl10_images(raw)
        assert np.array_equal(again, images)
        assert encode_stl10_images(again) == raw

    def test_column_major_plane_layout(self):
        # one image whose red plane is an arange: byte k of the file must land
        # at (row k%96, col k//96) after decoding
        plane = np.arange(96 * 96, dtype=np.uint32).astype(np.uint8)
        raw = plane.tobytes() + bytes(96 * 96) + bytes(96 * 96)
        img = decode_stl10_images(raw)[0]
        assert img[0, 17, 3] == (3 * 96 + 17) % 256

    def test_truncated_file_rejected(self):
        with pytest.raises(ValueError, match="truncated"):
            decode_stl10_images(bytes(IMAGE_BYTES - 1))

    def test_empty_file_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            decode_stl10_images(b"")


class TestLoadStl10:
    def test_loads_and_zero_indexes_labels(self, tmp_path, monkeypatch):
        import sketchgame.data as data_mod

        root, images, labels = fake_stl10_root(tmp_path, n=8000)
        ds = load_stl10(root, "test")
        assert len(ds) == 8000
        assert np.array_equal(ds.images, decode_stl10_images(encode_stl10_images(images)))
        assert np.array_equal(ds.labels, labels.astype(np.int64) - 1)

    def test_wrong_count_rejected(self, tmp_path):
        root, _, _ = fake_stl10_root(tmp_path, n=7)
        with pytest.raises(ValueError, match="expected 8000"):
            load_stl10(root, "test")

    def test_missing_files_reported(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_stl10(tmp_path, "test")

    def test_label_image_count_mismatch(self, tmp_path):
        root, images, _ = fake_stl10_root(tmp_path, n=8000)
        (tmp_path / "stl10_binary" / "test_y.bin").write_bytes(bytes(10))
        with pytest.raises(ValueError, match="label count"):
            load_stl10(root, "test")


class TestGames:
    def test_game_validates_membership(self):
        with pytest.raises(ValueError):
            Game(target_id=3, pool_ids=(1, 2), target_index=0)
        with pytest.raises(ValueError):
            Game(target_id=1, pool_ids=(1, 1), target_index=0)

    def test_k_zero_pool_is_target_only(self):
        g = sample_game(10, 0, np.random.default_rng(0))
        assert g.pool_ids == (g.target_id,)
        assert g.target_index == 0

    def test_k9_distinct_ids(self):
        g = sample_game(50, 9, np.random.default_rng(1))
        assert len(g.pool_ids) == 10
        assert len(set(g.pool_ids)) == 10

    def test_deterministic_given_state(self):
        g1 = sample_game(50, 9, np.random.default_rng(7))
        g2 = sample_game(50, 9, np.random.default_rng(7))
        assert g1 == g2

    def test_dataset_too_small(self):
        with pytest.raises(ValueError):
            sample_game(5, 9, np.random.default_rng(0))

    def test_target_position_uniformish(self):
        rng = np.random.default_rng(3)
        positions = [sample_game(30, 4, rng).target_index for _ in range(2000)]
        counts = np.bincount(positions, minlength=5)
        assert (counts > 300).all()  # each of 5 slots near 400


class TestEnumeration:
    def test_every_image_once_as_target(self):
        ds = synthetic_dataset(per_class=3, side=16)
        games = enumerate_test_games(ds, k=5, seed=0)
        assert len(games) == len(ds)
        assert [g.target_id for g in games] == list(range(len(ds)))

    def test_no_duplicates_and_pool_size(self):
        ds = synthetic_dataset(per_class=3, side=16)
        for g in enumerate_test_games(ds, k=9, seed=1):
            assert len(g.pool_ids) == 10
            assert len(set(g.pool_ids)) == 10
            assert g.pool_ids[g.target_index] == g.target_id

    def test_k_zero_singletons(self):
        ds = synthetic_dataset(per_class=2, side=16)
        games = enumerate_test_games(ds, k=0, seed=0)
        assert all(g.pool_ids == (g.target_id,) for g in games)

    def test_same_seed_identical(self):
        ds = synthetic_dataset(per_class=3, side=16)
        assert enumerate_test_games(ds, 7, seed=5) == enumerate_test_games(ds, 7, seed=5)

    def test_different_seed_differs(self):
        ds = synthetic_dataset(per_class=3, side=16)
        assert enumerate_test_games(ds, 7, seed=5) != enumerate_test_games(ds, 7, seed=6)

    def test_k_too_large(self):
        ds = synthetic_dataset(per_class=1, side=16)
        with pytest.raises(ValueError):
            enumerate_test_games(ds, k=len(ds), seed=0)


class TestToySubset:
    def test_class_balanced(self):
        ds = synthetic_dataset(per_class=30, side=16)
        toy = toy_subset(ds, per_class=10, seed=0)
        assert len(toy) == 100
        assert all(c == 10 for c in toy.class_histogram().values())

    def test_deterministic(self):
        ds = synthetic_dataset(per_class=30, side=16)
        t1 = toy_subset(ds, per_class=10, seed=3)
        t2 = toy_subset(ds, per_class=10, seed=3)
        assert np.array_equal(t1.images, t2.images) and t1.ids == t2.ids


class TestCache:
    def test_roundtrip(self, tmp_path):
        ds = synthetic_dataset(per_class=4, side=16)
        save_cache(ds, tmp_path / "cache")
        again = load_cache(tmp_path / "cache")
        assert np.array_equal(again.images, ds.images)
        assert np.array_equal(again.labels, ds.labels)
        assert again.ids == ds.ids and again.split == ds.split

    def test_dispatcher(self, tmp_path):
        ds = synthetic_dataset(per_class=2, side=16)
        save_cache(ds, tmp_path / "cache")
        assert len(load_dataset(tmp_path / "cache")) == len(ds)
        root, _, _ = fake_stl10_root(tmp_path / "raw", n=8000)
        assert len(load_dataset(root, "test")) == 8000


@requires_stl10
class TestRealStl10:
    def test_8000_test_images_800_per_class(self):
        ds = load_stl10(assets.stl10_root(), "test")
        assert len(ds) == 8000
        assert all(count == 800 for count in ds.class_histogram().values())

    def test_roundtrip_byte_identical_on_disk(self):
        raw = (assets.stl10_root() / "test_X.bin").read_bytes()
        assert encode_stl10_images(decode_stl10_images(raw)) == raw
