"""Provisioning of pretrained weights and dataset binaries.

Everything heavyweight is fetched once into a cache directory and verified
against pinned checksums, so runs are reproducible and fully offline after
provisioning.  Cache locations come from ``SKETCHGAME_WEIGHTS`` and
``SKETCHGAME_DATA`` (defaults under ``~/.cache/sketchgame``).
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import urllib.request
from dataclasses import dataclass
from pathlib import Path

WEIGHTS_ENV = "SKETCHGAME_WEIGHTS"
DATA_ENV = "SKETCHGAME_DATA"


@dataclass(frozen=True)
class RemoteFile:
    name: str
    url: str
    filename: str
    sha256: str | None = None  # full digest, or a torchvision-style hex prefix
    md5: str | None = None
    strict: bool = True  # warn instead of raise on digest mismatch


# The ViT-B-32 release URL embeds the checkpoint's full sha256; VGG16 follows
# torchvision's filename-prefix convention.  The BPE vocabulary has no
# published digest to pin against, so it is fetch-verified non-strictly.
CLIP_VIT_B32 = RemoteFile(
    name="clip_vit_b32",
    url=(
        "https://openaipublic.azureedge.net/clip/models/"
        "40d365715913c9da98579312b702a82c18be219cc2a73407c4526f58eba950af/ViT-B-32.pt"
    ),
    filename="ViT-B-32.pt",
    sha256="40d365715913c9da98579312b702a82c18be219cc2a73407c4526f58eba950af",
)
VGG16_IMAGENET = RemoteFile(
    name="vgg16",
    url="https://download.pytorch.org/models/vgg16-397923af.pth",
    filename="vgg16-397923af.pth",
    sha256="397923af",
)
CLIP_BPE_VOCAB = RemoteFile(
    name="clip_bpe_vocab",
    url="https://github.com/openai/CLIP/raw/main/clip/bpe_simple_vocab_16e6.txt.gz",
    filename="bpe_simple_vocab_16e6.txt.gz",
    strict=False,
)
STL10_BINARY = RemoteFile(
    name="stl10",
    url="http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
    filename="stl10_binary.tar.gz",
    md5="91f7769df0f17e558f3565bffb0c7dfb",
)

# per-file digests inside the STL-10 archive
STL10_MEMBER_MD5 = {
    "train_X.bin": "918c2871b30a85fa023e0c44e0bee87f",
    "train_y.bin": "5a34089d4802c674881badbb80307741",
    "test_X.bin": "7f263ba9f9e0b06b93213547f721ac82",
    "test_y.bin": "36f9794fa4beb8a2c72628de14fa638e",
}

WEIGHT_FILES = {f.name: f for f in (CLIP_VIT_B32, VGG16_IMAGENET, CLIP_BPE_VOCAB)}


class MissingAssetError(RuntimeError):
    """A required pretrained weight or dataset file is not provisioned."""


def weights_dir() -> Path:
    return Path(os.environ.get(WEIGHTS_ENV, Path.home() / ".cache" / "sketchgame" / "weights"))


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, Path.home() / ".cache" / "sketchgame" / "data"))


def file_digest(path: Path, algo: str = "sha256") -> str:
    h = hashlib.new(algo)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify(path: Path, remote: RemoteFile) -> bool:
    """True when the file's digest matches the pin (prefix pins allowed)."""
    if remote.sha256 is not None:
        return file_digest(path, "sha256").startswith(remote.sha256)
    if remote.md5 is not None:
        return file_digest(path, "md5") == remote.md5
    return True


def _record_observed_digest(path: Path) -> None:
    sidecar = path.with_suffix(path.suffix + ".sha256")
    sidecar.write_text(file_digest(path, "sha256") + "\n")


def fetch(remote: RemoteFile, dest_dir: Path, force: bool = False) -> Path:
    """Download ``remote`` into ``dest_dir``, verifying its checksum.

    An existing file that already verifies is reused.  Non-strict files
    record their observed sha256 in a sidecar and warn on later drift.
    """
    dest_dir.mkdir(parents=True, exist_ok=True)
    path = dest_dir / remote.filename
    if path.exists() and not force:
        if verify(path, remote):
            return path
        if not remote.strict:
            print(f"warning: {path.name} present but unverifiable, keeping it", file=sys.stderr)
            return path
        raise MissingAssetError(f"{path} exists but fails checksum verification; re-fetch with force")

    tmp = path.with_suffix(path.suffix + ".part")
    print(f"fetching {remote.url}")
    try:
        with urllib.request.urlopen(remote.url) as resp, open(tmp, "wb") as out:
            while True:
                chunk = resp.read(1 << 20)
                if not chunk:
                    break
                out.write(chunk)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise MissingAssetError(
            f"could not download {remote.url}: {exc}. "
            f"If this host has no network access, copy {remote.filename} into {dest_dir} manually."
        ) from exc

    if not verify(tmp, remote):
        if remote.strict:
            tmp.unlink(missing_ok=True)
            raise MissingAssetError(f"downloaded {remote.filename} fails checksum verification")
        print(f"warning: no pinned digest for {remote.filename}; recording observed sha256", file=sys.stderr)
    tmp.rename(path)
    if not remote.strict:
        _record_observed_digest(path)
    return path


def weight_path(name: str) -> Path:
    """Path of a provisioned weight file, or raise with fetch instructions."""
    remote = WEIGHT_FILES[name]
    path = weights_dir() / remote.filename
    if not path.exists():
        raise MissingAssetError(
            f"{remote.filename} is not provisioned under {weights_dir()}; "
            f"run `sketchgame fetch-weights` (or set {WEIGHTS_ENV})."
        )
    return path


def have_weights(*names: str) -> bool:
    return all((weights_dir() / WEIGHT_FILES[n].filename).exists() for n in names)


def stl10_root() -> Path:
    return data_dir() / "stl10_binary"


def have_stl10(split: str = "test") -> bool:
    root = stl10_root()
    return (root / f"{split}_X.bin").exists() and (root / f"{split}_y.bin").exists()


def fetch_weights(names: list[str] | None = None, dest: Path | None = None, force: bool = False) -> list[Path]:
    dest = dest or weights_dir()
    out = []
    for name in names or list(WEIGHT_FILES):
        out.append(fetch(WEIGHT_FILES[name], dest, force=force))
    return out


def fetch_stl10(dest: Path | None = None, force: bool = False) -> Path:
    """Download and extract the STL-10 binaries, verifying member digests."""
    import tarfile

    dest = dest or data_dir()
    root = dest / "stl10_binary"
    if have_stl10("test") and have_stl10("train") and not force:
        return root
    tar_path = fetch(STL10_BINARY, dest, force=force)
    with tarfile.open(tar_path, "r:gz") as tar:
        tar.extractall(dest, filter="data")
    for member, md5 in STL10_MEMBER_MD5.items():
        p = root / member
        if not p.exists():
            raise MissingAssetError(f"{member} missing after extraction")
        if file_digest(p, "md5") != md5:
            raise MissingAssetError(f"{member} fails its pinned md5 after extraction")
    manifest = {m: STL10_MEMBER_MD5[m] for m in STL10_MEMBER_MD5}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root
