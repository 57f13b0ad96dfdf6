"""Differentiable rendering of straight-line strokes onto a grayscale canvas.

A stroke set is rendered by evaluating, at every pixel center, a Gaussian
falloff of the distance to each segment and compositing the per-segment ink
with a max.  Pixel values live in [0, 1] with 1 = white background and 0 =
full ink, and gradients flow from pixels back to the endpoint coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch

DEFAULT_N_LINES = 20

_EPS_SQ_LEN = 1e-12


def default_sigma2(resolution: int) -> float:
    """Stroke sharpness giving a full-width-at-half-maximum of ~2 pixels.

    The ink profile across a stroke is exp(-d^2 / sigma^2); solving
    exp(-d^2/s2) = 1/2 at d = 1 pixel = 1/resolution gives s2 = 1/(R^2 ln 2).
    """
    return 1.0 / (resolution * resolution * math.log(2.0))


@dataclass(frozen=True)
class RasterConfig:
    """Canvas resolution (pixels per side) and stroke falloff sigma^2.

    ``sigma2=None`` selects the resolution-dependent default above.
    """

    resolution: int = 96
    sigma2: float | None = None

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ValueError(f"resolution must be an integer >= 8, got {self.resolution}")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def effective_sigma2(self) -> float:
        return self.sigma2 if self.sigma2 is not None else default_sigma2(self.resolution)

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, d: dict) -> "RasterConfig":
        return cls(resolution=d["resolution"], sigma2=d.get("sigma2"))


class LineSet:
    """A fixed-size set of straight segments in normalized canvas coordinates.

    Wraps a ``[n_lines, 4]`` tensor of (x0, y0, x1, y1) rows, every coordinate
    in [0, 1] expressed as a fraction of the canvas side.  This is the sole
    communication channel between the agents.
    """

    def __init__(self, coords: torch.Tensor, n_lines: int = DEFAULT_N_LINES):
        if not torch.is_tensor(coords):
            coords = torch.as_tensor(coords, dtype=torch.float32)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise ValueError(f"expected [n_lines, 4] coordinates, got {tuple(coords.shape)}")
        if coords.shape[0] != n_lines:
            raise ValueError(f"expected {n_lines} segments, got {coords.shape[0]}")
        if not torch.isfinite(coords).all():
            raise ValueError("segment coordinates must be finite")
        if coords.lt(0).any() or coords.gt(1).any():
            raise ValueError("segment coordinates must lie in [0, 1]")
        self._coords = coords
        self.n_lines = n_lines

    @property
    def tensor(self) -> torch.Tensor:
        return self._coords

    def __len__(self) -> int:
        return self.n_lines

    @classmethod
    def from_flat(cls, flat, n_lines: int = DEFAULT_N_LINES) -> "LineSet":
        """Build from 4*n_lines raw values ordered (x0, y0, x1, y1) per line."""
        t = torch.as_tensor(flat, dtype=torch.float32).reshape(-1)
        if t.numel() != 4 * n_lines:
            raise ValueError(f"expected {4 * n_lines} values, got {t.numel()}")
        return cls(t.reshape(n_lines, 4), n_lines=n_lines)

    def to_json(self) -> str:
        return json.dumps([round(float(v), 8) for v in self._coords.reshape(-1)])

    @classmethod
    def from_json_file(cls, path: str | Path, n_lines: int = DEFAULT_N_LINES) -> "LineSet":
        values = json.loads(Path(path).read_text())
        return cls.from_flat(values, n_lines=n_lines)


def point_segment_distance(p, a, b) -> torch.Tensor:
    """Euclidean distance from point(s) ``p`` to the closed segment [a, b].

    Accepts 2-vectors or broadcastable ``[..., 2]`` tensors.  A degenerate
    segment (a == b) reduces to point distance.  Differentiable almost
    everywhere; the distance itself is not differentiable at d = 0.
    """
    p = torch.as_tensor(p, dtype=torch.float64 if not torch.is_tensor(p) else None)
    a = torch.as_tensor(a, dtype=p.dtype)
    b = torch.as_tensor(b, dtype=p.dtype)
    return segment_sq_distance(p, a, b).sqrt()


def segment_sq_distance(p: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared distance from ``p`` to segment [a, b], all shaped [..., 2].

    Works on squared quantities so the grad is finite even on the segment.
    """
    ab = b - a
    ap = p - a
    sq_len = (ab * ab).sum(-1)
    t = (ap * ab).sum(-1) / sq_len.clamp_min(_EPS_SQ_LEN)
    t = t.clamp(0.0, 1.0)
    closest = a + t.unsqueeze(-1) * ab
    diff = p - closest
    return (diff * diff).sum(-1)


def pixel_centers(resolution: int, dtype=torch.float32, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-center coordinates (xs along columns, ys along rows) in [0, 1]."""
    step = 1.0 / resolution
    centers = (torch.arange(resolution, dtype=dtype, device=device) + 0.5) * step
    return centers, centers


def rasterize(lines, cfg: RasterConfig) -> torch.Tensor:
    """Render segments to a ``[res, res]`` grayscale image in [0, 1].

    ``lines`` is a LineSet, an ``[n, 4]`` tensor, or a batched ``[B, n, 4]``
    tensor of (x0, y0, x1, y1) rows; batched input yields ``[B, res, res]``.
    Each pixel takes 1 - max_i exp(-d_i^2 / sigma^2) where d_i is the distance
    from the pixel center to segment i, so compositing is order-invariant and
    more ink only ever darkens.  n = 0 renders a blank (all-ones) canvas.
    """
    if isinstance(lines, LineSet):
        lines = lines.tensor
    lines = torch.as_tensor(lines)
    if lines.ndim == 2:
        return _rasterize_batch(lines.unsqueeze(0), cfg).squeeze(0)
    if lines.ndim == 3:
        return _rasterize_batch(lines, cfg)
    raise ValueError(f"expected [n, 4] or [B, n, 4] segments, got {tuple(lines.shape)}")


def _ink_maps(lines: torch.Tensor, cfg: RasterConfig) -> torch.Tensor:
    batch, n_seg = lines.shape[0], lines.shape[1]
    res = cfg.resolution
    sigma2 = cfg.effective_sigma2

    xs, ys = pixel_centers(res, dtype=lines.dtype, device=lines.device)
    px = xs.view(1, 1, 1, res)
    py = ys.view(1, 1, res, 1)

    ax = lines[:, :, 0].view(batch, n_seg, 1, 1)
    ay = lines[:, :, 1].view(batch, n_seg, 1, 1)
    bx = lines[:, :, 2].view(batch, n_seg, 1, 1)
    by = lines[:, :, 3].view(batch, n_seg, 1, 1)

    abx, aby = bx - ax, by - ay
    sq_len = abx * abx + aby * aby
    t = ((px - ax) * abx + (py - ay) * aby) / sq_len.clamp_min(_EPS_SQ_LEN)
    t = t.clamp(0.0, 1.0)
    dx = px - (ax + t * abx)
    dy = py - (ay + t * aby)
    return torch.exp(-(dx * dx + dy * dy) / sigma2)


def _rasterize_batch(lines: torch.Tensor, cfg: RasterConfig) -> torch.Tensor:
    if lines.shape[-1] != 4:
        raise ValueError(f"segments must have 4 coordinates, got {lines.shape[-1]}")
    dtype = lines.dtype if lines.is_floating_point() else torch.float32
    lines = lines.to(dtype)
    if lines.shape[1] == 0:
        res = cfg.resolution
        return torch.ones(lines.shape[0], res, res, dtype=dtype, device=lines.device)
    return 1.0 - _ink_maps(lines, cfg).max(dim=1).values


def ink_per_segment(lines: torch.Tensor, cfg: RasterConfig) -> torch.Tensor:
    """Per-segment ink maps ``[n, res, res]`` before max-compositing.

    Exposed for tie-margin analysis in gradient checks.
    """
    lines = torch.as_tensor(lines)
    if not lines.is_floating_point():
        lines = lines.to(torch.float32)
    return _ink_maps(lines.unsqueeze(0), cfg)[0]


def save_png(image: torch.Tensor, path: str | Path) -> None:
    """Write a [0,1] grayscale image tensor as an 8-bit PNG."""
    from PIL import Image

    arr = (image.detach().clamp(0, 1) * 255).round().to(torch.uint8).cpu().numpy()
    Image.fromarray(arr, mode="L").save(path)
