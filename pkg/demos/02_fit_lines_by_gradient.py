"""Fit 20 line endpoints to a target image by gradient descent.

This is the property everything else rests on: pixels are differentiable in
the endpoint coordinates, so plain Adam can move strokes to darken the
right pixels.  The target here is a ring; watch the loss fall and the
strokes wrap around it.
"""

import math
from pathlib import Path

import torch

from sketchgame.rasterizer import RasterConfig, rasterize, save_png

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

RES = 96
cfg = RasterConfig(resolution=RES, sigma2=RasterConfig(resolution=RES).effective_sigma2 * 4)

# target: a ring of ink
ys, xs = torch.meshgrid(torch.linspace(0, 1, RES), torch.linspace(0, 1, RES), indexing="ij")
radius = ((xs - 0.5) ** 2 + (ys - 0.5) ** 2).sqrt()
target = 1.0 - torch.exp(-((radius - 0.33) ** 2) / 2e-3)
save_png(target, OUT / "fit_target.png")

gen = torch.Generator().manual_seed(0)
raw = torch.randn(20, 4, generator=gen) * 0.5  # pre-squash parameters
raw.requires_grad_(True)
opt = torch.optim.Adam([raw], lr=0.05)

for step in range(401):
    coords = torch.sigmoid(raw)
    img = rasterize(coords, cfg)
    loss = ((img - target) ** 2).mean()
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 100 == 0:
        save_png(img.detach(), OUT / f"fit_step{step:03d}.png")
        print(f"step {step:3d}: mse {loss.item():.5f}")

print("wrote fit_target.png and fit_step*.png — strokes find the ring")
