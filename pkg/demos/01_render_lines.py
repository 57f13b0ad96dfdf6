"""Render hand-built line sets at several resolutions and stroke widths.

Outputs land in demos/out/.  The canvas coordinate frame is [0,1]^2 with
(0,0) at the top-left; a segment is (x0, y0, x1, y1).
"""

from pathlib import Path

import torch

from sketchgame.rasterizer import LineSet, RasterConfig, rasterize, save_png

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# a little house: roof, walls, floor, door
house = [
    (0.2, 0.5, 0.5, 0.2),
    (0.5, 0.2, 0.8, 0.5),
    (0.2, 0.5, 0.8, 0.5),
    (0.25, 0.5, 0.25, 0.85),
    (0.75, 0.5, 0.75, 0.85),
    (0.25, 0.85, 0.75, 0.85),
    (0.45, 0.85, 0.45, 0.65),
    (0.55, 0.85, 0.55, 0.65),
    (0.45, 0.65, 0.55, 0.65),
]
coords = torch.tensor(house)

for res in (64, 128, 256):
    img = rasterize(coords, RasterConfig(resolution=res))
    save_png(img, OUT / f"house_{res}.png")
    print(f"house_{res}.png: {res}x{res}, default ~2px strokes")

# widen the strokes by scaling sigma^2
for scale, name in ((4.0, "wide"), (25.0, "marker")):
    cfg = RasterConfig(resolution=256)
    cfg_wide = RasterConfig(resolution=256, sigma2=cfg.effective_sigma2 * scale)
    save_png(rasterize(coords, cfg_wide), OUT / f"house_{name}.png")
    print(f"house_{name}.png: sigma2 x{scale}")

# a full 20-line random sketch, the shape of the communication channel
gen = torch.Generator().manual_seed(7)
random_lines = LineSet(torch.rand(20, 4, generator=gen))
save_png(rasterize(random_lines, RasterConfig(resolution=256)), OUT / "random_20.png")
print("random_20.png: what an untrained sender's output space looks like")
