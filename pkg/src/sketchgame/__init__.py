"""Two neural agents that communicate by drawing 20-line sketches.

A sender turns a photo into line strokes, a differentiable rasterizer turns
the strokes into a grayscale sketch, and a receiver picks the photo the
sketch describes out of a distractor pool.  Perceptual losses make the
sketches legible; a CLIP prompt probe and a human-evaluation service measure
what they convey.
"""

from sketchgame.rasterizer import LineSet, RasterConfig, point_segment_distance, rasterize

__all__ = [
    "LineSet",
    "RasterConfig",
    "point_segment_distance",
    "rasterize",
]

__version__ = "0.1.0"
