"""Prompt-probe a (toy) checkpoint and print the report table.

Every game is played, then sketch, target, and guessed photo are each
assigned a nearest prompt out of "a drawing of a X." / "a photo of a X."
for the ten classes.  With the toy encoder's hash-based text stub the
percentages are meaningless — the point here is the machinery: exact
counts, deterministic reports, and the table layout.  With provisioned
CLIP weights, build the handle with load_encoder("vit_b32") instead and
the target rows land at their expected 97.3% / 99.4%.
"""

from pathlib import Path

from sketchgame.agents import build_agents
from sketchgame.data import enumerate_test_games, synthetic_dataset
from sketchgame.encoders import load_encoder
from sketchgame.game import GameConfig
from sketchgame.probe import PromptSet, probe_games, render_comparison

ds = synthetic_dataset(per_class=10, seed=0, side=32)
handle = load_encoder("toy", toy_resolution=32)
prompts = PromptSet.build(handle)
print("prompt set:", ", ".join(prompts.prompts[:3]), "...", prompts.prompts[-1])

games = enumerate_test_games(ds, k=9, seed=0)
raster = GameConfig(encoder="toy", steps=0).raster_config(handle)

reports = {}
for name, seed in (("init-a", 0), ("init-b", 99)):
    sender, receiver = build_agents(handle, seed=seed)
    reports[name] = probe_games(sender, receiver, handle, handle, prompts, ds, games, raster)

print()
print(render_comparison(reports))
print()
print("note the c(target)==gt and tp(target)=='photo' rows: identical across")
print("columns, because they never depend on the checkpoint being probed.")

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
(out / "probe_report.json").write_text(reports["init-a"].to_json())
print(f"\nwrote {out / 'probe_report.json'}")
