"""Walk one human-evaluation session end to end, in process.

A stub checkpoint's sender draws 30 sketches; a scripted "participant" who
peeks at the class histogram picks a same-class photo when one is visible.
Shows the session lifecycle, the append-only event log, and the summary
math.  For the real thing: `sketchgame serve` plus the browser UI in
frontend/.
"""

import tempfile
from pathlib import Path

import numpy as np

from sketchgame.agents import build_agents, save_checkpoint
from sketchgame.data import synthetic_dataset
from sketchgame.encoders import load_encoder
from sketchgame.game import GameConfig
from sketchgame.service import EvalService, SessionStore, aggregate_summaries

work = Path(tempfile.mkdtemp(prefix="sketchgame-eval-"))
(work / "ckpts").mkdir()

handle = load_encoder("toy", toy_resolution=32)
sender, receiver = build_agents(handle, seed=0)
cfg = GameConfig(encoder="toy", steps=0, k=9)
save_checkpoint(work / "ckpts" / "stub.pt", sender, receiver, handle.kind,
                cfg.raster_config(handle), cfg.to_json_dict(), cfg.config_hash(), step=0)

ds = synthetic_dataset(per_class=5, seed=0, side=32)
service = EvalService(work / "ckpts", SessionStore(work / "store"), ds, k=9, games_per_session=30)

rng = np.random.default_rng(0)
for participant in ("alice", "bob"):
    view = service.create_session("stub", participant, seed=int(rng.integers(1 << 30)))
    sid = view["session_id"]
    print(f"{participant}: session {sid[:8]}..., {view['total']} games")

    # scripted receiver: same-class guess via a server-side peek (a human
    # would look at the sketch; the toy sender's sketches carry little)
    state = service.store.load_session(sid)
    for i in range(view["total"]):
        game = service.get_game(sid, i)
        target_class = ds.labels[state.games[i].target_id]
        same_class = [
            ref for ref, pid in zip(state.games[i].photo_refs, state.games[i].display_pool_ids)
            if ds.labels[pid] == target_class
        ]
        pick = same_class[int(rng.integers(len(same_class)))] if same_class else game["photos"][0]["ref"]
        service.submit_answer(sid, i, pick)

    summary = service.summary(sid)
    print(f"  comm rate {summary.comm_rate:.3f}, class comm rate {summary.class_comm_rate:.3f}")

print("\naggregate over participants:")
agg = aggregate_summaries(service, "stub")
print(f"  comm rate {agg['comm_rate_mean']:.3f} ± {agg['comm_rate_std']:.3f}")
print(f"  class comm rate {agg['class_comm_rate_mean']:.3f} ± {agg['class_comm_rate_std']:.3f}")

log = next((work / "store" / "sessions").glob("*.jsonl"))
print(f"\nevent log sample ({log.name}):")
for line in log.read_text().splitlines()[:3]:
    print(" ", line[:110], "...")
