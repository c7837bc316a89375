"""Regenerate tests/fixtures/teach_stream.jsonl.gz.

The fixture is the exact per-tick ServerState text the session socket pushes,
captured from a scripted clean teach-mode pass (one target pair, 25 Hz) held
long enough for the playback window to expire.  The UI tests treat it as an
opaque recorded stream; regenerating requires the backend package on the
Python path (run from the repository root after `pip install -e .`).

Usage: python3 frontend/scripts/make_fixture.py
"""

import gzip
import os
import random
from dataclasses import replace

from vcoach.engine import Engine
from vcoach.service import _server_state
from vcoach.synth import _Operator, expert_profile
from vcoach.task_core import InputTick, default_task_config

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "teach_stream.jsonl.gz")
SEED = 3
TICK_RATE = 25.0
TAIL_TICKS = 270  # playback window is 250 ticks at 25 Hz; hold past expiry


def main() -> None:
    config = replace(default_task_config(), n_pairs=1, tick_rate=TICK_RATE)
    engine = Engine(config=config, mode="teach", participant="fixture", seed=SEED)
    frames: list[str] = []

    # Capture the socket payload for every engine tick the operator drives.
    original_step = engine.step

    def recording_step(inp):
        result = original_step(inp)
        frames.append(_server_state(engine, result, []))
        return result

    engine.step = recording_step  # type: ignore[method-assign]
    _Operator(engine, expert_profile(SEED), random.Random(SEED)).run_task()
    world = engine.world
    for _ in range(TAIL_TICKS):
        recording_step(
            InputTick(
                tick=world.tick + 1,
                l_pose=world.left.tip_pose,
                r_pose=world.right.tip_pose,
                l_jaw=world.left.jaw,
                r_jaw=world.right.jaw,
                l_master=world.l_master,
                r_master=world.r_master,
            )
        )
        world = engine.world

    data = ("\n".join(frames) + "\n").encode("utf-8")
    with gzip.open(OUT, "wb", compresslevel=9) as fh:
        fh.write(data)
    print(f"{len(frames)} frames, {len(data)} bytes raw -> {os.path.getsize(OUT)} gz")


if __name__ == "__main__":
    main()
