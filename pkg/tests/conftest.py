"""Shared fixtures: synthetic cohorts at the default task scale, plus one
scripted single-segment recording that holds still after completion so the
playback window runs to expiry inside the recording."""

import random
from dataclasses import replace

import pytest

from vcoach.engine import Engine
from vcoach.session import extract_clip, store_clip
from vcoach.synth import _Operator, expert_profile, profile_for, synth_session
from vcoach.task_core import InputTick, default_task_config

COHORT_SEEDS = tuple(range(1, 21))


@pytest.fixture(scope="session")
def default_config():
    return default_task_config()


@pytest.fixture(scope="session")
def one_pair_config(default_config):
    return replace(default_config, n_pairs=1)


@pytest.fixture(scope="session")
def expert_records(default_config):
    return [
        synth_session(
            profile_for("expert", seed),
            default_config,
            mode="none",
            participant=f"X{seed:02d}",
        )
        for seed in COHORT_SEEDS
    ]


@pytest.fixture(scope="session")
def novice_records(default_config):
    return [
        synth_session(
            profile_for("novice", seed),
            default_config,
            mode="none",
            participant=f"N{seed:02d}",
        )
        for seed in COHORT_SEEDS
    ]


def scripted_record(config, mode: str, seed: int, tail_ticks: int):
    """Expert-scripted full task, then a motionless hold of `tail_ticks`."""
    engine = Engine(config=config, mode=mode, participant=f"scripted-s{seed}", seed=seed)
    operator = _Operator(engine, expert_profile(seed), random.Random(seed))
    operator.run_task()
    world = engine.world
    for _ in range(tail_ticks):
        inp = InputTick(
            tick=world.tick + 1,
            l_pose=world.left.tip_pose,
            r_pose=world.right.tip_pose,
            l_jaw=world.left.jaw,
            r_jaw=world.right.jaw,
            l_master=world.l_master,
            r_master=world.r_master,
        )
        world = engine.step(inp).world
    return engine.finalize()


@pytest.fixture(scope="session")
def teach_single_pass(one_pair_config):
    # 10 s of playback at 50 Hz is 500 ticks; hold well past expiry.
    return scripted_record(one_pair_config, "teach", seed=3, tail_ticks=560)


@pytest.fixture(scope="session")
def clip_store(tmp_path_factory, expert_records):
    store = tmp_path_factory.mktemp("clips")
    record = expert_records[0]
    for k in range(record.config.n_pairs):
        store_clip(extract_clip(record, k), k, str(store))
    return str(store)
