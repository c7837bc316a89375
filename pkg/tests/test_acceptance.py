"""Acceptance gates, one test per go/no-go criterion.

Each test pins the stated tolerance and, where a budget applies, the wall
clock.  Run with -v for one pass/fail line per criterion.
"""

import json
import math
import os
import random
import time
from dataclasses import replace
from itertools import combinations

import pytest

from vcoach import tpm
from vcoach.analytics import (
    AnalyticsError,
    METHOD_APPROX,
    METHOD_EXACT,
    cohens_d,
    impute,
    mann_whitney_u,
)
from vcoach.cli import main as cli_main
from vcoach.cues import (
    CUE_GRASP_ORIENTATION,
    CUE_GRASP_POSITION,
    CUE_IDEAL_DRIVE_PATH,
    CUE_IDEAL_INSTRUMENT,
    CUE_TRAJECTORY_PLAYBACK,
    CUE_VIDEO_DEMO,
    PLAYBACK_SECONDS,
)
from vcoach.geometry import Vec3, arc_deviation, chord_arc
from vcoach.metrics import MotionSample, master_workspace_volume, path_length
from vcoach.session import parse_session, replay, verify_replay
from vcoach.synth import profile_for, synth_session
from vcoach.task_core import SimEvent, default_task_config


def test_geometry_oracle_suite():
    """chord_arc hits both targets and the chord-height identity to 1e-9 mm,
    and on-arc points decompose to zero deviation, over 1000 random triples,
    in under 5 seconds."""
    rng = random.Random(2024)
    start = time.perf_counter()
    for _ in range(1000):
        radius = rng.uniform(3.0, 12.0)
        entry = Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-5, 5))
        while True:
            direction = Vec3(rng.gauss(0, 1), rng.gauss(0, 1), rng.gauss(0, 1))
            if direction.norm() > 1e-6:
                direction = direction.normalized()
                break
        chord = rng.uniform(0.2, 1.95) * radius
        exit_p = entry + direction.scale(chord)
        while True:
            normal = Vec3(rng.gauss(0, 1), rng.gauss(0, 1), rng.gauss(0, 1))
            if normal.norm() > 1e-6:
                normal = normal.normalized()
                if normal.cross(direction).norm() > 1e-3:
                    break

        arc = chord_arc(entry, exit_p, radius, normal)
        assert (arc.point_at(arc.start_deg) - entry).norm() <= 1e-9
        assert (arc.point_at(arc.end_deg) - exit_p).norm() <= 1e-9

        midpoint = Vec3(
            (entry.x + exit_p.x) / 2.0, (entry.y + exit_p.y) / 2.0, (entry.z + exit_p.z) / 2.0
        )
        h_expected = math.sqrt(radius * radius - (chord / 2.0) ** 2)
        assert abs((arc.center - midpoint).norm() - h_expected) <= 1e-9

        span = (arc.end_deg - arc.start_deg) * arc.drive_direction
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            point = arc.point_at(arc.start_deg + arc.drive_direction * span * frac)
            dev = arc_deviation(point, arc)
            assert abs(dev.in_plane_mm) <= 1e-9
            assert abs(dev.out_plane_mm) <= 1e-9
    assert time.perf_counter() - start < 5.0


def _sim(kind, tick, **payload):
    return SimEvent(kind, tick, payload)


def _pierce(tick, target, point):
    return _sim("Pierce", tick, target=target, point=point, location=[0.0, 0.0, 0.0])


def _tip_exit(tick, target, point):
    return _sim("TipExit", tick, target=target, point=point, location=[0.0, 0.0, 0.0])


def _tail_exit(tick, target, point, direction):
    return _sim(
        "TailExit", tick, target=target, point=point, direction=direction,
        location=[0.0, 0.0, 0.0],
    )


def _walk(events, config):
    progress = tpm.initial_progress()
    out = []
    for event in events:
        progress, emitted = tpm.advance(progress, [event], config)
        out.extend(emitted)
    return progress, out


def _random_event(rng, tick, n_pairs):
    kind = rng.choice(["Pierce", "TipExit", "TailExit", "NeedleFree", "GraspStart", "GraspEnd"])
    if kind == "NeedleFree":
        return _sim(kind, tick)
    if kind in ("GraspStart", "GraspEnd"):
        return _sim(kind, tick, theta=rng.uniform(0.0, 200.0), side=rng.choice("LR"))
    target = rng.choice([None] + list(range(n_pairs)))
    point = None if target is None else rng.choice(["entry", "exit"])
    if kind == "TailExit":
        return _tail_exit(tick, target, point, rng.choice(["down", "up"]))
    return _pierce(tick, target, point) if kind == "Pierce" else _tip_exit(tick, target, point)


def test_state_machine_suite():
    """Scripted sequences exercise every forward, retraction, and deviation
    edge; 100k random event streams never step off the declared topology
    graph; all inside 30 seconds."""
    start = time.perf_counter()
    config = replace(default_task_config(), n_pairs=2)
    edges_scripted = set()

    def edges_of(events):
        return {
            (e.payload["from"], e.payload["to"]) for e in events if e.kind == "StateChanged"
        }

    # Forward edges: two clean passes walk S0->S1->S2->S3->S0 twice.
    clean = [
        _pierce(1, 0, "entry"),
        _tip_exit(2, 0, "exit"),
        _tail_exit(3, 0, "entry", "down"),
        _sim("NeedleFree", 4),
        _pierce(5, 1, "entry"),
        _tip_exit(6, 1, "exit"),
        _tail_exit(7, 1, "entry", "down"),
        _sim("NeedleFree", 8),
    ]
    progress, events = _walk(clean, config)
    assert progress.phase == tpm.PHASE_COMPLETE and progress.deviations == ()
    edges_scripted |= edges_of(events)

    # Retraction edges, one script per backward transition.
    for script, expect_retractions in (
        ([_pierce(1, 0, "entry"), _tip_exit(2, 0, "entry")], 1),  # S1 -> S0
        ([_pierce(1, 0, "entry"), _tip_exit(2, 0, "exit"), _pierce(3, 0, "exit")], 1),  # S2 -> S1
        (
            [
                _pierce(1, 0, "entry"),
                _tip_exit(2, 0, "exit"),
                _tail_exit(3, 0, "entry", "down"),
                _tail_exit(4, 0, "entry", "up"),
            ],
            1,
        ),  # S3 -> S2
        ([_pierce(1, 0, "entry"), _tip_exit(2, 0, "exit"), _sim("NeedleFree", 3)], 2),  # stepwise
    ):
        progress, events = _walk(script, config)
        assert progress.retractions == expect_retractions
        edges_scripted |= edges_of(events)
    assert edges_scripted == tpm.DECLARED_EDGES

    # Deviation edges: each declared deviation kind from its trigger.
    for script, kind in (
        ([_pierce(1, None, None)], tpm.DEV_OFF_TARGET_PIERCE),
        ([_pierce(1, 0, "exit")], tpm.DEV_REVERSE_DIRECTION),
        ([_pierce(1, 1, "entry")], tpm.DEV_WRONG_ORDER_TARGET),
        ([_sim("GraspStart", 1, theta=10.0, side="R")], tpm.DEV_TIP_GRASP),
        ([_sim("GraspStart", 1, theta=50.0, side="R")], tpm.DEV_OUT_OF_RANGE_GRASP),
    ):
        progress, events = _walk(script, config)
        assert [d.kind for d in progress.deviations] == [kind]
        assert any(e.kind == "Deviation" and e.payload["kind"] == kind for e in events)

    # Fuzz: 100k random streams stay on the declared graph with consistent
    # counters and domains throughout.
    edges_fuzzed = set()
    states = (tpm.S0, tpm.S1, tpm.S2, tpm.S3)
    phases = (tpm.PHASE_SETUP, tpm.PHASE_DRIVING, tpm.PHASE_WITHDRAWN, tpm.PHASE_COMPLETE)
    for i in range(100_000):
        rng = random.Random(i)
        progress = tpm.initial_progress()
        tick = 0
        for _ in range(rng.randint(3, 12)):
            tick += rng.randint(1, 3)
            before = progress
            progress, events = tpm.advance(
                progress, [_random_event(rng, tick, config.n_pairs)], config
            )
            for e in events:
                if e.kind == "StateChanged":
                    edge = (e.payload["from"], e.payload["to"])
                    assert edge in tpm.DECLARED_EDGES
                    edges_fuzzed.add(edge)
            assert before.segment_index <= progress.segment_index <= config.n_pairs
            assert progress.topo in states
            assert progress.phase in phases
    assert edges_fuzzed == tpm.DECLARED_EDGES
    assert time.perf_counter() - start < 30.0


def test_cue_lifecycle_fixture(teach_single_pass):
    """A scripted clean teach-mode pass shows exactly: four setup cues before
    the pierce, three of them hidden at the pierce, the drive path hidden at
    needle-free, the trajectory playback for exactly 10 s of ticks, and the
    video demo on every tick.  Exact-match per tick."""
    record = teach_single_pass
    assert not any(e.kind in ("Deviation", "Retraction") for e in record.events)

    pierce_tick = next(e.tick for e in record.events if e.kind == "Pierce")
    free_tick = next(e.tick for e in record.events if e.kind == "NeedleFree")
    complete_tick = next(e.tick for e in record.events if e.kind == "SegmentComplete")
    assert free_tick == complete_tick
    window = round(PLAYBACK_SECONDS * record.config.tick_rate)

    setup = {
        CUE_IDEAL_INSTRUMENT,
        CUE_GRASP_POSITION,
        CUE_GRASP_ORIENTATION,
        CUE_IDEAL_DRIVE_PATH,
        CUE_VIDEO_DEMO,
    }
    driving = {CUE_IDEAL_DRIVE_PATH, CUE_VIDEO_DEMO}
    playback = {CUE_TRAJECTORY_PLAYBACK, CUE_VIDEO_DEMO}

    assert len(setup - {CUE_VIDEO_DEMO}) == 4
    assert len(setup - driving) == 3

    for t in record.ticks:
        visible = set(t.cues)
        assert CUE_VIDEO_DEMO in visible  # video is never hidden
        if t.tick < pierce_tick:
            assert visible == setup
        elif t.tick < free_tick:
            assert visible == driving
        elif t.tick < complete_tick + window:
            assert visible == playback
        else:
            assert visible == {CUE_VIDEO_DEMO}

    playback_ticks = [t.tick for t in record.ticks if CUE_TRAJECTORY_PLAYBACK in t.cues]
    assert len(playback_ticks) == window
    assert playback_ticks[-1] - playback_ticks[0] + 1 == window
    assert record.ticks[-1].tick >= complete_tick + window


def test_determinism_replay(one_pair_config):
    """Ten synthetic sessions across profiles and coaching modes: replaying
    the recorded inputs reproduces the entire recording bit for bit, and a
    parse of the serialized text verifies to the identical footer."""
    cases = [
        ("expert", "none", 1),
        ("expert", "teach", 2),
        ("expert", "metrics", 3),
        ("expert", "user", 4),
        ("expert", "none", 5),
        ("novice", "none", 1),
        ("novice", "teach", 2),
        ("novice", "metrics", 3),
        ("novice", "user", 4),
        ("novice", "none", 5),
    ]
    assert len(cases) == 10
    for kind, mode, seed in cases:
        record = synth_session(
            profile_for(kind, seed), one_pair_config, mode, participant=f"{kind}-{mode}-{seed}"
        )
        live_text = record.dumps()

        # Live vs replay: the full record, not just the footer.
        replayed = replay(record)
        assert replayed.footer == record.footer
        assert replayed.dumps() == live_text

        # Serialize -> parse -> verify: the footer survives the text round trip.
        reparsed = parse_session(live_text.splitlines())
        assert verify_replay(reparsed) == record.footer
        assert reparsed.dumps() == live_text


def test_metrics_oracles(expert_records, novice_records):
    """Path length of a 1-degree-sampled circle lands within 0.1% of 2*pi*r;
    a known cube's hull volume is exact; the synthetic expert cohort averages
    under 5 degrees of grasp deviation and 0.3 mm of path deviation; the
    synthetic novice shows the generator's injected biases: orientation above
    15 degrees and within 2 degrees of the injected 20, path deviations
    within 0.3 mm of the injected 0.75/1.5 mm."""
    r = 30.0
    parked = Vec3(40.0, 0.0, 25.0)

    def circle_sample(k):
        a = math.radians(k)
        p = Vec3(r * math.cos(a), r * math.sin(a), 0.0)
        return MotionSample(
            tick=k, segment=0, l_tip=p, r_tip=parked, l_shaft=p, r_shaft=parked,
            l_master=p, r_master=parked, needle_tip=p, grasped=False,
        )

    circumference = path_length([circle_sample(k) for k in range(361)])
    assert abs(circumference - 2.0 * math.pi * r) / (2.0 * math.pi * r) < 1e-3

    side = 7.0
    cube = [Vec3(x, y, z) for x in (0.0, side) for y in (0.0, side) for z in (0.0, side)]
    assert master_workspace_volume(cube) == pytest.approx(side**3, abs=1e-9)

    def mean(rows, name):
        return sum(f[name] for f in rows) / len(rows)

    experts = [rec.footer for rec in expert_records]
    assert len(experts) == 20
    assert mean(experts, "Grasp Position Dev. (degree)") < 5.0
    assert mean(experts, "Grasp Orientation Dev. (degree)") < 5.0
    assert mean(experts, "Ideal Drive Path Dev. (In) (mm)") < 0.3
    assert mean(experts, "Ideal Drive Path Dev. (Out) (mm)") < 0.3

    novices = [rec.footer for rec in novice_records]
    orientation = mean(novices, "Grasp Orientation Dev. (degree)")
    assert orientation > 15.0
    assert orientation == pytest.approx(20.0, abs=2.0)
    assert mean(novices, "Ideal Drive Path Dev. (In) (mm)") == pytest.approx(0.75, abs=0.3)
    assert mean(novices, "Ideal Drive Path Dev. (Out) (mm)") == pytest.approx(1.5, abs=0.3)


def test_statistics_oracles():
    """mann_whitney_u([1,2,3],[4,5,6]) gives exact p = 0.1; the normal
    approximation stays within 0.02 of exact enumeration on all 924 untied
    6v6 splits; cohens_d([2,4],[1,3]) = 0.70711 within 1e-5; imputation fills
    continuous gaps with the mean, count gaps with the median, and refuses
    all-missing columns."""
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u == 0.0 and p == 0.1

    ranks = list(range(1, 13))
    for combo in combinations(ranks, 6):
        a = list(combo)
        b = [v for v in ranks if v not in combo]
        _, p_exact = mann_whitney_u(a, b, method=METHOD_EXACT)
        _, p_approx = mann_whitney_u(a, b, method=METHOD_APPROX)
        assert abs(p_exact - p_approx) <= 0.02

    assert cohens_d([2.0, 4.0], [1.0, 3.0]) == pytest.approx(0.70711, abs=1e-5)

    filled = impute(
        {
            "Completion Time (s)": [1.0, None, 3.0],
            "Exc. Needle Pierces": [1.0, None, 4.0, 2.0],
        }
    )
    assert filled["Completion Time (s)"] == [1.0, 2.0, 3.0]
    assert filled["Exc. Needle Pierces"] == [1.0, 2.0, 4.0, 2.0]
    with pytest.raises(AnalyticsError):
        impute({"Completion Time (s)": [None, None]})


ORIENT_METRIC = "Grasp Orientation Dev. (degree)"
NULL_METRIC = "Exc. Needle Pierces"  # the generator injects no arm difference here
META_SEEDS = 20
REQUIRED_SUCCESSES = 18  # >= 90% of 20


def test_end_to_end_study_rehearsal(tmp_path):
    """A 16-control / 14-experimental synthetic study, generated and reported
    through the command-line entry points: 15-row comparison table, 15x4
    effect grid with positive d meaning the experimental arm improved more,
    the coached grasp-orientation improvement significant and the
    zero-injected pierce-count metric non-significant in at least 18 of 20
    meta-seeds, all inside 2 minutes."""
    start = time.perf_counter()

    config = replace(default_task_config(), n_pairs=1, tick_rate=25.0)
    config_path = tmp_path / "task.json"
    config_path.write_text(json.dumps(config.to_dict()), encoding="utf-8")

    orient_hits = 0
    null_hits = 0
    for meta in range(META_SEEDS):
        ctl_dir = str(tmp_path / f"m{meta}" / "control")
        exp_dir = str(tmp_path / f"m{meta}" / "experimental")
        assert (
            cli_main(
                [
                    "synth", "--config", str(config_path), "--n", "16",
                    "--seed", str(meta * 10000 + 1), "--arm", "control",
                    "--plan", "none", "--out", ctl_dir,
                ]
            )
            == 0
        )
        assert (
            cli_main(
                [
                    "synth", "--config", str(config_path), "--n", "14",
                    "--seed", str(meta * 10000 + 5001), "--arm", "experimental",
                    "--plan", "study", "--out", exp_dir,
                ]
            )
            == 0
        )
        assert len(os.listdir(ctl_dir)) == 16 * 5
        assert len(os.listdir(exp_dir)) == 14 * 5

        table_path = str(tmp_path / f"m{meta}" / "table.json")
        grid_path = str(tmp_path / f"m{meta}" / "grid.csv")
        assert (
            cli_main(
                [
                    "report", "--arm-a", exp_dir, "--arm-b", ctl_dir,
                    "--json", "--out", table_path, "--grid", grid_path,
                ]
            )
            == 0
        )
        body = json.loads(open(table_path, encoding="utf-8").read())
        rows = {row["metric"]: row for row in body["rows"]}
        assert len(body["rows"]) == 15
        assert len(body["grid"]) == 60

        orient = rows[ORIENT_METRIC]
        if orient["significant"] and orient["cohens_d"] is not None and orient["cohens_d"] > 0:
            orient_hits += 1
        if not rows[NULL_METRIC]["significant"]:
            null_hits += 1

        if meta == 0:
            # Table and grid presentation checks, once.
            text_path = str(tmp_path / "m0" / "table.txt")
            assert (
                cli_main(
                    ["report", "--arm-a", exp_dir, "--arm-b", ctl_dir, "--out", text_path]
                )
                == 0
            )
            lines = open(text_path, encoding="utf-8").read().strip().splitlines()
            assert lines[0].startswith("Metric")
            assert "Experimental (N=14)" in lines[0] and "Control (N=16)" in lines[0]
            assert len(lines) == 2 + 15

            grid_lines = open(grid_path, encoding="utf-8").read().strip().splitlines()
            assert grid_lines[0] == "metric,repetition,cohens_d,p_value,significant"
            assert len(grid_lines) == 1 + 60

    assert orient_hits >= REQUIRED_SUCCESSES, f"orientation effect found in {orient_hits}/20"
    assert null_hits >= REQUIRED_SUCCESSES, f"null metric quiet in {null_hits}/20"
    assert time.perf_counter() - start < 120.0
