"""Task-progress graph: every forward, retraction, and deviation edge is
scripted, and randomized event streams stay on the declared graph."""

import random
from dataclasses import replace

import pytest

from vcoach import tpm
from vcoach.task_core import SimEvent, default_task_config
from vcoach.tpm import (
    DECLARED_EDGES,
    PHASE_COMPLETE,
    PHASE_DRIVING,
    PHASE_SETUP,
    PHASE_WITHDRAWN,
    S0,
    S1,
    S2,
    S3,
    ConsistencyError,
    NoActiveSegmentError,
    advance,
    current_context,
    initial_progress,
)

CONFIG = replace(default_task_config(), n_pairs=2)


def ev(kind: str, tick: int, **payload) -> SimEvent:
    return SimEvent(kind, tick, payload)


def pierce(tick, target, point):
    return ev("Pierce", tick, target=target, point=point, location=[0.0, 0.0, 0.0])


def tip_exit(tick, target, point):
    return ev("TipExit", tick, target=target, point=point, location=[0.0, 0.0, 0.0])


def tail_exit(tick, target, point, direction):
    return ev(
        "TailExit", tick, target=target, point=point, direction=direction, location=[0.0, 0.0, 0.0]
    )


def run(events, config=CONFIG):
    progress = initial_progress()
    out = []
    for event in events:
        progress, emitted = advance(progress, [event], config)
        out.extend(emitted)
    return progress, out


def clean_pass(segment: int, t0: int):
    return [
        pierce(t0, segment, "entry"),
        tip_exit(t0 + 1, segment, "exit"),
        tail_exit(t0 + 2, segment, "entry", "down"),
        ev("NeedleFree", t0 + 3),
    ]


def kinds(events):
    return [e.kind for e in events]


class TestForwardEdges:
    def test_initial_state(self):
        p = initial_progress()
        assert (p.segment_index, p.topo, p.phase) == (0, S0, PHASE_SETUP)
        assert p.deviations == () and p.retractions == 0

    def test_full_clean_walk(self):
        progress, events = run(clean_pass(0, 10) + clean_pass(1, 20))
        assert progress.segment_index == 2
        assert progress.topo == S0
        assert progress.phase == PHASE_COMPLETE
        assert progress.deviations == () and progress.retractions == 0
        changes = [(e.payload["from"], e.payload["to"]) for e in events if e.kind == "StateChanged"]
        assert changes == [(S0, S1), (S1, S2), (S2, S3), (S3, S0)] * 2
        assert kinds([e for e in events if e.kind == "SegmentComplete"]) == ["SegmentComplete"] * 2
        assert [e.payload["segment"] for e in events if e.kind == "SegmentComplete"] == [0, 1]
        assert kinds(events)[-1] == "TaskComplete"

    def test_phase_track(self):
        progress, _ = run([pierce(1, 0, "entry")])
        assert progress.phase == PHASE_DRIVING
        progress, events = run(clean_pass(0, 1))
        # Next segment opens back in setup.
        assert progress.phase == PHASE_SETUP and progress.segment_index == 1

    def test_segment_complete_tick_is_needle_free_tick(self):
        _, events = run(clean_pass(0, 7))
        complete = [e for e in events if e.kind == "SegmentComplete"][0]
        assert complete.tick == 10


class TestRetractions:
    def test_tip_backs_out_s1_to_s0(self):
        progress, events = run([pierce(1, 0, "entry"), tip_exit(2, 0, "entry")])
        assert progress.topo == S0
        assert progress.retractions == 1
        assert progress.phase == PHASE_WITHDRAWN
        assert kinds(events) == ["StateChanged", "StateChanged", "Retraction"]

    def test_tip_reenters_exit_s2_to_s1(self):
        progress, events = run(
            [pierce(1, 0, "entry"), tip_exit(2, 0, "exit"), pierce(3, 0, "exit")]
        )
        assert progress.topo == S1
        assert progress.retractions == 1
        assert progress.phase == PHASE_DRIVING

    def test_tail_lifts_s3_to_s2(self):
        progress, _ = run(
            [
                pierce(1, 0, "entry"),
                tip_exit(2, 0, "exit"),
                tail_exit(3, 0, "entry", "down"),
                tail_exit(4, 0, "entry", "up"),
            ]
        )
        assert progress.topo == S2
        assert progress.retractions == 1

    def test_needle_free_from_s1(self):
        progress, _ = run([pierce(1, 0, "entry"), ev("NeedleFree", 2)])
        assert progress.topo == S0
        assert progress.phase == PHASE_WITHDRAWN
        assert progress.retractions == 1
        assert progress.segment_index == 0

    def test_needle_free_from_s2_walks_stepwise(self):
        progress, events = run(
            [pierce(1, 0, "entry"), tip_exit(2, 0, "exit"), ev("NeedleFree", 3)]
        )
        assert progress.topo == S0
        assert progress.retractions == 2
        changes = [(e.payload["from"], e.payload["to"]) for e in events if e.kind == "StateChanged"]
        assert changes == [(S0, S1), (S1, S2), (S2, S1), (S1, S0)]
        for edge in changes:
            assert edge in DECLARED_EDGES

    def test_retraction_does_not_advance_segment(self):
        progress, _ = run([pierce(1, 0, "entry"), ev("NeedleFree", 2)])
        assert progress.segment_index == 0
        # The segment still completes cleanly afterwards.
        progress2, events2 = run(
            [pierce(1, 0, "entry"), ev("NeedleFree", 2)] + clean_pass(0, 3)
        )
        assert progress2.segment_index == 1
        assert [e.payload["segment"] for e in events2 if e.kind == "SegmentComplete"] == [0]


class TestDeviations:
    def dev_kinds(self, progress):
        return [d.kind for d in progress.deviations]

    def test_off_target_pierce(self):
        progress, events = run([pierce(1, None, None)])
        assert self.dev_kinds(progress) == [tpm.DEV_OFF_TARGET_PIERCE]
        assert progress.topo == S0
        assert events[0].kind == "Deviation"
        assert events[0].payload["kind"] == tpm.DEV_OFF_TARGET_PIERCE

    def test_reverse_direction(self):
        progress, _ = run([pierce(1, 0, "exit")])
        assert self.dev_kinds(progress) == [tpm.DEV_REVERSE_DIRECTION]
        assert progress.topo == S0

    def test_wrong_order_target_at_setup(self):
        progress, _ = run([pierce(1, 1, "entry")])
        assert self.dev_kinds(progress) == [tpm.DEV_WRONG_ORDER_TARGET]
        assert progress.topo == S0

    def test_wrong_target_while_driving(self):
        progress, _ = run([pierce(1, 0, "entry"), pierce(2, 1, "entry")])
        assert self.dev_kinds(progress) == [tpm.DEV_WRONG_ORDER_TARGET]
        assert progress.topo == S1

    def test_tip_grasp(self):
        progress, _ = run([ev("GraspStart", 1, theta=10.0, side="R")])
        assert self.dev_kinds(progress) == [tpm.DEV_TIP_GRASP]

    def test_out_of_range_grasp(self):
        low, _ = run([ev("GraspStart", 1, theta=50.0, side="R")])
        assert self.dev_kinds(low) == [tpm.DEV_OUT_OF_RANGE_GRASP]
        high, _ = run([ev("GraspStart", 1, theta=200.0, side="R")])
        assert self.dev_kinds(high) == [tpm.DEV_OUT_OF_RANGE_GRASP]

    def test_grasp_inside_slack_is_clean(self):
        for theta in (110.0, 135.0, 150.0, 165.0, 190.0):
            progress, events = run([ev("GraspStart", 1, theta=theta, side="R")])
            assert progress.deviations == ()
            assert events == []

    def test_regrasp_while_driving_is_clean(self):
        progress, _ = run([pierce(1, 0, "entry"), ev("GraspStart", 2, theta=5.0, side="R")])
        assert progress.deviations == ()


class TestIgnoredEvents:
    def test_empty_batch_is_identity(self):
        progress = initial_progress()
        after, events = advance(progress, [], CONFIG)
        assert after is progress and events == []

    def test_tip_exit_needs_s1(self):
        progress, events = run([tip_exit(1, 0, "exit")])
        assert progress == initial_progress()
        assert events == []

    def test_tail_exit_needs_matching_state(self):
        # Wrong target, wrong point, and wrong direction all fall through.
        base = [pierce(1, 0, "entry"), tip_exit(2, 0, "exit")]
        for tail in (
            tail_exit(3, 1, "entry", "down"),
            tail_exit(3, 0, "exit", "down"),
            tail_exit(3, 0, "entry", "up"),
        ):
            progress, _ = run(base + [tail])
            assert progress.topo == S2

    def test_events_after_completion_ignored(self):
        done, _ = run(clean_pass(0, 1) + clean_pass(1, 10))
        for extra in (
            pierce(20, 0, "entry"),
            tip_exit(21, 0, "exit"),
            tail_exit(22, 0, "entry", "down"),
            ev("NeedleFree", 23),
            ev("GraspStart", 24, theta=5.0, side="R"),
        ):
            after, events = advance(done, [extra], CONFIG)
            assert after == done
            assert events == []

    def test_off_target_pierce_still_counts_after_completion(self):
        done, _ = run(clean_pass(0, 1) + clean_pass(1, 10))
        after, events = advance(done, [pierce(30, None, None)], CONFIG)
        assert [d.kind for d in after.deviations] == [tpm.DEV_OFF_TARGET_PIERCE]
        assert kinds(events) == ["Deviation"]

    def test_unknown_target_rejected(self):
        with pytest.raises(ConsistencyError):
            run([pierce(1, 7, "entry")])


class TestContext:
    def test_context_tracks_segment(self):
        ctx = current_context(initial_progress(), CONFIG)
        assert ctx.pair.index == 0
        assert ctx.phase == PHASE_SETUP
        assert ctx.drive_direction.norm() == pytest.approx(1.0)
        # The ideal arc hangs below the surface through both targets.
        assert (ctx.ideal_arc.point_at(ctx.ideal_arc.start_deg) - ctx.pair.entry).norm() < 1e-9
        assert (ctx.ideal_arc.point_at(ctx.ideal_arc.end_deg) - ctx.pair.exit).norm() < 1e-9

    def test_context_after_completion_raises(self):
        done, _ = run(clean_pass(0, 1) + clean_pass(1, 10))
        with pytest.raises(NoActiveSegmentError):
            current_context(done, CONFIG)


def random_event(rng: random.Random, tick: int, n_pairs: int) -> SimEvent:
    kind = rng.choice(["Pierce", "TipExit", "TailExit", "NeedleFree", "GraspStart", "GraspEnd"])
    if kind == "NeedleFree":
        return ev(kind, tick)
    if kind in ("GraspStart", "GraspEnd"):
        return ev(kind, tick, theta=rng.uniform(0.0, 200.0), side=rng.choice("LR"))
    target = rng.choice([None] + list(range(n_pairs)))
    point = None if target is None else rng.choice(["entry", "exit"])
    if kind == "TailExit":
        return tail_exit(tick, target, point, rng.choice(["down", "up"]))
    return pierce(tick, target, point) if kind == "Pierce" else tip_exit(tick, target, point)


def test_fuzz_streams_stay_on_declared_graph():
    # Small randomized twin of the acceptance-grade fuzz; checks the same
    # invariants on 2000 streams.
    rng = random.Random(99)
    for _ in range(2000):
        progress = initial_progress()
        n_dev = 0
        n_retract = 0
        for tick in range(1, rng.randint(5, 40)):
            before = progress
            progress, events = advance(progress, [random_event(rng, tick, CONFIG.n_pairs)], CONFIG)
            for e in events:
                if e.kind == "StateChanged":
                    assert (e.payload["from"], e.payload["to"]) in DECLARED_EDGES
                elif e.kind == "Deviation":
                    n_dev += 1
                elif e.kind == "Retraction":
                    n_retract += 1
            assert progress.segment_index >= before.segment_index
            assert 0 <= progress.segment_index <= CONFIG.n_pairs
            assert progress.topo in (S0, S1, S2, S3)
            assert progress.phase in (PHASE_SETUP, PHASE_DRIVING, PHASE_WITHDRAWN, PHASE_COMPLETE)
        assert len(progress.deviations) == n_dev
        assert progress.retractions == n_retract
