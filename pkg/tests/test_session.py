"""Session file format: byte-identical round trips, replay verification,
summaries, and the expert clip store."""

import json

import pytest

from vcoach.session import (
    FORMAT_VERSION,
    EventRecord,
    SessionFormatError,
    SessionRecord,
    TickRecord,
    clip_path,
    expert_clip,
    extract_clip,
    load_session,
    parse_session,
    read_summary,
    replay,
    save_session,
    store_clip,
    validate_clip,
    verify_replay,
)


class TestRoundTrip:
    def test_parse_serialize_is_byte_identical(self, novice_records):
        text = novice_records[0].dumps()
        assert parse_session(text.splitlines()).dumps() == text

    def test_save_load_round_trip(self, tmp_path, expert_records):
        record = expert_records[0]
        path = str(tmp_path / "session.vcs")
        save_session(record, path)
        with open(path, "r", encoding="utf-8") as f:
            assert f.read() == record.dumps()
        loaded = load_session(path)
        assert loaded.dumps() == record.dumps()
        assert loaded.footer == record.footer

    def test_header_identity_preserved(self, expert_records):
        record = expert_records[2]
        loaded = parse_session(record.dumps().splitlines())
        assert loaded.participant == record.participant
        assert loaded.mode == record.mode
        assert loaded.handedness == record.handedness
        assert loaded.seed == record.seed
        assert loaded.config == record.config

    def test_event_interleaving_preserved(self, novice_records):
        record = novice_records[1]
        loaded = parse_session(record.dumps().splitlines())
        assert loaded.order == record.order
        assert loaded.events == record.events


class TestAppendRules:
    def tick(self, record, t):
        base = record.ticks[0]
        record.append_tick(base._replace(tick=t))

    def test_ticks_must_advance(self, expert_records):
        record = parse_session(expert_records[0].dumps().splitlines())
        with pytest.raises(SessionFormatError):
            self.tick(record, record.last_tick())

    def test_events_cannot_precede_last_tick(self, expert_records):
        record = parse_session(expert_records[0].dumps().splitlines())
        with pytest.raises(SessionFormatError):
            record.append_event(EventRecord(0, "NeedleFree", {}))

    def test_save_requires_footer(self, tmp_path, expert_records):
        record = parse_session(expert_records[0].dumps().splitlines())
        record.footer = None
        with pytest.raises(SessionFormatError):
            save_session(record, str(tmp_path / "x.vcs"))


class TestParseErrors:
    def lines(self, record):
        return record.dumps().splitlines()

    def test_empty_file(self):
        with pytest.raises(SessionFormatError):
            parse_session([])

    def test_malformed_header(self):
        with pytest.raises(SessionFormatError, match="header"):
            parse_session(["not json"])

    def test_version_mismatch(self, expert_records):
        lines = self.lines(expert_records[0])
        header = json.loads(lines[0])
        header["version"] = FORMAT_VERSION + 1
        with pytest.raises(SessionFormatError, match="version"):
            parse_session([json.dumps(header)] + lines[1:])

    def test_missing_footer(self, expert_records):
        lines = self.lines(expert_records[0])
        with pytest.raises(SessionFormatError, match="footer"):
            parse_session(lines[:-1])

    def test_content_after_footer(self, expert_records):
        lines = self.lines(expert_records[0])
        with pytest.raises(SessionFormatError, match="after footer"):
            parse_session(lines + [lines[1]])

    def test_malformed_record_line(self, expert_records):
        lines = self.lines(expert_records[0])
        lines[1] = "{broken"
        with pytest.raises(SessionFormatError, match="line 2"):
            parse_session(lines)

    def test_unrecognized_record_shape(self, expert_records):
        lines = self.lines(expert_records[0])
        lines[1] = json.dumps({"mystery": 1})
        with pytest.raises(SessionFormatError, match="unrecognized"):
            parse_session(lines)


class TestReadSummary:
    def test_matches_full_parse(self, tmp_path, expert_records):
        record = expert_records[0]
        path = str(tmp_path / "s.vcs")
        save_session(record, path)
        header, footer = read_summary(path)
        assert header == record.header_dict()
        assert footer == record.footer

    def test_rejects_truncation(self, tmp_path, expert_records):
        record = expert_records[0]
        path = str(tmp_path / "t.vcs")
        save_session(record, path)
        text = record.dumps().splitlines()
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(text[:-1]) + "\n")
        with pytest.raises(SessionFormatError, match="footer"):
            read_summary(path)


class TestReplay:
    def test_verify_replay_returns_footer(self, expert_records):
        record = expert_records[0]
        assert verify_replay(record) == record.footer

    def test_replay_reproduces_everything(self, novice_records):
        record = novice_records[0]
        again = replay(record)
        assert again.dumps() == record.dumps()

    def test_tampered_footer_detected(self, expert_records):
        record = parse_session(expert_records[0].dumps().splitlines())
        record.footer = dict(record.footer)
        record.footer["Path Length (mm)"] += 1.0
        with pytest.raises(SessionFormatError, match="differs"):
            verify_replay(record)


class TestClips:
    def test_extract_clip_boundaries(self, expert_records):
        record = expert_records[0]
        previous_end = 0
        for k in range(record.config.n_pairs):
            clip = extract_clip(record, k)
            assert clip.footer == {"clip_segment": k}
            assert clip.ticks[0].tick > previous_end
            complete = [e for e in clip.events if e.kind == "SegmentComplete"]
            assert [e.payload["segment"] for e in complete] == [k]
            previous_end = clip.ticks[-1].tick
            validate_clip(clip, k)

    def test_extract_rejects_unknown_or_missing_segment(self, expert_records):
        record = expert_records[0]
        with pytest.raises(SessionFormatError, match="no segment"):
            extract_clip(record, record.config.n_pairs)
        empty = SessionRecord(
            config=record.config, mode="none", participant="e", handedness="R", seed=1
        )
        with pytest.raises(SessionFormatError, match="does not complete"):
            extract_clip(empty, 0)

    def test_store_and_reload(self, tmp_path, expert_records):
        clip = extract_clip(expert_records[0], 3)
        path = store_clip(clip, 3, str(tmp_path))
        assert path == clip_path(str(tmp_path), 3)
        loaded = expert_clip(str(tmp_path), 3)
        assert loaded.segment_index == 3
        assert len(loaded.trajectory) == len(clip.ticks)

    def test_validate_rejects_deviations(self, expert_records):
        clip = extract_clip(expert_records[0], 0)
        clip.append_event(
            EventRecord(
                clip.last_tick() + 1, "Pierce", {"target": None, "point": None, "location": [0.0, 0.0, 0.0]}
            )
        )
        with pytest.raises(SessionFormatError, match="deviations"):
            validate_clip(clip, 0)

    def test_validate_rejects_wrong_segment(self, expert_records):
        clip = extract_clip(expert_records[0], 0)
        with pytest.raises(SessionFormatError, match="does not complete"):
            validate_clip(clip, 1)

    def test_missing_clip_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            expert_clip(str(tmp_path), 2)
