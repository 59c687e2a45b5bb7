import struct

import pytest

from neoplan import (CandidateSpace, ConvSchedule, ConvWorkload,
                     MeasuredScheme, ScheduleDb, generate_candidates,
                     local_search, measure)
from neoplan.errors import CorruptDb, ScheduleInvalid
from neoplan.tuning import factors_desc

WL = ConvWorkload(8, 8, 10, 10, 3, 3, 1, 1)


def test_factors_desc():
    assert factors_desc(12) == [12, 6, 4, 3, 2, 1]
    assert factors_desc(1) == [1]
    assert factors_desc(7) == [7, 1]


class TestCandidates:
    def test_space_contents(self):
        space = generate_candidates(WL)
        assert space.ic_bn_list == (8, 4, 2, 1)
        assert space.oc_bn_list == (8, 4, 2, 1)
        assert space.reg_n_list == (8, 4, 2)  # 32, 16 exceed out_w=10
        assert space.unroll_list == (True, False)
        assert space.size() == 4 * 4 * 3 * 2
        assert len(list(space)) == space.size()

    def test_narrow_output_falls_back(self):
        wl = ConvWorkload(4, 4, 3, 3, 3, 3, 1, 0)  # out_w = 1
        assert generate_candidates(wl).reg_n_list == (1,)

    def test_all_candidates_valid(self):
        for sch in generate_candidates(WL):
            sch.check(WL)


class TestMeasure:
    def test_returns_scheme(self):
        m = measure(WL, ConvSchedule(4, 4, 4, True), repeats=3, warmups=1)
        assert m.mean_ns > 0 and m.repeats == 3 and m.stderr_ns >= 0

    def test_invalid_schedule(self):
        with pytest.raises(ScheduleInvalid):
            measure(WL, ConvSchedule(3, 4, 4), repeats=1)


class TestScheduleDb:
    def schemes(self):
        return [MeasuredScheme(ConvSchedule(4, 4, 4, True), 2000.0, 10.0, 3),
                MeasuredScheme(ConvSchedule(8, 8, 8, False), 1000.0, 5.0, 3)]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "db.npsd"
        db = ScheduleDb(path)
        db.put("cpu-a", WL, self.schemes())
        again = ScheduleDb(path)
        got = again.get("cpu-a", WL)
        assert [m.schedule for m in got] == [ConvSchedule(8, 8, 8, False),
                                            ConvSchedule(4, 4, 4, True)]
        assert got[0].mean_ns == 1000.0  # sorted ascending by mean

    def test_workloads_listing(self, tmp_path):
        db = ScheduleDb(tmp_path / "db.npsd")
        db.put("cpu-a", WL, self.schemes())
        assert db.workloads("cpu-a") == [WL]
        assert db.workloads("cpu-b") == []

    def test_missing_file_is_empty(self, tmp_path):
        db = ScheduleDb(tmp_path / "nope.npsd")
        assert len(db) == 0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "db.npsd"
        p.write_bytes(b"XXXX" + struct.pack("<I", 1))
        with pytest.raises(CorruptDb):
            ScheduleDb(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "db.npsd"
        p.write_bytes(b"NPSD" + struct.pack("<I", 99))
        with pytest.raises(CorruptDb):
            ScheduleDb(p)

    def test_truncated_record(self, tmp_path):
        p = tmp_path / "db.npsd"
        db = ScheduleDb(p)
        db.put("cpu-a", WL, self.schemes())
        raw = p.read_bytes()
        p.write_bytes(raw[:-6])
        with pytest.raises(CorruptDb):
            ScheduleDb(p)

    def test_corrupted_payload(self, tmp_path):
        p = tmp_path / "db.npsd"
        db = ScheduleDb(p)
        db.put("cpu-a", WL, self.schemes())
        raw = bytearray(p.read_bytes())
        raw[20] ^= 0xFF  # flip a byte inside the first record
        p.write_bytes(bytes(raw))
        with pytest.raises(CorruptDb):
            ScheduleDb(p)

    def test_in_memory_db(self):
        db = ScheduleDb()
        db.put("cpu-a", WL, self.schemes())
        assert len(db) == 1


class TestLocalSearch:
    def test_sorted_results(self, tmp_path):
        res = local_search(WL, budget=6, repeats=1, warmups=1)
        assert len(res) >= 1
        means = [m.mean_ns for m in res]
        assert means == sorted(means)

    def test_db_cache_hit(self, tmp_path, monkeypatch):
        db = ScheduleDb(tmp_path / "db.npsd")
        first = local_search(WL, budget=4, repeats=1, warmups=1, db=db,
                             cpu="test-cpu")
        calls = []
        monkeypatch.setattr("neoplan.tuning.measure",
                            lambda *a, **k: calls.append(1))
        second = local_search(WL, budget=4, repeats=1, warmups=1, db=db,
                              cpu="test-cpu")
        assert calls == []  # served from the db, nothing re-measured
        assert [m.schedule for m in second] == [m.schedule for m in first]

    def test_budget_respected(self):
        space = generate_candidates(WL)
        res = local_search(WL, budget=16, repeats=1, warmups=1)
        assert len(res) <= 16 < space.size()
