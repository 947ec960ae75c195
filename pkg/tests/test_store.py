import numpy as np
import pytest

from cpsrecover.store import (Checkpoint, ControlRecord, IntegrityError,
                              MonotonicityError, SecureStore)
from cpsrecover.timebase import to_us


def small_store():
    s = SecureStore()
    for t in (0.0, 1.0, 2.0, 3.0):
        s.append_checkpoint("outer", Checkpoint(t, [t, -t], [0, 0]))
    for k in range(40):
        s.append_control("outer", ControlRecord(k * 0.1, [float(k)]))
    return s


def test_first_append():
    s = SecureStore()
    s.append_checkpoint("outer", Checkpoint(0.0, [1.0], [0]))
    assert s.save_times("outer") == [0.0]
    assert len(s.checkpoints("outer")) == 1


def test_monotonicity_enforced():
    s = SecureStore()
    s.append_checkpoint("o", Checkpoint(1.0, [0.0], [0]))
    with pytest.raises(MonotonicityError):
        s.append_checkpoint("o", Checkpoint(1.0, [0.0], [0]))
    s.append_control("o", ControlRecord(1.0, [0.0]))
    with pytest.raises(MonotonicityError):
        s.append_control("o", ControlRecord(0.5, [0.0]))


def test_save_times_match_checkpoint_times():
    s = small_store()
    assert s.save_times("outer") == [c.t for c in s.checkpoints("outer")]


def test_roundtrip_preserves_payloads():
    s = small_store()
    cp = s.checkpoints("outer")[2]
    assert cp.t == 2.0
    np.testing.assert_array_equal(cp.x_hat, [2.0, -2.0])
    np.testing.assert_array_equal(cp.ads_flags, [0, 0])
    rec = s.controls("outer")[13]
    assert rec.t == 1.3 and rec.u[0] == 13.0


def test_retrieve_half_open_range():
    s = small_store()
    cps, times, ctl = s.retrieve("outer", 3.0, 3.5)
    assert times == [3.0]
    assert [round(c.t, 10) for c in ctl] == [3.0, 3.1, 3.2, 3.3, 3.4]


def test_retrieve_insertion_order():
    s = small_store()
    _, _, ctl = s.retrieve("outer", 0.0, 4.0)
    ts = [to_us(c.t) for c in ctl]
    assert ts == sorted(ts)


def test_retrieve_empty_and_invalid_range():
    s = small_store()
    cps, times, ctl = s.retrieve("outer", 3.41, 3.42)
    assert cps == [] and ctl == []
    with pytest.raises(ValueError):
        s.retrieve("outer", 2.0, 1.0)


def test_tamper_detected():
    s = small_store()
    assert s.verify_integrity()
    s._tamper("outer", which="control", index=5)
    assert not s.verify_integrity()
    with pytest.raises(IntegrityError):
        s.retrieve("outer", 0.0, 4.0)


def test_tamper_checkpoint_payload():
    s = small_store()
    s._tamper("outer", which="checkpoint", index=0)
    assert not s.verify_integrity()


def test_truncation_not_detected_by_chain():
    # suffix removal keeps a valid chain prefix; documented semantics
    s = small_store()
    chain = s._controls["outer"]
    chain.payloads.pop()
    chain.tags.pop()
    assert s.verify_integrity()


def test_persistence_roundtrip(tmp_path):
    s = small_store()
    path = tmp_path / "store.bin"
    s.save(path)
    loaded = SecureStore.load(path)
    assert loaded.verify_integrity()
    assert loaded.save_times("outer") == s.save_times("outer")
    np.testing.assert_array_equal(loaded.controls("outer")[7].u,
                                  s.controls("outer")[7].u)


def test_prune_controls():
    s = small_store()
    s.prune_controls("outer", 2.0)
    ctl = s.controls("outer")
    assert min(c.t for c in ctl) >= 2.0
    assert s.verify_integrity()


def test_case_study_store_invariants(case_result):
    store = case_result.store
    cfg = case_result.config
    # the detected-anomaly intervals of the default schedule
    detected = [(3.5, 5.0), (8.5, 10.0)]
    for sid in ("outer", "inner-1", "inner-2"):
        times = store.save_times(sid)
        assert times == [c.t for c in store.checkpoints(sid)]
        assert times == [0.0, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0, 8.0]
        for t in times:
            assert not any(a <= t < b for a, b in detected)
        # control log has a record at every tick with no gaps
        ctl = store.controls(sid)
        dt_us = 100_000 if sid == "outer" else 10_000
        ts = [to_us(c.t) for c in ctl]
        assert ts == list(range(0, to_us(cfg["horizon"]), dt_us))


def test_tick_counts(case_result):
    store = case_result.store
    assert len(store.controls("outer")) == 100
    assert len(store.controls("inner-1")) == 1000
    assert len(store.controls("inner-2")) == 1000
