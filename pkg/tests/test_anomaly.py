import numpy as np
import pytest

from cpsrecover.anomaly import (AdsConfig, AnomalySchedule, AnomalyWindow,
                                ads_evaluate, anomaly_detected, inject_anomaly)


def outer_schedule():
    return AnomalySchedule((
        AnomalyWindow(3.25, 5.0, [5.0, 5.0, 0.0], [1, 1, 0]),
        AnomalyWindow(8.25, 10.0, [-5.0, -5.0, 0.0], [1, 1, 0]),
    ))


def inner_schedule():
    return AnomalySchedule((
        AnomalyWindow(3.25, 5.0, [20000.0], [1]),
        AnomalyWindow(8.25, 10.0, [-20000.0], [1]),
    ))


def test_injection_inside_window():
    y = np.array([1.0, 2.0, 3.0])
    out = inject_anomaly(y, outer_schedule(), 4.0)
    np.testing.assert_array_equal(out, [6.0, 7.0, 3.0])


def test_injection_boundaries_half_open():
    y = np.array([1.0, 2.0, 3.0])
    assert inject_anomaly(y, outer_schedule(), 5.0) is y  # end excluded
    np.testing.assert_array_equal(inject_anomaly(y, outer_schedule(), 3.25),
                                  [6.0, 7.0, 3.0])       # start included


def test_injection_inner_negative_burst():
    out = inject_anomaly(np.array([40.0]), inner_schedule(), 9.0)
    np.testing.assert_array_equal(out, [-19960.0])


def test_identity_outside_windows_bit_exact():
    y = np.array([0.1, -0.2, 0.3])
    for t in (0.0, 3.24, 5.0, 8.24, 10.0):
        assert inject_anomaly(y, outer_schedule(), t) is y


def test_oracle_flags_delay():
    cfg = AdsConfig(kind="specific", mode="oracle", detection_time=0.25)
    out = ads_evaluate(cfg, [], outer_schedule(), 3.6, n_y=3)
    np.testing.assert_array_equal(out.flags, [1, 1, 0])
    out = ads_evaluate(cfg, [], outer_schedule(), 3.3, n_y=3)
    np.testing.assert_array_equal(out.flags, [0, 0, 0])


def test_oracle_flag_latch_interval():
    cfg = AdsConfig(kind="specific", mode="oracle", detection_time=0.25)
    sched = outer_schedule()
    grid = np.round(np.arange(0, 10, 0.1), 10)
    for t in grid:
        flags = ads_evaluate(cfg, [], sched, float(t), n_y=3).flags
        expect = 1 if (3.5 <= t < 5.0 or 8.5 <= t < 10.0) else 0
        assert flags[0] == expect and flags[1] == expect and flags[2] == 0


def test_oracle_no_false_positives_and_gamma_subset():
    cfg = AdsConfig(kind="specific", mode="oracle", detection_time=0.25)
    sched = outer_schedule()
    windows = sched.windows
    for t in np.round(np.arange(0, 10, 0.05), 10):
        flags = np.asarray(ads_evaluate(cfg, [], sched, float(t), n_y=3).flags)
        inside = any(w.t_start + 0.25 <= t < w.t_end for w in windows)
        if not inside:
            assert not flags.any()
        if flags.any():
            w = next(w for w in windows
                     if w.t_start + 0.25 <= t < w.t_end)
            assert np.all(flags <= w.gamma)


def test_short_window_never_flags():
    # a window shorter than the detection time ends before detection fires
    sched = AnomalySchedule((AnomalyWindow(3.25, 3.45, [5.0], [1]),))
    cfg = AdsConfig(kind="specific", mode="oracle", detection_time=0.25)
    for t in np.round(np.arange(0, 5, 0.01), 10):
        assert not np.any(ads_evaluate(cfg, [], sched, float(t), n_y=1).flags)


def test_generic_collapses_to_boolean():
    cfg = AdsConfig(kind="generic", mode="oracle", detection_time=0.25)
    out = ads_evaluate(cfg, [], outer_schedule(), 4.0, n_y=3)
    assert out.kind == "generic" and out.flags is True
    assert anomaly_detected(out)


def test_anomaly_detected_union():
    from cpsrecover.anomaly import AdsOutput
    assert not anomaly_detected(AdsOutput("specific", np.array([0, 0, 0]), 0.0))
    assert anomaly_detected(AdsOutput("specific", np.array([1, 1, 0]), 0.0))
    assert anomaly_detected(AdsOutput("generic", True, 0.0))
    assert not anomaly_detected(AdsOutput("generic", False, 0.0))


def test_residual_threshold_mode():
    cfg = AdsConfig(kind="specific", mode="residual-threshold",
                    detection_time=0.0, threshold=1.0)
    sched = AnomalySchedule(())
    quiet = [np.array([0.1, 0.2])] * 3
    loud = [np.array([5.0, 0.2])] * 3
    np.testing.assert_array_equal(
        ads_evaluate(cfg, quiet, sched, 0.0).flags, [0, 0])
    np.testing.assert_array_equal(
        ads_evaluate(cfg, loud, sched, 0.0).flags, [1, 0])


def test_window_validation():
    with pytest.raises(ValueError):
        AnomalyWindow(2.0, 1.0, [1.0], [1])
    with pytest.raises(ValueError):
        AnomalyWindow(1.0, 2.0, [1.0], [2])  # gamma must be 0/1
    with pytest.raises(ValueError):
        AnomalySchedule((AnomalyWindow(0.0, 2.0, [1.0], [1]),
                         AnomalyWindow(1.0, 3.0, [1.0], [1])))
