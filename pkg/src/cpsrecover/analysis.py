"""Error-bound formulas for recovered and healthy state estimates.

All bounds work on per-element absolute values.  Conventions:

* ``k`` and ``k1`` are sub-system tick indices (integers); one tick is
  ``params.tick`` seconds.
* ``rsee_bound(params, k, k1)`` evaluates the recovered-state-estimate
  error (RSEE) bound expression with the predict chain anchored at the
  checkpoint tick ``k1``; it bounds the error of the estimate produced for
  tick ``k + 1``.  Use :func:`recovery_error_bound_at` to bound the error
  *at* a tick directly.
* matrix powers are taken of ``|A_bar|`` (element-wise absolute value
  first), which upper-bounds ``|A_bar^n|`` element-wise and keeps the
  bound monotone.

``checkpoint_time_before_anomaly`` maps an anomaly start time to the
checkpoint the recovery will roll forward from; its definition beyond the
every-tick-checkpointing regime is a documented interpretation: the
largest checkpoint-grid time strictly before the anomaly start that also
clears the detection-window exclusion used by the coordinator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BoundParams:
    """Inputs shared by all bound formulas.

    ``A_bar`` bounds the dynamics Jacobian element-wise, ``eps_delta`` the
    healthy estimator error, ``eps_omega`` the process noise and ``phi_bar``
    the accumulated Taylor remainders of the nonlinear dynamics (zero for
    LTI loops).  ``E_max`` is the maximum permissible error, ``delta_s`` the
    minimum time between anomalies, ``mu`` the checkpointing frequency and
    ``tick`` the sub-system loop period in seconds.
    """

    A_bar: np.ndarray
    eps_delta: np.ndarray
    eps_omega: np.ndarray
    phi_bar: np.ndarray = None
    E_max: np.ndarray = None
    delta_s: float = 0.0
    mu: float = 1.0
    tick: float = 1.0
    q_indices: tuple | None = None    # recovered element indices; None = all
    t_search_max: float = 1000.0      # grid-search horizon cap, seconds

    def __post_init__(self):
        self.A_bar = np.atleast_2d(np.asarray(self.A_bar, float))
        n = self.A_bar.shape[0]
        self.eps_delta = np.broadcast_to(
            np.asarray(self.eps_delta, float), (n,)).copy()
        self.eps_omega = np.broadcast_to(
            np.asarray(self.eps_omega, float), (n,)).copy()
        self.phi_bar = (np.zeros(n) if self.phi_bar is None
                        else np.broadcast_to(np.asarray(self.phi_bar, float), (n,)).copy())
        if self.E_max is not None:
            self.E_max = np.broadcast_to(np.asarray(self.E_max, float), (n,)).copy()
        for name, v in (("eps_delta", self.eps_delta),
                        ("eps_omega", self.eps_omega),
                        ("phi_bar", self.phi_bar)):
            if np.any(v < 0):
                raise ValueError(f"{name} must be element-wise nonnegative")

    def restrict(self, vec: np.ndarray) -> np.ndarray:
        if self.q_indices is None:
            return vec
        return vec[list(self.q_indices)]


def estimation_error_bound(params: BoundParams, healthy_indices) -> np.ndarray:
    """Healthy-element estimation-error bound: ``eps_delta`` projected."""
    return params.eps_delta[list(healthy_indices)]


def _abs_powers(A_abs: np.ndarray, max_pow: int) -> list:
    powers = [np.eye(A_abs.shape[0])]
    for _ in range(max_pow):
        powers.append(powers[-1] @ A_abs)
    return powers


def rsee_bound(params: BoundParams, k: int, k1: int) -> np.ndarray:
    """Recovered-error bound anchored at checkpoint tick ``k1``.

    ``|A|^(k-k1+1) eps_delta + sum_{l=k1}^{k} |A|^(k-l+1) eps_omega + phi_bar``
    restricted to the recovered indices.
    """
    k, k1 = int(round(k)), int(round(k1))
    if k < k1:
        raise ValueError("k must be >= k1")
    A_abs = np.abs(params.A_bar)
    n = k - k1 + 1
    powers = _abs_powers(A_abs, n)
    total = powers[n] @ params.eps_delta
    for p in range(1, n + 1):
        total = total + powers[p] @ params.eps_omega
    total = total + params.phi_bar
    return params.restrict(total)


def rsee_bound_lti(params: BoundParams, k: int, k1: int) -> np.ndarray:
    """LTI variant: the nonlinear remainder term is dropped."""
    saved = params.phi_bar
    try:
        params.phi_bar = np.zeros_like(saved)
        return rsee_bound(params, k, k1)
    finally:
        params.phi_bar = saved


def recovery_error_bound_at(params: BoundParams, k: int, k1: int) -> np.ndarray:
    """Bound on the recovered-estimate error at tick ``k`` (chain from ``k1``)."""
    if k <= k1:
        raise ValueError("error bound requires k > k1")
    return rsee_bound(params, k - 1, k1)


def checkpoint_time_before_anomaly(s: float, delta_s: float, mu: float,
                                   tick: float = None,
                                   detection_time: float = 0.0) -> float:
    """Checkpoint time the recovery rolls forward from, for anomaly start ``s``.

    Largest multiple of ``1/mu`` (or of ``tick`` when checkpointing every
    tick) strictly before ``s`` whose age at detection exceeds the detection
    window.  Falls back to the t=0 checkpoint.
    """
    if s <= 0:
        raise ValueError("anomaly start must be positive")
    grid = 1.0 / mu
    if tick is not None and grid < tick:
        grid = tick
    # largest grid multiple strictly below s
    n = int(np.ceil(s / grid)) - 1
    detect_at = s + detection_time
    while n > 0:
        k1 = n * grid
        if k1 < s and detect_at - k1 > detection_time:
            return k1
        n -= 1
    return 0.0


def max_tolerable_duration(params: BoundParams, s: float):
    """Largest anomaly duration whose error bound stays within ``E_max``.

    Grid search over tick-aligned durations.  Returns
    ``(T_max_seconds, warning)`` where the warning flags the degenerate case
    of ``E_max`` already violated at the smallest duration.  Use
    :func:`max_duration_certificate` for the bracketing values.
    """
    T, lo, hi, warn = _max_duration_search(params, s)
    return T, warn


def max_duration_certificate(params: BoundParams, s: float):
    """``(T_max, bound_at_T, bound_at_T_plus_tick)`` bracketing certificate."""
    T, lo, hi, _ = _max_duration_search(params, s)
    return T, lo, hi


def _max_duration_search(params: BoundParams, s: float):
    if params.E_max is None:
        raise ValueError("E_max required")
    tick = params.tick
    k1 = checkpoint_time_before_anomaly(s, params.delta_s, params.mu, tick)
    s_t = round(s / tick)
    k1_t = round(k1 / tick)
    E = params.restrict(params.E_max)

    def bound_at(T_ticks: int) -> np.ndarray:
        return recovery_error_bound_at(params, s_t + T_ticks, k1_t)

    max_ticks = int(params.t_search_max / tick)
    if np.any(bound_at(1) > E):
        return 0.0, bound_at(1), bound_at(1), True
    lo = 1
    prev = bound_at(1)
    for T in range(2, max_ticks + 1):
        b = bound_at(T)
        if np.any(b > E):
            return (T - 1) * tick, prev, b, False
        prev = b
        lo = T
    return lo * tick, prev, bound_at(lo + 1), False


def accuracy_resource_gap_bound(params: BoundParams, k: int, s: float) -> np.ndarray:
    """Bound on the gap between frequency-``mu`` and every-tick recovery.

    Difference of the error bounds at tick ``k`` anchored at the
    frequency-``mu`` checkpoint and at the tick just before the anomaly
    start, clamped at zero.  Zero when ``mu`` already checkpoints every tick.
    """
    tick = params.tick
    k1 = checkpoint_time_before_anomaly(s, params.delta_s, params.mu, tick)
    k1_t = round(k1 / tick)
    s_t = round(s / tick)
    opt_t = s_t - 1
    if k1_t >= opt_t:
        return np.zeros_like(params.restrict(params.eps_delta))
    gap = (recovery_error_bound_at(params, k, k1_t)
           - recovery_error_bound_at(params, k, opt_t))
    return np.clip(gap, 0.0, None)


def delta_from_measurements(model, y, x_hat, u, eps_delta_config=None):
    """Estimator-error estimate from the measurement residual.

    For linear-in-state measurement maps, ``delta = pinv(C) (y - g(x_hat, u))``
    on the components the sensors observe; unobserved components fall back
    to the configured bound.  Returns ``(delta, from_measurement_mask)``.
    """
    y = np.atleast_1d(np.asarray(y, float))
    x_hat = np.asarray(x_hat, float)
    C = np.atleast_2d(model.jac_C(x_hat, np.asarray(u, float)))
    resid = y - np.atleast_1d(model.g(x_hat, u))
    observable = np.any(np.abs(C) > 1e-12, axis=0)
    delta = np.zeros(model.n_x)
    delta[observable] = (np.linalg.pinv(C[:, observable]) @ resid)
    mask = observable.copy()
    if eps_delta_config is not None:
        fallback = np.broadcast_to(np.asarray(eps_delta_config, float),
                                   (model.n_x,))
        delta[~observable] = fallback[~observable]
    return delta, mask


def calibrate_bound_params(model, records, tick: float, mu: float,
                           sigma_factor: float = 6.0,
                           lti: bool = False) -> BoundParams:
    """Calibrate bound parameters from simulation traces.

    ``records`` is an iterable of per-run dicts with arrays ``x_true``,
    ``x_hat`` (final estimates), ``x_rec`` (roll-forward values, NaN when
    not recovering), ``u`` (applied inputs) and ``recovered`` (per-element
    masks), all indexed by tick.  Calibration:

    * ``A_bar``: element-wise max ``|Jacobian|`` along the trace,
    * ``eps_omega``: ``sigma_factor`` times the process-noise std,
    * ``eps_delta``: ``sigma_factor`` times the std of healthy-element
      estimation errors,
    * ``phi_bar``: element-wise max accumulated Taylor remainder over the
      recovery episodes (zero for LTI loops).
    """
    n = model.n_x
    A_bar = np.zeros((n, n))
    err_samples = []
    phi_bar = np.zeros(n)
    for rec in records:
        x_true = rec["x_true"]
        x_hat = rec["x_hat"]
        x_rec = rec["x_rec"]
        u = rec["u"]
        mask = rec["recovered"]
        for k in range(len(x_true)):
            A_bar = np.maximum(A_bar, np.abs(model.jac_A(x_hat[k], u[k])))
            healthy = ~mask[k]
            if np.any(healthy):
                e = np.where(healthy, x_true[k] - x_hat[k], np.nan)
                err_samples.append(e)
        if not lti:
            phi_bar = np.maximum(
                phi_bar, _episode_remainders(model, x_true, x_rec, u, mask))
    errs = np.asarray(err_samples)
    sigma = np.sqrt(np.nanmean(errs ** 2, axis=0))
    eps_delta = sigma_factor * sigma
    eps_omega = sigma_factor * np.sqrt(np.diag(model.Q))
    return BoundParams(A_bar=A_bar, eps_delta=eps_delta, eps_omega=eps_omega,
                       phi_bar=phi_bar, tick=tick, mu=mu)


def _episode_remainders(model, x_true, x_rec, u, mask) -> np.ndarray:
    """Max accumulated nonlinear remainder along each recovery episode.

    Propagates ``phi_{k+1} = |A| phi_k + |f(x) - f(xr) - A (x - xr)|``
    with the Jacobian evaluated at the roll-forward value.
    """
    worst = np.zeros(model.n_x)
    acc = None
    for k in range(len(x_true)):
        if np.any(mask[k]) and not np.any(np.isnan(x_rec[k])):
            if acc is None:
                acc = np.zeros(model.n_x)
            A = model.jac_A(x_rec[k], u[k])
            resid = np.abs(model.f(x_true[k], u[k]) - model.f(x_rec[k], u[k])
                           - A @ (x_true[k] - x_rec[k]))
            acc = np.abs(A) @ acc + resid
            worst = np.maximum(worst, acc)
        else:
            acc = None
    return worst
