"""Unscented Kalman filter over the state [soc, v_rc, r0].

The transition reuses the soc and RC dynamics of :mod:`simsoh.ecm`; the series
resistance is a random walk. The measurement is the terminal voltage
``ocv(soc) - current * r0 - v_rc``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import constants as C
from . import ecm
from .errors import CovarianceError, NumericError

N_STATE = 3


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = C.UKF_ALPHA
    beta: float = C.UKF_BETA
    kappa: float = C.UKF_KAPPA
    process_noise_diag: tuple = C.UKF_PROCESS_NOISE
    measurement_noise: float = C.UKF_MEASUREMENT_NOISE

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if len(self.process_noise_diag) != N_STATE or min(self.process_noise_diag) <= 0:
            raise ValueError("process_noise_diag must hold 3 positive variances")
        if not self.measurement_noise > 0:
            raise ValueError("measurement_noise must be positive")
        if N_STATE + _lambda(self) <= 0:
            raise ValueError("alpha/kappa give a non-positive sigma-point spread")


@dataclass(frozen=True)
class UkfState:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def initial(cls, params: ecm.CellParams, soc: float, v_rc: float = 0.0,
                r0: float | None = None, variances=C.UKF_INITIAL_COVARIANCE) -> "UkfState":
        r0 = params.r0_init if r0 is None else r0
        return cls(np.array([soc, v_rc, r0], dtype=float), np.diag(np.asarray(variances, dtype=float)))

    @property
    def soc(self) -> float:
        return float(self.mean[0])

    @property
    def r0(self) -> float:
        return float(self.mean[2])


def _lambda(cfg: UkfConfig, n: int = N_STATE) -> float:
    return cfg.alpha ** 2 * (n + cfg.kappa) - n


def unscented_weights(cfg: UkfConfig, n: int = N_STATE):
    lam = _lambda(cfg, n)
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    # lam / (n + lam) in exact arithmetic; closing the sum keeps it at 1 when
    # small alpha makes the individual weights huge
    wm[0] = 1.0 - 2 * n * wm[1]
    wc[0] = wm[0] + (1.0 - cfg.alpha ** 2 + cfg.beta)
    return wm, wc, lam


@njit(cache=True)
def _sigma_kernel(mean, cov, spread):
    n = mean.shape[0]
    root = np.linalg.cholesky(spread * cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        pts[1 + i] = mean + root[:, i]
        pts[1 + n + i] = mean - root[:, i]
    return pts


@njit(cache=True)
def _combine(points, wm, wc):
    ref = points[0]
    mean = ref.copy()
    for i in range(1, points.shape[0]):
        mean += wm[i] * (points[i] - ref)
    dev = points - mean
    cov = np.zeros((points.shape[1], points.shape[1]))
    for i in range(points.shape[0]):
        cov += wc[i] * np.outer(dev[i], dev[i])
    return mean, cov


@njit(cache=True)
def _transition(points, p, current, dt):
    out = points.copy()
    tau = p[ecm.P_R1] * p[ecm.P_C1]
    for i in range(points.shape[0]):
        soc, v_rc, r0 = points[i, 0], points[i, 1], points[i, 2]
        gamma = p[ecm.P_GAMMA]
        health = 1.0
        if gamma > 0.0:
            health = 1.0 - (r0 / p[ecm.P_R0] - 1.0) / gamma
            health = min(1.0, max(1e-3, health))
        out[i, 0] = soc - current * dt / (3600.0 * p[ecm.P_Q] * health)
        out[i, 1] = v_rc + dt * (-v_rc / tau + current / p[ecm.P_C1])
        out[i, 2] = r0
    return out


@njit(cache=True)
def _ocv_extrapolated(socs, volts, soc):
    # linear continuation past the table ends keeps soc observable when an
    # estimate strays outside [0, 1]
    n = socs.shape[0]
    if soc < socs[0]:
        return volts[0] + (soc - socs[0]) * (volts[1] - volts[0]) / (socs[1] - socs[0])
    if soc > socs[n - 1]:
        slope = (volts[n - 1] - volts[n - 2]) / (socs[n - 1] - socs[n - 2])
        return volts[n - 1] + (soc - socs[n - 1]) * slope
    return ecm.ocv_kernel(socs, volts, soc)


@njit(cache=True)
def _measure(points, socs, volts, current):
    z = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        z[i] = _ocv_extrapolated(socs, volts, points[i, 0]) - current * points[i, 2] - points[i, 1]
    return z


@njit(cache=True)
def _predict_kernel(mean, cov, p, wm, wc, spread, q, current, dt):
    pts = _sigma_kernel(mean, cov, spread)
    new_mean, new_cov = _combine(_transition(pts, p, current, dt), wm, wc)
    for k in range(q.shape[0]):
        new_cov[k, k] += q[k]
    return new_mean, 0.5 * (new_cov + new_cov.T)


@njit(cache=True)
def _update_kernel(mean, cov, socs, volts, wm, wc, spread, r, current, z):
    pts = _sigma_kernel(mean, cov, spread)
    zs = _measure(pts, socs, volts, current)
    zhat = zs[0]
    for i in range(1, zs.shape[0]):
        zhat += wm[i] * (zs[i] - zs[0])
    dz = zs - zhat
    s = r
    cross = np.zeros(mean.shape[0])
    for i in range(zs.shape[0]):
        s += wc[i] * dz[i] * dz[i]
        cross += wc[i] * dz[i] * (pts[i] - mean)
    if not s > 0.0:
        return mean, cov, s
    gain = cross / s
    new_mean = mean + gain * (z - zhat)
    new_cov = cov - s * np.outer(gain, gain)
    return new_mean, 0.5 * (new_cov + new_cov.T), s


def _spread(cfg):
    return N_STATE + _lambda(cfg)


def _checked(call, *args):
    try:
        return call(*args)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"covariance is not positive definite: {exc}") from exc


def sigma_points(state: UkfState, cfg: UkfConfig = UkfConfig()):
    """Return ``(points, mean_weights, cov_weights)``; points has shape (7, 3)."""
    wm, wc, _ = unscented_weights(cfg)
    pts = _checked(_sigma_kernel, np.asarray(state.mean, float),
                   np.asarray(state.covariance, float), _spread(cfg))
    return pts, wm, wc


def predict(state: UkfState, cfg: UkfConfig, params: ecm.CellParams, current: float,
            t_cell: float, dt: float) -> UkfState:
    """Time update over ``dt`` seconds.

    ``t_cell`` is accepted for interface parity with the simulator inputs; the
    first-order cell model has temperature-independent electrical parameters.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    p, _, _ = ecm.param_arrays(params)
    wm, wc, _ = unscented_weights(cfg)
    mean, cov = _checked(_predict_kernel, np.asarray(state.mean, float),
                         np.asarray(state.covariance, float), p, wm, wc, _spread(cfg),
                         np.asarray(cfg.process_noise_diag, float), float(current), float(dt))
    return UkfState(mean, cov)


def update(state: UkfState, cfg: UkfConfig, params: ecm.CellParams, current: float,
           measured_voltage: float) -> UkfState:
    _, socs, volts = ecm.param_arrays(params)
    wm, wc, _ = unscented_weights(cfg)
    mean, cov, s = _checked(_update_kernel, np.asarray(state.mean, float),
                            np.asarray(state.covariance, float), socs, volts, wm, wc,
                            _spread(cfg), cfg.measurement_noise, float(current),
                            float(measured_voltage))
    if not s > 0:
        raise NumericError(f"innovation variance is not positive: {s}")
    return UkfState(mean, cov)


def measurement(params: ecm.CellParams, mean, current: float) -> float:
    _, socs, volts = ecm.param_arrays(params)
    return float(_ocv_extrapolated(socs, volts, float(mean[0])) - current * mean[2] - mean[1])


def soh_from_r0(params: ecm.CellParams, r0_est: float) -> float:
    """Invert the resistance growth law: fresh cell -> 1.0, fully faded -> 0.0."""
    if not r0_est > 0:
        raise ValueError(f"r0_est must be positive, got {r0_est}")
    gamma = params.aging.gamma_r_growth
    if gamma == 0:
        return 1.0
    loss = (r0_est / params.r0_init - 1.0) / gamma
    return 1.0 - min(1.0, max(0.0, loss))


# ------------------------------------------------------------- trace filter


@njit(cache=True)
def _filter_kernel(mean, cov, p, socs, volts, wm, wc, spread, q, r, current, voltage, dt,
                   soc_out, r0_out):
    for k in range(current.shape[0]):
        if k > 0:
            mean, cov = _predict_kernel(mean, cov, p, wm, wc, spread, q, current[k - 1], dt)
        mean, cov, s = _update_kernel(mean, cov, socs, volts, wm, wc, spread, r,
                                      current[k], voltage[k])
        if not s > 0.0:
            return k
        soc_out[k] = mean[0]
        r0_out[k] = mean[2]
    return current.shape[0]


def initial_soc_from_voltage(params: ecm.CellParams, voltage: float, current: float = 0.0) -> float:
    """Rest-voltage inversion of the OCV table (series drop removed)."""
    ocv_value = voltage + current * params.r0_init
    socs = np.array([s for s, _ in params.ocv_table])
    volts = np.array([v for _, v in params.ocv_table])
    return float(np.interp(ocv_value, volts, socs))


def estimate_trace(params: ecm.CellParams, trace, cfg: UkfConfig = UkfConfig(),
                   initial: UkfState | None = None):
    """Run the filter over a trace; returns ``(soc_est, r0_est)`` columns."""
    n = len(trace)
    soc_out = np.full(n, np.nan)
    r0_out = np.full(n, np.nan)
    if n == 0:
        return soc_out, r0_out
    if initial is None:
        soc0 = initial_soc_from_voltage(params, trace.voltage_v[0], trace.current_a[0])
        initial = UkfState.initial(params, soc0)
    p, socs, volts = ecm.param_arrays(params)
    wm, wc, _ = unscented_weights(cfg)
    dt = trace.sample_period if n > 1 else 1.0
    done = _checked(_filter_kernel, initial.mean.astype(float), initial.covariance.astype(float),
                    p, socs, volts, wm, wc, _spread(cfg), np.asarray(cfg.process_noise_diag, float),
                    cfg.measurement_noise, np.ascontiguousarray(trace.current_a, float),
                    np.ascontiguousarray(trace.voltage_v, float), float(dt), soc_out, r0_out)
    if done < n:
        raise NumericError(f"innovation variance collapsed at row {done}")
    return soc_out, r0_out


def covariance_is_psd(cov, jitter: float = 1e-12) -> bool:
    try:
        np.linalg.cholesky(np.asarray(cov) + jitter * np.eye(len(cov)))
    except np.linalg.LinAlgError:
        return False
    return bool(np.allclose(cov, np.asarray(cov).T, atol=1e-12, rtol=0))
