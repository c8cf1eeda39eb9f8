"""First-order equivalent circuit cell with lumped thermal model and aging.

The arithmetic lives in small numba kernels operating on flat float vectors so
that the per-step Python API and the campaign simulation loop execute exactly
the same instructions. Sign convention: positive current discharges the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numba import njit

from . import constants as C
from .errors import DomainError, NumericError
from .kvconfig import as_float, as_list, check_keys, read_kv

# parameter vector layout
P_Q, P_R0, P_R1, P_C1, P_CTH, P_RTH = 0, 1, 2, 3, 4, 5
P_KCAL, P_EA, P_TREF, P_SOCS = 6, 7, 8, 9
P_KCYC, P_ADOD, P_BETA, P_THETA, P_GAMMA = 10, 11, 12, 13, 14
N_PARAMS = 15

# state vector layout
S_SOC, S_VRC, S_TEMP, S_LOSS, S_ELAPSED = 0, 1, 2, 3, 4
S_PHASE, S_PH_START, S_CMIN, S_CMAX = 5, 6, 7, 8
S_ACC_I, S_ACC_T, S_ACC_SOC, S_COUNT, S_SEEN_DIS = 9, 10, 11, 12, 13
S_SATURATED = 14
N_STATE = 15

PHASE_IDLE, PHASE_DISCHARGING, PHASE_CHARGING = 0, 1, 2
_PHASE_NAMES = ("idle", "discharging", "charging")

# cycle record layout: dod, mean_abs_current, mean_soc, mean_temp
N_RECORD = 4


@dataclass(frozen=True)
class AgingParams:
    k_cal: float = C.K_CAL
    ea_over_r: float = C.EA_OVER_R_K
    t_ref: float = C.T_REF_K
    soc_stress_slope: float = C.SOC_STRESS_SLOPE
    k_cyc: float = C.K_CYC
    alpha_dod: float = C.ALPHA_DOD
    beta_current: float = C.BETA_CURRENT
    theta_temp: float = C.THETA_TEMP_PER_K
    gamma_r_growth: float = C.GAMMA_R_GROWTH

    def __post_init__(self):
        for name in ("k_cal", "ea_over_r", "soc_stress_slope", "k_cyc", "alpha_dod",
                     "beta_current", "theta_temp", "gamma_r_growth"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"aging parameter {name} must be finite and >= 0, got {value}")
        if not self.t_ref > 0:
            raise DomainError(f"t_ref must be positive, got {self.t_ref}")

    def disabled(self) -> "AgingParams":
        """Same parameters with both loss rates zeroed."""
        return replace(self, k_cal=0.0, k_cyc=0.0)


@dataclass(frozen=True)
class CellParams:
    nominal_capacity: float = C.NOMINAL_CAPACITY_AH
    r0_init: float = C.R0_INIT_OHM
    r1: float = C.R1_OHM
    c1: float = C.C1_F
    ocv_table: tuple = C.DEFAULT_OCV_TABLE
    c_th: float = C.C_TH_J_PER_K
    r_th: float = C.R_TH_K_PER_W
    aging: AgingParams = field(default_factory=AgingParams)

    def __post_init__(self):
        for name in ("nominal_capacity", "r0_init", "r1", "c1", "c_th", "r_th"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive, got {value}")
        table = tuple((float(s), float(v)) for s, v in self.ocv_table)
        object.__setattr__(self, "ocv_table", table)
        if len(table) < 2:
            raise DomainError("ocv_table needs at least two knots")
        socs = [s for s, _ in table]
        volts = [v for _, v in table]
        if socs[0] != 0.0 or socs[-1] != 1.0:
            raise DomainError("ocv_table must cover soc 0..1")
        if any(b <= a for a, b in zip(socs, socs[1:])):
            raise DomainError("ocv_table soc values must be strictly increasing")
        if any(b <= a for a, b in zip(volts, volts[1:])):
            raise DomainError("ocv_table voltages must be strictly increasing")

    def without_aging(self) -> "CellParams":
        return replace(self, aging=self.aging.disabled())


@dataclass(frozen=True)
class CycleTracker:
    phase: str = "idle"
    soc_at_phase_start: float = 0.0
    cycle_soc_min: float = 0.0
    cycle_soc_max: float = 0.0
    mean_abs_current_accum: float = 0.0
    mean_temp_accum: float = 0.0
    mean_soc_accum: float = 0.0
    sample_count: int = 0
    seen_discharge: bool = False


@dataclass(frozen=True)
class CycleRecord:
    dod: float
    mean_abs_current: float
    mean_soc: float
    mean_temp: float


@dataclass(frozen=True)
class BatteryState:
    soc: float = 1.0
    v_rc: float = 0.0
    temp_cell: float = C.T_REF_K
    capacity_loss: float = 0.0
    elapsed: float = 0.0
    cycle_tracker: CycleTracker = field(default_factory=CycleTracker)
    saturation_count: int = 0

    @classmethod
    def initial(cls, soc: float = 1.0, temp_cell: float = C.T_REF_K) -> "BatteryState":
        return cls(soc=soc, temp_cell=temp_cell)

    def to_vector(self) -> np.ndarray:
        s = np.zeros(N_STATE)
        tr = self.cycle_tracker
        s[S_SOC] = self.soc
        s[S_VRC] = self.v_rc
        s[S_TEMP] = self.temp_cell
        s[S_LOSS] = self.capacity_loss
        s[S_ELAPSED] = self.elapsed
        s[S_PHASE] = _PHASE_NAMES.index(tr.phase)
        s[S_PH_START] = tr.soc_at_phase_start
        s[S_CMIN] = tr.cycle_soc_min
        s[S_CMAX] = tr.cycle_soc_max
        s[S_ACC_I] = tr.mean_abs_current_accum
        s[S_ACC_T] = tr.mean_temp_accum
        s[S_ACC_SOC] = tr.mean_soc_accum
        s[S_COUNT] = tr.sample_count
        s[S_SEEN_DIS] = 1.0 if tr.seen_discharge else 0.0
        s[S_SATURATED] = self.saturation_count
        return s

    @classmethod
    def from_vector(cls, s: np.ndarray) -> "BatteryState":
        tracker = _tracker_from_vector(s)
        return cls(
            soc=float(s[S_SOC]),
            v_rc=float(s[S_VRC]),
            temp_cell=float(s[S_TEMP]),
            capacity_loss=float(s[S_LOSS]),
            elapsed=float(s[S_ELAPSED]),
            cycle_tracker=tracker,
            saturation_count=int(s[S_SATURATED]),
        )


def _tracker_from_vector(s) -> CycleTracker:
    return CycleTracker(
        phase=_PHASE_NAMES[int(s[S_PHASE])],
        soc_at_phase_start=float(s[S_PH_START]),
        cycle_soc_min=float(s[S_CMIN]),
        cycle_soc_max=float(s[S_CMAX]),
        mean_abs_current_accum=float(s[S_ACC_I]),
        mean_temp_accum=float(s[S_ACC_T]),
        mean_soc_accum=float(s[S_ACC_SOC]),
        sample_count=int(s[S_COUNT]),
        seen_discharge=bool(s[S_SEEN_DIS]),
    )


@lru_cache(maxsize=64)
def param_arrays(params: CellParams):
    """Flatten ``params`` into (parameter vector, ocv soc knots, ocv volt knots)."""
    a = params.aging
    p = np.array([
        params.nominal_capacity, params.r0_init, params.r1, params.c1, params.c_th,
        params.r_th, a.k_cal, a.ea_over_r, a.t_ref, a.soc_stress_slope, a.k_cyc,
        a.alpha_dod, a.beta_current, a.theta_temp, a.gamma_r_growth,
    ])
    socs = np.array([s for s, _ in params.ocv_table])
    volts = np.array([v for _, v in params.ocv_table])
    for arr in (p, socs, volts):
        arr.setflags(write=False)
    return p, socs, volts


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def ocv_kernel(socs, volts, soc):
    n = socs.shape[0]
    if soc <= socs[0]:
        return volts[0]
    if soc >= socs[n - 1]:
        return volts[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if socs[mid] <= soc:
            lo = mid
        else:
            hi = mid
    frac = (soc - socs[lo]) / (socs[hi] - socs[lo])
    return volts[lo] + frac * (volts[hi] - volts[lo])


@njit(cache=True)
def calendar_kernel(k_cal, ea_over_r, t_ref, soc_slope, dt, mean_soc, mean_temp, elapsed):
    if k_cal == 0.0:
        return 0.0
    arrhenius = math.exp(-ea_over_r * (1.0 / mean_temp - 1.0 / t_ref))
    stress = 1.0 + soc_slope * mean_soc
    dsqrt = math.sqrt((elapsed + dt) / 3600.0) - math.sqrt(elapsed / 3600.0)
    return k_cal * arrhenius * stress * dsqrt


@njit(cache=True)
def cycle_kernel(k_cyc, alpha_dod, beta_current, theta_temp, t_ref, nominal_capacity,
                 dod, mean_abs_current, mean_temp):
    if k_cyc == 0.0 or (dod <= 0.0 and alpha_dod > 0.0):
        return 0.0
    depth = max(dod, 0.0) ** alpha_dod
    c_rate = mean_abs_current / nominal_capacity
    return k_cyc * depth * (1.0 + beta_current * c_rate) * math.exp(theta_temp * (mean_temp - t_ref))


@njit(cache=True)
def track_kernel(s, soc, current, temp, idle_band, rec):
    """Advance the cycle state machine held in ``s``; write ``rec`` and
    return True when a discharge -> charge -> discharge sequence completes."""
    phase = int(s[S_PHASE])
    if abs(current) < idle_band:
        new = phase
    elif current > 0.0:
        new = PHASE_DISCHARGING
    else:
        new = PHASE_CHARGING
    emitted = False
    restart = False
    if phase == PHASE_IDLE:
        if new == PHASE_IDLE:
            return False
        restart = True
    elif new != phase:
        if phase == PHASE_CHARGING and new == PHASE_DISCHARGING:
            if s[S_SEEN_DIS] > 0.0 and s[S_COUNT] > 0.0:
                count = s[S_COUNT]
                rec[0] = s[S_CMAX] - s[S_CMIN]
                rec[1] = s[S_ACC_I] / count
                rec[2] = s[S_ACC_SOC] / count
                rec[3] = s[S_ACC_T] / count
                emitted = True
            restart = True
        s[S_PH_START] = soc
    if restart:
        s[S_PH_START] = soc
        s[S_CMIN] = soc
        s[S_CMAX] = soc
        s[S_ACC_I] = 0.0
        s[S_ACC_T] = 0.0
        s[S_ACC_SOC] = 0.0
        s[S_COUNT] = 0.0
        s[S_SEEN_DIS] = 0.0
    if new == PHASE_DISCHARGING:
        s[S_SEEN_DIS] = 1.0
    s[S_PHASE] = new
    if soc < s[S_CMIN]:
        s[S_CMIN] = soc
    if soc > s[S_CMAX]:
        s[S_CMAX] = soc
    s[S_ACC_I] += abs(current)
    s[S_ACC_T] += temp
    s[S_ACC_SOC] += soc
    s[S_COUNT] += 1.0
    return emitted


@njit(cache=True)
def terminal_voltage_kernel(p, socs, volts, s, current):
    r0_now = p[P_R0] * (1.0 + p[P_GAMMA] * s[S_LOSS])
    return ocv_kernel(socs, volts, s[S_SOC]) - current * r0_now - s[S_VRC]


@njit(cache=True)
def step_kernel(p, socs, volts, s, current, t_ambient, dt, rec):
    """Forward-Euler step of ``s`` in place. Returns (terminal voltage at the
    start of the step, cycle-completed flag)."""
    soc = s[S_SOC]
    v_rc = s[S_VRC]
    temp = s[S_TEMP]
    loss = s[S_LOSS]
    elapsed = s[S_ELAPSED]

    r0_now = p[P_R0] * (1.0 + p[P_GAMMA] * loss)
    voltage = ocv_kernel(socs, volts, soc) - current * r0_now - v_rc

    emitted = track_kernel(s, soc, current, temp, C.IDLE_CURRENT_A, rec)

    capacity = p[P_Q] * (1.0 - loss)
    if capacity > 0.0:
        new_soc = soc - current * dt / (3600.0 * capacity)
    else:
        new_soc = 0.0
    if new_soc < 0.0:
        new_soc = 0.0
        s[S_SATURATED] += 1.0
    elif new_soc > 1.0:
        new_soc = 1.0
        s[S_SATURATED] += 1.0
    s[S_SOC] = new_soc
    s[S_VRC] = v_rc + dt * (-v_rc / (p[P_R1] * p[P_C1]) + current / p[P_C1])
    s[S_TEMP] = temp + dt * (current * current * r0_now - (temp - t_ambient) / p[P_RTH]) / p[P_CTH]

    dloss = calendar_kernel(p[P_KCAL], p[P_EA], p[P_TREF], p[P_SOCS], dt, soc, temp, elapsed)
    if emitted:
        dloss += cycle_kernel(p[P_KCYC], p[P_ADOD], p[P_BETA], p[P_THETA], p[P_TREF], p[P_Q],
                              rec[0], rec[1], rec[3])
    new_loss = loss + dloss
    if new_loss > 1.0:
        new_loss = 1.0
    s[S_LOSS] = new_loss
    s[S_ELAPSED] = elapsed + dt
    return voltage, emitted


# ------------------------------------------------------------ public API


def ocv(params: CellParams, soc: float) -> float:
    """Open-circuit voltage by linear interpolation over ``params.ocv_table``."""
    if not (0.0 <= soc <= 1.0):
        raise DomainError(f"soc must lie in [0, 1], got {soc}")
    _, socs, volts = param_arrays(params)
    return float(ocv_kernel(socs, volts, float(soc)))


def step(params: CellParams, state: BatteryState, current: float, t_ambient: float,
         dt: float) -> tuple[BatteryState, float]:
    """Advance ``state`` by ``dt`` seconds under ``current`` (A) and ambient
    temperature ``t_ambient`` (K).

    Returns the new state and the terminal voltage seen at the start of the
    step, i.e. ``ocv(soc) - current * r0_now - v_rc`` for the incoming state.
    """
    for name, value in (("current", current), ("t_ambient", t_ambient), ("dt", dt)):
        if not math.isfinite(value):
            raise NumericError(f"non-finite {name}: {value}")
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    p, socs, volts = param_arrays(params)
    s = state.to_vector()
    rec = np.zeros(N_RECORD)
    voltage, _ = step_kernel(p, socs, volts, s, float(current), float(t_ambient), float(dt), rec)
    if not np.all(np.isfinite(s)):
        raise NumericError("state became non-finite")
    return BatteryState.from_vector(s), float(voltage)


def track_cycle(tracker: CycleTracker, soc: float, current: float,
                temp: float) -> tuple[CycleTracker, CycleRecord | None]:
    s = BatteryState(cycle_tracker=tracker).to_vector()
    rec = np.zeros(N_RECORD)
    emitted = track_kernel(s, float(soc), float(current), float(temp), C.IDLE_CURRENT_A, rec)
    record = CycleRecord(*map(float, rec)) if emitted else None
    return _tracker_from_vector(s), record


def calendar_loss(aging: AgingParams, dt: float, mean_soc: float, mean_temp: float,
                  elapsed: float) -> float:
    if mean_temp <= 0:
        raise DomainError(f"mean_temp must be positive kelvin, got {mean_temp}")
    if dt <= 0 or elapsed < 0:
        raise DomainError("calendar_loss needs dt > 0 and elapsed >= 0")
    return float(calendar_kernel(aging.k_cal, aging.ea_over_r, aging.t_ref,
                                 aging.soc_stress_slope, float(dt), float(mean_soc),
                                 float(mean_temp), float(elapsed)))


def cycle_loss(aging: AgingParams, rec: CycleRecord, nominal_capacity: float) -> float:
    return float(cycle_kernel(aging.k_cyc, aging.alpha_dod, aging.beta_current,
                              aging.theta_temp, aging.t_ref, float(nominal_capacity),
                              rec.dod, rec.mean_abs_current, rec.mean_temp))


def soh(state: BatteryState) -> float:
    return min(1.0, max(0.0, 1.0 - state.capacity_loss))


# ------------------------------------------------------------ config file

_CELL_KEYS = {
    "nominal_capacity_ah": "nominal_capacity",
    "r0_init_ohm": "r0_init",
    "r1_ohm": "r1",
    "c1_f": "c1",
    "c_th_j_per_k": "c_th",
    "r_th_k_per_w": "r_th",
}
_AGING_KEYS = {
    "k_cal": "k_cal",
    "ea_over_r_k": "ea_over_r",
    "t_ref_k": "t_ref",
    "soc_stress_slope": "soc_stress_slope",
    "k_cyc": "k_cyc",
    "alpha_dod": "alpha_dod",
    "beta_current": "beta_current",
    "theta_temp_per_k": "theta_temp",
    "gamma_r_growth": "gamma_r_growth",
}
CELL_CONFIG_KEYS = tuple(_CELL_KEYS) + tuple(_AGING_KEYS) + ("ocv_soc", "ocv_v")


def cell_params_from_dict(values: dict[str, str]) -> CellParams:
    """Build :class:`CellParams` from config keys; missing keys keep defaults."""
    check_keys(values, CELL_CONFIG_KEYS, "cell config")
    defaults = CellParams()
    kwargs = {attr: as_float(values, key, getattr(defaults, attr))
              for key, attr in _CELL_KEYS.items()}
    aging = {attr: as_float(values, key, getattr(defaults.aging, attr))
             for key, attr in _AGING_KEYS.items()}
    if ("ocv_soc" in values) != ("ocv_v" in values):
        raise DomainError("ocv_soc and ocv_v must be given together")
    if "ocv_soc" in values:
        socs = as_list(values, "ocv_soc", float)
        volts = as_list(values, "ocv_v", float)
        if len(socs) != len(volts):
            raise DomainError("ocv_soc and ocv_v lengths differ")
        kwargs["ocv_table"] = tuple(zip(socs, volts))
    return CellParams(aging=AgingParams(**aging), **kwargs)


def load_cell_params(path) -> CellParams:
    return cell_params_from_dict(read_kv(path))
