"""Load profiles, design-of-experiments campaigns, simulation runs and the CSV
trace format."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from . import constants as C
from . import ecm
from .errors import ConfigError, SimulationError, TraceFormatError, ValidationError
from .kvconfig import as_float, as_list, check_keys, read_kv

log = logging.getLogger(__name__)

KINDS = ("constant", "square", "random_walk")
_KIND_CODE = {"constant": 0, "square": 1, "random_walk": 2}
LEVELS = np.array(C.RANDOM_WALK_LEVELS_A)


@dataclass(frozen=True)
class LoadProfile:
    kind: str
    amplitude: float
    period: float = C.SQUARE_PERIOD_S
    pulse_duration: float = C.PULSE_DURATION_S
    seed: int = 0
    soc_low: float = C.SOC_LOW
    soc_high: float = C.SOC_HIGH

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if not self.amplitude > 0:
            raise ConfigError(f"amplitude must be positive, got {self.amplitude}")
        if not 0 <= self.soc_low < self.soc_high <= 1:
            raise ConfigError(f"need 0 <= soc_low < soc_high <= 1, got {self.soc_low}, {self.soc_high}")
        if self.period <= 0 or self.pulse_duration <= 0:
            raise ConfigError("period and pulse_duration must be positive")


@dataclass(frozen=True)
class SimSpec:
    sim_id: str
    profile: LoadProfile
    t_ambient: float
    max_duration: float = C.MAX_HOURS * 3600.0
    sample_period: float = C.SAMPLE_PERIOD_S
    soh_floor: float = C.SOH_FLOOR
    cell: ecm.CellParams = field(default_factory=ecm.CellParams)

    def __post_init__(self):
        if not self.max_duration > 0 or not self.sample_period > 0:
            raise ConfigError("max_duration and sample_period must be positive")
        if not self.t_ambient > 0:
            raise ConfigError(f"t_ambient must be in kelvin, got {self.t_ambient}")


@dataclass
class Trace:
    """Column-oriented labeled time series. Temperatures are in degrees C."""

    sim_id: str
    time_s: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray
    t_amb_c: np.ndarray
    t_cell_c: np.ndarray | None
    soc_true: np.ndarray | None
    soh: np.ndarray
    soc_est: np.ndarray | None = None
    r0_est: np.ndarray | None = None
    termination: str = ""

    def __len__(self):
        return len(self.time_s)

    @property
    def sample_period(self) -> float:
        if len(self.time_s) < 2:
            return float("nan")
        return float(self.time_s[1] - self.time_s[0])

    def columns(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRACE_COLUMNS
                if getattr(self, name) is not None}

    def validate(self) -> None:
        n = len(self.time_s)
        for name, col in self.columns().items():
            if len(col) != n:
                raise ValidationError(f"{self.sim_id}: column {name} has {len(col)} rows, expected {n}")
        if n >= 2:
            steps = np.diff(self.time_s)
            if np.any(steps <= 0):
                raise ValidationError(f"{self.sim_id}: time is not strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-6):
                raise ValidationError(f"{self.sim_id}: time step is not constant")
            if np.any(np.diff(self.soh) > 0):
                raise ValidationError(f"{self.sim_id}: soh column increases")


TRACE_COLUMNS = ("time_s", "current_a", "voltage_v", "t_amb_c", "t_cell_c",
                 "soc_true", "soh", "soc_est", "r0_est")
REQUIRED_COLUMNS = ("time_s", "current_a", "voltage_v", "t_amb_c", "soh")


# ---------------------------------------------------------------- profiles


@lru_cache(maxsize=8)
def _pulse_draws(seed: int, count: int) -> np.ndarray:
    draws = np.array([np.random.SeedSequence([seed, i]).generate_state(1)[0]
                      for i in range(count)], dtype=np.uint64)
    draws.setflags(write=False)
    return draws


def random_walk_levels(amplitude: float) -> np.ndarray:
    """Magnitude levels available to a random walk capped at ``amplitude``."""
    levels = LEVELS[LEVELS <= amplitude + 1e-12]
    return levels if len(levels) else LEVELS[:1]


def pulse_magnitudes(seed: int, count: int, amplitude: float = LEVELS[-1]) -> np.ndarray:
    """Random-walk pulse magnitudes for pulse indices ``0..count-1``.

    Each draw is keyed only on ``(seed, index)`` through a
    :class:`numpy.random.SeedSequence` hash, so any pulse can be regenerated
    without replaying its predecessors. The draw picks uniformly among the
    levels not exceeding ``amplitude``.
    """
    levels = random_walk_levels(amplitude)
    draws = _pulse_draws(seed, count)
    return levels[(draws % np.uint64(len(levels))).astype(np.int64)]


@njit(cache=True)
def _current_kernel(kind, amplitude, period, pulse_len, mags, t, discharging):
    if kind == 0:
        mag = amplitude
    elif kind == 1:
        if (t % period) < 0.5 * period:
            mag = amplitude
        else:
            mag = 0.0
    else:
        mag = mags[int(t // pulse_len)]
    return mag if discharging else -mag


def _profile_args(profile: LoadProfile, horizon: float):
    mags = (pulse_magnitudes(profile.seed, int(horizon // profile.pulse_duration) + 2,
                             profile.amplitude)
            if profile.kind == "random_walk" else np.zeros(1))
    return _KIND_CODE[profile.kind], float(profile.amplitude), float(profile.period), \
        float(profile.pulse_duration), mags


def current_at(profile: LoadProfile, t: float, phase: str) -> float:
    """Profile current at time ``t``: positive while discharging, negative while charging.

    For random walks ``amplitude`` caps the level set {0.25, ..., 2.0} A.
    """
    if phase not in ("charging", "discharging"):
        raise ValueError(f"phase must be charging or discharging, got {phase!r}")
    kind, amp, period, pulse, mags = _profile_args(profile, t)
    return float(_current_kernel(kind, amp, period, pulse, mags, float(t), phase == "discharging"))


# ---------------------------------------------------------------- campaign


@dataclass(frozen=True)
class DoeConfig:
    temperatures_c: tuple = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    amplitudes_a: tuple = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    kinds: tuple = ("constant", "square", "random_walk")
    rw_seeds: tuple = (1, 2, 3)
    soc_low: float = C.SOC_LOW
    soc_high: float = C.SOC_HIGH
    max_hours: float = C.MAX_HOURS
    sample_period_s: float = C.SAMPLE_PERIOD_S
    soh_floor: float = C.SOH_FLOOR
    design: str = "sweep"
    reference_temperature_c: float = 25.0
    reference_amplitude_a: float = 1.0
    square_period_s: float = C.SQUARE_PERIOD_S
    pulse_duration_s: float = C.PULSE_DURATION_S


DOE_KEYS = tuple(DoeConfig.__dataclass_fields__)


def _dedupe(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return tuple(seen)


def load_doe(path) -> DoeConfig:
    values = read_kv(path)
    check_keys(values, DOE_KEYS, "DoE config")
    d = DoeConfig()
    return DoeConfig(
        temperatures_c=tuple(as_list(values, "temperatures_c", float, d.temperatures_c)),
        amplitudes_a=tuple(as_list(values, "amplitudes_a", float, d.amplitudes_a)),
        kinds=tuple(as_list(values, "kinds", str, d.kinds)),
        rw_seeds=tuple(as_list(values, "rw_seeds", int, d.rw_seeds)),
        soc_low=as_float(values, "soc_low", d.soc_low),
        soc_high=as_float(values, "soc_high", d.soc_high),
        max_hours=as_float(values, "max_hours", d.max_hours),
        sample_period_s=as_float(values, "sample_period_s", d.sample_period_s),
        soh_floor=as_float(values, "soh_floor", d.soh_floor),
        design=values.get("design", d.design),
        reference_temperature_c=as_float(values, "reference_temperature_c", d.reference_temperature_c),
        reference_amplitude_a=as_float(values, "reference_amplitude_a", d.reference_amplitude_a),
        square_period_s=as_float(values, "square_period_s", d.square_period_s),
        pulse_duration_s=as_float(values, "pulse_duration_s", d.pulse_duration_s),
    )


def _conditions(doe: DoeConfig, temps, amps):
    if doe.design == "full":
        return [(t, a) for t in temps for a in amps]
    if doe.design != "sweep":
        raise ConfigError(f"design must be 'sweep' or 'full', got {doe.design!r}")
    pairs = [(t, doe.reference_amplitude_a) for t in temps]
    pairs += [(doe.reference_temperature_c, a) for a in amps]
    return list(_dedupe(pairs))


def generate_campaign(doe: DoeConfig = DoeConfig(),
                      cell: ecm.CellParams | None = None) -> list[SimSpec]:
    """Enumerate the campaign as an ordered list of simulation specs.

    ``design = "sweep"`` runs the temperature axis at the reference amplitude
    and the amplitude axis at the reference temperature (union, deduplicated);
    ``design = "full"`` takes the Cartesian product. Every profile kind is
    crossed with these conditions, random walks once per seed.
    """
    temps = _dedupe(doe.temperatures_c)
    amps = _dedupe(doe.amplitudes_a)
    kinds = _dedupe(doe.kinds)
    seeds = _dedupe(doe.rw_seeds)
    if not temps or not amps or not kinds:
        raise ConfigError("DoE axes must be non-empty")
    if "random_walk" in kinds and not seeds:
        raise ConfigError("random_walk requested without rw_seeds")
    for kind in kinds:
        if kind not in KINDS:
            raise ConfigError(f"unknown profile kind {kind!r}")
    cell = cell or ecm.CellParams()

    variants = []
    for kind in kinds:
        if kind == "random_walk":
            variants += [(kind, seed) for seed in seeds]
        else:
            variants.append((kind, 0))

    specs = []
    for kind, seed in variants:
        for temp_c, amp in _conditions(doe, temps, amps):
            tag = {"constant": "const", "square": "square"}.get(kind, f"rw{seed}")
            sim_id = f"{tag}_a{amp:.2f}_t{temp_c:g}"
            profile = LoadProfile(kind=kind, amplitude=amp, period=doe.square_period_s,
                                  pulse_duration=doe.pulse_duration_s, seed=seed,
                                  soc_low=doe.soc_low, soc_high=doe.soc_high)
            specs.append(SimSpec(sim_id=sim_id, profile=profile,
                                 t_ambient=temp_c + C.KELVIN_OFFSET,
                                 max_duration=doe.max_hours * 3600.0,
                                 sample_period=doe.sample_period_s,
                                 soh_floor=doe.soh_floor, cell=cell))
    ids = [s.sim_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("DoE produced duplicate sim ids")
    return specs


# -------------------------------------------------------------- simulation


@njit(cache=True)
def _simulate_kernel(p, socs, volts, s, kind, amplitude, period, pulse_len, mags,
                     soc_low, soc_high, t_amb, dt, substeps, n_max, soh_floor, out):
    """Fill ``out`` (rows x 7: time, current, voltage, t_cell K, soc, soh,
    spare) and return (row count, termination code). Codes: 0 max duration,
    1 soh floor, 2 non-finite state."""
    rec = np.zeros(ecm.N_RECORD)
    discharging = True
    sample_period = dt * substeps
    for row in range(n_max):
        t = row * sample_period
        if discharging and s[ecm.S_SOC] <= soc_low:
            discharging = False
        elif not discharging and s[ecm.S_SOC] >= soc_high:
            discharging = True
        current = _current_kernel(kind, amplitude, period, pulse_len, mags, t, discharging)
        soh = 1.0 - s[ecm.S_LOSS]
        if soh < 0.0:
            soh = 0.0
        out[row, 0] = t
        out[row, 1] = current
        out[row, 2] = ecm.terminal_voltage_kernel(p, socs, volts, s, current)
        out[row, 3] = s[ecm.S_TEMP]
        out[row, 4] = s[ecm.S_SOC]
        out[row, 5] = soh
        if soh <= soh_floor:
            return row + 1, 1
        if row == n_max - 1:
            break
        for sub in range(substeps):
            if sub > 0:
                if discharging and s[ecm.S_SOC] <= soc_low:
                    discharging = False
                elif not discharging and s[ecm.S_SOC] >= soc_high:
                    discharging = True
                current = _current_kernel(kind, amplitude, period, pulse_len, mags,
                                          t + sub * dt, discharging)
            ecm.step_kernel(p, socs, volts, s, current, t_amb, dt, rec)
        for k in range(s.shape[0]):
            if not np.isfinite(s[k]):
                return row + 1, 2
    return n_max, 0


def _integration_grid(sample_period: float):
    substeps = max(1, int(round(sample_period / C.INTEGRATION_DT_S)))
    return sample_period / substeps, substeps


def run_simulation(spec: SimSpec, with_ukf: bool = False, initial_soc: float | None = None) -> Trace:
    """Cycle the cell between the profile's SOC bounds until ``max_duration``
    or until SOH reaches ``soh_floor``; one row every ``sample_period``."""
    p, socs, volts = ecm.param_arrays(spec.cell)
    dt, substeps = _integration_grid(spec.sample_period)
    n_max = int(np.floor(spec.max_duration / spec.sample_period + 1e-9)) + 1
    kind, amp, period, pulse, mags = _profile_args(spec.profile, spec.max_duration + spec.sample_period)
    soc0 = spec.profile.soc_high if initial_soc is None else initial_soc
    s = ecm.BatteryState.initial(soc=soc0, temp_cell=spec.t_ambient).to_vector()
    out = np.empty((n_max, 7))
    rows, code = _simulate_kernel(p, socs, volts, s, kind, amp, period, pulse, mags,
                                  spec.profile.soc_low, spec.profile.soc_high,
                                  spec.t_ambient, dt, substeps, n_max, spec.soh_floor, out)
    if code == 2:
        raise SimulationError(f"{spec.sim_id}: state diverged", last_valid_time=float(out[rows - 1, 0]))
    out = out[:rows]
    trace = Trace(
        sim_id=spec.sim_id,
        time_s=out[:, 0].copy(),
        current_a=out[:, 1].copy(),
        voltage_v=out[:, 2].copy(),
        t_amb_c=np.full(rows, spec.t_ambient - C.KELVIN_OFFSET),
        t_cell_c=out[:, 3] - C.KELVIN_OFFSET,
        soc_true=out[:, 4].copy(),
        soh=out[:, 5].copy(),
        termination=("max_duration", "soh_floor")[code],
    )
    if with_ukf:
        from .ukf import estimate_trace
        trace.soc_est, trace.r0_est = estimate_trace(spec.cell, trace)
    return trace


def trace_digest(trace: Trace) -> str:
    h = hashlib.sha256()
    for name, col in trace.columns().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(col, dtype="<f8").tobytes())
    return h.hexdigest()


# ------------------------------------------------------------------- CSV IO

_FMT = "%.9g"


def write_trace(trace: Trace, path) -> None:
    path = Path(path)
    cols = trace.columns()
    names = list(cols)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        if len(trace):
            data = np.column_stack([cols[n] for n in names])
            np.savetxt(fh, data, fmt=_FMT, delimiter=",")


def _locate_bad_line(path: Path, width: int) -> tuple[int, str]:
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                continue
            if len(row) != width:
                return lineno, f"expected {width} fields, found {len(row)}"
            for cell in row:
                try:
                    float(cell)
                except ValueError:
                    return lineno, f"cannot parse value {cell!r}"
    return 0, "unreadable numeric data"


def read_trace(path, sim_id: str | None = None) -> Trace:
    """Read a trace CSV. Columns are matched by header name; ``t_cell_c``,
    ``soc_true``, ``soc_est`` and ``r0_est`` are optional."""
    path = Path(path)
    with open(path, newline="") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise TraceFormatError("missing header", line=1)
        header = [h.strip() for h in header_line.strip().split(",")]
        body = fh.read()
    unknown = [h for h in header if h not in TRACE_COLUMNS]
    if unknown:
        raise TraceFormatError(f"unknown columns {unknown}", line=1)
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise TraceFormatError(f"missing columns {missing}", line=1)
    if len(set(header)) != len(header):
        raise TraceFormatError("duplicate columns", line=1)
    if body.strip():
        try:
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=float)
        except ValueError as exc:
            line, reason = _locate_bad_line(path, len(header))
            raise TraceFormatError(reason, line=line or None) from exc
        if data.shape[1] != len(header):
            raise TraceFormatError(f"expected {len(header)} fields, found {data.shape[1]}", line=2)
    else:
        data = np.empty((0, len(header)))
    cols = {name: data[:, i].copy() for i, name in enumerate(header)}
    trace = Trace(sim_id=sim_id or path.stem, **{n: cols.get(n) for n in TRACE_COLUMNS})
    trace.validate()
    return trace


# ---------------------------------------------------------------- campaign


MANIFEST_FIELDS = ("sim_id", "file", "kind", "amplitude_a", "period_s", "pulse_duration_s",
                   "seed", "soc_low", "soc_high", "t_amb_c", "max_hours", "sample_period_s",
                   "soh_floor", "rows", "termination", "final_soh")


def manifest_row(spec: SimSpec, trace: Trace, filename: str) -> dict:
    prof = spec.profile
    return {
        "sim_id": spec.sim_id, "file": filename, "kind": prof.kind,
        "amplitude_a": f"{prof.amplitude:g}", "period_s": f"{prof.period:g}",
        "pulse_duration_s": f"{prof.pulse_duration:g}", "seed": prof.seed,
        "soc_low": f"{prof.soc_low:g}", "soc_high": f"{prof.soc_high:g}",
        "t_amb_c": f"{spec.t_ambient - C.KELVIN_OFFSET:g}",
        "max_hours": f"{spec.max_duration / 3600.0:g}",
        "sample_period_s": f"{spec.sample_period:g}", "soh_floor": f"{spec.soh_floor:g}",
        "rows": len(trace), "termination": trace.termination,
        "final_soh": _FMT % (trace.soh[-1] if len(trace) else float("nan")),
    }


def _run_and_write(args):
    spec, out_dir, with_ukf = args
    trace = run_simulation(spec, with_ukf=with_ukf)
    filename = f"{spec.sim_id}.csv"
    write_trace(trace, Path(out_dir) / filename)
    return manifest_row(spec, trace, filename)


def run_campaign(specs, out_dir, with_ukf: bool = False, jobs: int = 1) -> Path:
    """Simulate every spec into ``out_dir/<sim_id>.csv`` and write
    ``manifest.csv`` once all simulations have finished."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = [(spec, str(out_dir), with_ukf) for spec in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_and_write, work))
    else:
        rows = []
        for item in work:
            rows.append(_run_and_write(item))
            log.info("simulated %s (%d rows)", rows[-1]["sim_id"], rows[-1]["rows"])
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def spec_to_dict(spec: SimSpec) -> dict:
    d = asdict(spec)
    d.pop("cell")
    return d


def with_duration(specs, hours: float) -> list[SimSpec]:
    return [replace(s, max_duration=hours * 3600.0) for s in specs]
