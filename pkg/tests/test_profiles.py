import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simsoh import constants as C
from simsoh import ecm, profiles
from simsoh.errors import ConfigError, TraceFormatError, ValidationError

LEVELS = set(C.RANDOM_WALK_LEVELS_A)


def _spec(kind="constant", amplitude=1.0, hours=None, seconds=None, temp_c=25.0, cell=None,
          sample_period=1.0, seed=1):
    duration = seconds if seconds is not None else hours * 3600.0
    return profiles.SimSpec(f"{kind}_{amplitude}", profiles.LoadProfile(kind, amplitude, seed=seed),
                            temp_c + C.KELVIN_OFFSET, duration, sample_period,
                            cell=cell or ecm.CellParams())


class TestCurrentAt:
    def test_constant(self):
        prof = profiles.LoadProfile("constant", 2.0)
        assert profiles.current_at(prof, 123.0, "discharging") == 2.0
        assert profiles.current_at(prof, 123.0, "charging") == -2.0

    def test_square_duty_cycle(self):
        prof = profiles.LoadProfile("square", 1.0, period=1800.0)
        assert profiles.current_at(prof, 0.0, "discharging") == 1.0
        assert profiles.current_at(prof, 900.0, "discharging") == 0.0
        assert profiles.current_at(prof, 1800.0, "discharging") == 1.0

    def test_random_walk_pulses(self):
        prof = profiles.LoadProfile("random_walk", 2.0, seed=7)
        a = profiles.current_at(prof, 0.0, "discharging")
        assert profiles.current_at(prof, 59.0, "discharging") == a
        mags = profiles.pulse_magnitudes(7, 500)
        assert profiles.current_at(prof, 61.0, "discharging") == mags[1]
        assert set(mags.tolist()) <= LEVELS
        # with 500 draws every level shows up
        assert set(mags.tolist()) == LEVELS

    def test_random_walk_is_counter_based(self):
        # pulse k does not depend on how many pulses were generated before it
        assert profiles.pulse_magnitudes(3, 1000)[400] == profiles.pulse_magnitudes(3, 401)[400]

    def test_random_walk_seeds_differ(self):
        assert not np.array_equal(profiles.pulse_magnitudes(1, 100), profiles.pulse_magnitudes(2, 100))

    def test_random_walk_amplitude_caps_levels(self):
        mags = profiles.pulse_magnitudes(5, 300, amplitude=0.75)
        assert set(mags.tolist()) == {0.25, 0.5, 0.75}

    @given(st.floats(0, 1e5))
    def test_sign_by_phase(self, t):
        prof = profiles.LoadProfile("random_walk", 2.0, seed=1)
        assert profiles.current_at(prof, t, "discharging") > 0
        assert profiles.current_at(prof, t, "charging") < 0


class TestCampaign:
    def test_default_is_seventy(self):
        specs = profiles.generate_campaign()
        assert len(specs) == 70
        assert len({s.sim_id for s in specs}) == 70

    def test_single_spec(self):
        doe = profiles.DoeConfig(temperatures_c=(25.0,), amplitudes_a=(1.0,), kinds=("constant",))
        assert len(profiles.generate_campaign(doe)) == 1

    def test_duplicates_ignored(self):
        base = profiles.DoeConfig(temperatures_c=(10.0, 20.0), amplitudes_a=(0.5, 1.0))
        dup = dataclasses.replace(base, temperatures_c=(10.0, 20.0, 10.0), amplitudes_a=(0.5, 1.0, 0.5),
                                  kinds=base.kinds + ("square",), rw_seeds=(1, 2, 3, 1))
        assert profiles.generate_campaign(dup) == profiles.generate_campaign(base)

    def test_full_design(self):
        doe = profiles.DoeConfig(temperatures_c=(10.0, 20.0), amplitudes_a=(0.5, 1.0, 2.0),
                                 kinds=("constant",), design="full")
        assert len(profiles.generate_campaign(doe)) == 6

    def test_pure_function(self):
        assert profiles.generate_campaign() == profiles.generate_campaign()

    @pytest.mark.parametrize("field", ["temperatures_c", "amplitudes_a", "kinds"])
    def test_empty_axis(self, field):
        with pytest.raises(ConfigError):
            profiles.generate_campaign(dataclasses.replace(profiles.DoeConfig(), **{field: ()}))

    def test_load_doe(self, tmp_path):
        path = tmp_path / "doe.cfg"
        path.write_text("temperatures_c = 15, 35\nkinds = constant\nmax_hours = 3\n")
        specs = profiles.generate_campaign(profiles.load_doe(path))
        # two temperatures at 1 A plus eight amplitudes at 25 C
        assert len(specs) == 10
        assert all(s.max_duration == 3 * 3600.0 for s in specs)

    def test_unknown_doe_key(self, tmp_path):
        path = tmp_path / "doe.cfg"
        path.write_text("temperature = 15\n")
        with pytest.raises(ConfigError):
            profiles.load_doe(path)


class TestRunSimulation:
    def test_row_count(self):
        trace = profiles.run_simulation(_spec(seconds=10.0))
        assert len(trace) == 11
        np.testing.assert_array_equal(trace.time_s, np.arange(11.0))

    @pytest.mark.parametrize("seconds,period", [(3600.0, 60.0), (1000.0, 7.0), (95.0, 10.0)])
    def test_row_count_formula(self, seconds, period):
        trace = profiles.run_simulation(_spec(seconds=seconds, sample_period=period))
        assert len(trace) == int(seconds // period) + 1

    def test_aging_disabled(self):
        trace = profiles.run_simulation(_spec("square", 2.0, hours=5, cell=ecm.CellParams().without_aging()))
        assert np.all(trace.soh == 1.0)

    def test_bit_identical(self):
        spec = _spec("random_walk", 2.0, hours=3)
        a, b = profiles.run_simulation(spec), profiles.run_simulation(spec)
        assert profiles.trace_digest(a) == profiles.trace_digest(b)

    def test_invariants(self):
        trace = profiles.run_simulation(_spec("random_walk", 2.0, hours=20, temp_c=40.0))
        trace.validate()
        assert np.all(np.diff(trace.soh) <= 0)
        assert trace.soh[-1] < 1.0
        assert trace.soc_true.min() >= 0.1 - 1e-3 and trace.soc_true.max() <= 0.9 + 1e-3
        assert (trace.current_a > 0).any() and (trace.current_a < 0).any()

    def test_sampled_rows_match_one_second_run(self):
        fine = profiles.run_simulation(_spec("square", 1.5, hours=2))
        coarse = profiles.run_simulation(_spec("square", 1.5, hours=2, sample_period=60.0))
        np.testing.assert_array_equal(coarse.soh, fine.soh[::60])
        np.testing.assert_array_equal(coarse.voltage_v, fine.voltage_v[::60])

    def test_soh_floor_stops(self):
        spec = dataclasses.replace(_spec("constant", 2.0, hours=50), soh_floor=0.9999)
        trace = profiles.run_simulation(spec)
        assert trace.termination == "soh_floor"
        assert trace.soh[-1] <= 0.9999
        assert np.all(trace.soh[:-1] > 0.9999)

    def test_with_ukf_columns(self):
        trace = profiles.run_simulation(_spec(hours=1), with_ukf=True)
        assert trace.soc_est is not None and trace.r0_est is not None
        assert np.max(np.abs(trace.soc_est[600:] - trace.soc_true[600:])) < 0.02


class TestTraceIo:
    def test_round_trip(self, tmp_path):
        trace = profiles.run_simulation(_spec("random_walk", 1.0, hours=0.5), with_ukf=True)
        path = tmp_path / "t.csv"
        profiles.write_trace(trace, path)
        back = profiles.read_trace(path, sim_id=trace.sim_id)
        for name, col in trace.columns().items():
            np.testing.assert_array_equal(getattr(back, name), np.array([float("%.9g" % v) for v in col]))

    def test_write_is_idempotent_after_read(self, tmp_path):
        trace = profiles.run_simulation(_spec(hours=0.2))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        profiles.write_trace(trace, a)
        profiles.write_trace(profiles.read_trace(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_shuffled_time(self, tmp_path):
        trace = profiles.run_simulation(_spec(seconds=20.0))
        trace.time_s = trace.time_s[::-1].copy()
        path = tmp_path / "t.csv"
        profiles.write_trace(trace, path)
        with pytest.raises(ValidationError):
            profiles.read_trace(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text(",".join(profiles.TRACE_COLUMNS[:7]) + "\n")
        trace = profiles.read_trace(path)
        assert len(trace) == 0

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time_s,current_a,voltage_v,t_amb_c,soh\n0,1,3.7,25,1\n1,1,oops,25,1\n")
        with pytest.raises(TraceFormatError) as err:
            profiles.read_trace(path)
        assert err.value.line == 3

    def test_missing_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time_s,current_a,voltage_v\n0,1,3.7\n")
        with pytest.raises(TraceFormatError):
            profiles.read_trace(path)

    def test_optional_columns(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time_s,current_a,voltage_v,t_amb_c,soh\n0,1,3.7,25,1\n1,1,3.7,25,1\n")
        trace = profiles.read_trace(path)
        assert trace.t_cell_c is None and trace.soc_true is None


class TestRunCampaign:
    def test_manifest_and_parallel_equivalence(self, tmp_path):
        doe = profiles.DoeConfig(temperatures_c=(20.0, 30.0), amplitudes_a=(1.0,),
                                 kinds=("constant", "random_walk"), rw_seeds=(4,), max_hours=0.5)
        specs = profiles.generate_campaign(doe)
        m1 = profiles.run_campaign(specs, tmp_path / "serial")
        m2 = profiles.run_campaign(specs, tmp_path / "parallel", jobs=2)
        rows = profiles.read_manifest(m1)
        assert [r["sim_id"] for r in rows] == [s.sim_id for s in specs]
        assert m1.read_bytes() == m2.read_bytes()
        for r in rows:
            assert (tmp_path / "serial" / r["file"]).read_bytes() == \
                (tmp_path / "parallel" / r["file"]).read_bytes()


class TestCalibrationGuard:
    def test_some_default_sim_reaches_floor_by_5000h(self):
        # the fastest-aging default condition; the full 70-sim scan lives in
        # scripts/calibrate_aging.py
        spec = next(s for s in profiles.generate_campaign() if s.sim_id == "const_a1.00_t40")
        spec = dataclasses.replace(spec, max_duration=5000 * 3600.0, sample_period=60.0)
        trace = profiles.run_simulation(spec)
        assert trace.termination == "soh_floor"
        assert trace.time_s[-1] < 5000 * 3600.0
