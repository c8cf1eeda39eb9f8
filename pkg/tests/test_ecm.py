import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simsoh import constants as C
from simsoh import ecm
from simsoh.errors import DomainError, NumericError

CELL = ecm.CellParams()
T_REF = C.T_REF_K


def _interp_oracle(table, soc):
    """Plain-Python linear interpolation, independent of numpy and numba."""
    for (s0, v0), (s1, v1) in zip(table, table[1:]):
        if s0 <= soc <= s1:
            return v0 + (v1 - v0) * (soc - s0) / (s1 - s0)
    raise AssertionError("soc outside table")


def _run(params, state, current, t_amb, dt, steps):
    for _ in range(steps):
        state, _ = ecm.step(params, state, current, t_amb, dt)
    return state


class TestOcv:
    def test_endpoints(self):
        assert ecm.ocv(CELL, 0.0) == 3.00
        assert ecm.ocv(CELL, 1.0) == 4.20

    def test_midpoints_are_knot_means(self):
        table = C.DEFAULT_OCV_TABLE
        for (s0, v0), (s1, v1) in zip(table, table[1:]):
            assert ecm.ocv(CELL, (s0 + s1) / 2) == pytest.approx((v0 + v1) / 2, abs=1e-12)

    @given(st.floats(0.0, 1.0))
    def test_matches_interpolation_oracle(self, soc):
        assert ecm.ocv(CELL, soc) == pytest.approx(_interp_oracle(C.DEFAULT_OCV_TABLE, soc), abs=1e-12)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert ecm.ocv(CELL, lo) <= ecm.ocv(CELL, hi)

    @pytest.mark.parametrize("soc", [-0.01, 1.01, math.nan])
    def test_domain(self, soc):
        with pytest.raises(DomainError):
            ecm.ocv(CELL, soc)


class TestStep:
    def test_zero_input_equilibrium(self):
        state = ecm.BatteryState.initial(soc=0.55, temp_cell=T_REF)
        new, v = ecm.step(CELL.without_aging(), state, 0.0, T_REF, 1.0)
        assert v == ecm.ocv(CELL, 0.55)
        assert new.soc == state.soc and new.v_rc == 0.0 and new.temp_cell == T_REF
        assert new.capacity_loss == 0.0
        assert new.elapsed == 1.0

    def test_one_c_drains_in_one_hour(self):
        state = _run(CELL.without_aging(), ecm.BatteryState.initial(1.0), 27.0, T_REF, 1.0, 3600)
        assert state.soc == pytest.approx(0.0, abs=1e-9)

    def test_thermal_steady_state(self):
        # 27 A through 0.01 ohm with r_th = 3 K/W: 27^2 * 0.01 * 3 = 21.87 K rise.
        # SOC saturates at 0 after an hour; heating continues regardless.
        params = CELL.without_aging()
        state = _run(params, ecm.BatteryState.initial(1.0), 27.0, T_REF, 1.0, 40000)
        assert state.temp_cell - T_REF == pytest.approx(21.87, abs=0.1)

    def test_voltage_from_incoming_state(self):
        state = ecm.BatteryState(soc=0.7, v_rc=0.01, temp_cell=300.0, capacity_loss=0.2)
        _, v = ecm.step(CELL, state, 5.0, 300.0, 1.0)
        r0 = CELL.r0_init * (1 + CELL.aging.gamma_r_growth * 0.2)
        assert v == pytest.approx(ecm.ocv(CELL, 0.7) - 5.0 * r0 - 0.01, abs=1e-12)

    def test_euler_update(self):
        params = CELL.without_aging()
        state = ecm.BatteryState(soc=0.5, v_rc=0.02, temp_cell=300.0, capacity_loss=0.1)
        new, _ = ecm.step(params, state, 3.0, 295.0, 2.0)
        cap = 27.0 * 0.9
        r0 = 0.01 * 1.1
        assert new.soc == pytest.approx(0.5 - 3.0 * 2.0 / (3600 * cap), abs=1e-15)
        assert new.v_rc == pytest.approx(0.02 + 2.0 * (-0.02 / (0.015 * 2000) + 3.0 / 2000), abs=1e-15)
        assert new.temp_cell == pytest.approx(300.0 + 2.0 * (9 * r0 - 5.0 / 3.0) / 1100, abs=1e-12)

    def test_soc_saturates(self):
        state = ecm.BatteryState.initial(0.0005)
        new, _ = ecm.step(CELL, state, 27.0, T_REF, 60.0)
        assert new.soc == 0.0
        assert new.saturation_count == 1

    def test_deterministic(self):
        state = ecm.BatteryState.initial(0.8)
        a = _run(CELL, state, 2.0, 310.0, 1.0, 500)
        b = _run(CELL, state, 2.0, 310.0, 1.0, 500)
        assert a.to_vector().tobytes() == b.to_vector().tobytes()

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_non_finite(self, bad):
        with pytest.raises(NumericError):
            ecm.step(CELL, ecm.BatteryState.initial(), bad, T_REF, 1.0)

    def test_thermal_relaxation_monotone(self):
        state = ecm.BatteryState.initial(0.5, temp_cell=320.0)
        gaps = []
        for _ in range(2000):
            state, _ = ecm.step(CELL, state, 0.0, T_REF, 1.0)
            gaps.append(abs(state.temp_cell - T_REF))
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))

    def test_coulomb_consistency_square_wave(self):
        params = CELL.without_aging()
        state = ecm.BatteryState.initial(0.5)
        for _ in range(5):
            start = state.soc
            state = _run(params, state, 5.0, T_REF, 1.0, 900)
            state = _run(params, state, -5.0, T_REF, 1.0, 900)
            assert abs(state.soc - start) < 1e-9

    def test_capacity_loss_non_decreasing(self):
        state = ecm.BatteryState.initial(0.9)
        prev = 0.0
        for k in range(3000):
            current = 10.0 if (k // 400) % 2 == 0 else -10.0
            state, _ = ecm.step(CELL, state, current, 310.0, 1.0)
            assert state.capacity_loss >= prev
            prev = state.capacity_loss


class TestTrackCycle:
    def _feed(self, tracker, socs, current):
        records = []
        for soc in socs:
            tracker, rec = ecm.track_cycle(tracker, soc, current, T_REF)
            if rec is not None:
                records.append(rec)
        return tracker, records

    def test_discharge_forever_never_records(self):
        _, recs = self._feed(ecm.CycleTracker(), np.linspace(1.0, 0.0, 200), 2.0)
        assert recs == []

    def test_all_idle_never_records(self):
        _, recs = self._feed(ecm.CycleTracker(), np.full(50, 0.5), 0.0)
        assert recs == []

    def test_three_segment_profile(self):
        tr = ecm.CycleTracker()
        tr, r1 = self._feed(tr, np.linspace(1.0, 0.4, 61), 1.0)
        tr, r2 = self._feed(tr, np.linspace(0.4, 0.9, 51), -1.0)
        tr, r3 = self._feed(tr, [0.9], 1.0)
        recs = r1 + r2 + r3
        assert len(recs) == 1
        assert recs[0].dod == pytest.approx(0.6, abs=1e-12)
        assert recs[0].mean_abs_current == pytest.approx(1.0)
        assert recs[0].mean_temp == pytest.approx(T_REF)
        assert tr.phase == "discharging"


class TestAgingLaws:
    def test_calendar_zero_rate(self):
        assert ecm.calendar_loss(ecm.AgingParams(k_cal=0.0), 60.0, 0.5, T_REF, 100.0) == 0.0

    def test_calendar_closed_form(self):
        aging = ecm.AgingParams(k_cal=2e-4)
        assert ecm.calendar_loss(aging, 3600.0, 0.0, T_REF, 0.0) == pytest.approx(2e-4, rel=1e-12)

    def test_calendar_arrhenius(self):
        aging = ecm.AgingParams()
        assert ecm.calendar_loss(aging, 3600.0, 0.5, T_REF + 10, 0.0) > \
            ecm.calendar_loss(aging, 3600.0, 0.5, T_REF, 0.0)

    def test_calendar_domain(self):
        with pytest.raises(DomainError):
            ecm.calendar_loss(ecm.AgingParams(), 1.0, 0.5, 0.0, 0.0)

    @given(st.floats(0, 1e6), st.floats(1e-3, 1e4), st.floats(0, 1), st.floats(250, 340))
    def test_calendar_non_negative(self, elapsed, dt, soc, temp):
        assert ecm.calendar_loss(ecm.AgingParams(), dt, soc, temp, elapsed) >= 0.0

    def test_cycle_zero_dod(self):
        aging = ecm.AgingParams(alpha_dod=1.0)
        assert ecm.cycle_loss(aging, ecm.CycleRecord(0.0, 1.0, 0.5, T_REF), 27.0) == 0.0

    def test_cycle_unit_stress(self):
        aging = ecm.AgingParams()
        assert ecm.cycle_loss(aging, ecm.CycleRecord(1.0, 0.0, 0.5, T_REF), 27.0) == \
            pytest.approx(aging.k_cyc, rel=1e-12)

    def test_cycle_dod_ratio(self):
        aging = ecm.AgingParams(alpha_dod=2.0)
        a = ecm.cycle_loss(aging, ecm.CycleRecord(0.4, 1.0, 0.5, 300.0), 27.0)
        b = ecm.cycle_loss(aging, ecm.CycleRecord(0.8, 1.0, 0.5, 300.0), 27.0)
        assert b / a == pytest.approx(4.0, rel=1e-12)


class TestSoh:
    @pytest.mark.parametrize("loss,expected", [(0.0, 1.0), (0.25, 0.75), (1.2, 0.0)])
    def test_values(self, loss, expected):
        assert ecm.soh(ecm.BatteryState(capacity_loss=loss)) == expected


class TestCellConfig:
    def test_defaults_round_trip(self, tmp_path):
        path = tmp_path / "cell.cfg"
        path.write_text("r0_init_ohm = 0.02\nk_cyc = 0\n")
        params = ecm.load_cell_params(path)
        assert params.r0_init == 0.02
        assert params.aging.k_cyc == 0.0
        assert params.c1 == CELL.c1

    def test_rejects_non_monotone_table(self):
        with pytest.raises(DomainError):
            ecm.CellParams(ocv_table=((0.0, 3.0), (0.5, 2.9), (1.0, 4.2)))
