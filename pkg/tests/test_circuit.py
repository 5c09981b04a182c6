import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tibmux.circuit import (
    DB_FLOOR,
    FLUX_QUANTUM,
    REDUCED_FLUX_QUANTUM,
    DivergentInductance,
    FluxBias,
    SearchFailed,
    TibParams,
    array_inductance,
    arm_inductances,
    bridge_transmission,
    find_operating_points,
    squid_critical_current,
    sweep_map,
    tib_transmission,
)

REFERENCE = TibParams(junction_critical_current=6.5e-6, squids_per_array=20)


def test_flux_quantum_relation():
    assert FLUX_QUANTUM == pytest.approx(2 * math.pi * REDUCED_FLUX_QUANTUM, rel=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"junction_critical_current": 0.0},
        {"squids_per_array": 0},
        {"line_impedance": -50.0},
        {"geometric_inductance": -1e-12},
    ],
)
def test_params_reject_invalid(kwargs):
    with pytest.raises(ValueError):
        TibParams(**kwargs)


class TestSquidCriticalCurrent:
    def test_zero_flux_gives_twice_junction_current(self):
        assert squid_critical_current(6.5e-6, 0.0) == 13e-6

    def test_frustration(self):
        assert squid_critical_current(6.5e-6, FLUX_QUANTUM / 2) == pytest.approx(0.0, abs=1e-20)

    def test_quarter_radian(self):
        # flux/(2*phi0) = 0.25 rad; hand evaluation 13 uA * cos(0.25)
        flux = FLUX_QUANTUM * 0.25 / math.pi
        assert squid_critical_current(6.5e-6, flux) == pytest.approx(1.259586148223838e-05, rel=1e-12)

    def test_periodic_in_flux_quantum(self):
        flux = np.linspace(-2, 2, 101) * FLUX_QUANTUM
        np.testing.assert_allclose(
            squid_critical_current(6.5e-6, flux + FLUX_QUANTUM),
            squid_critical_current(6.5e-6, flux),
            atol=1e-18,
        )


class TestArrayInductance:
    def test_minimum_inductance(self):
        assert array_inductance(REFERENCE, 13e-6) == pytest.approx(0.506e-9, rel=1e-3)

    def test_identity_scaling(self):
        params = TibParams(squids_per_array=1)
        current = REDUCED_FLUX_QUANTUM / 1e-9
        assert array_inductance(params, current) == pytest.approx(1e-9, rel=1e-14)

    def test_half_current_doubles(self):
        assert array_inductance(REFERENCE, 6.5e-6) == pytest.approx(1.012633779924472e-09, rel=1e-12)
        assert array_inductance(REFERENCE, 6.5e-6) == pytest.approx(2 * array_inductance(REFERENCE, 13e-6), rel=1e-14)

    def test_geometric_inductance_adds(self):
        params = TibParams(geometric_inductance=0.1e-9)
        assert array_inductance(params, 13e-6) == pytest.approx(array_inductance(REFERENCE, 13e-6) + 0.1e-9)

    def test_divergence_raises(self):
        with pytest.raises(DivergentInductance):
            array_inductance(REFERENCE, REFERENCE.current_floor)
        with pytest.raises(DivergentInductance):
            array_inductance(REFERENCE, 0.0)

    def test_strictly_decreasing(self):
        currents = np.linspace(0.01, 1, 500) * REFERENCE.max_critical_current
        assert np.all(np.diff(array_inductance(REFERENCE, currents)) < 0)


class TestArmInductances:
    def test_balanced_at_zero_delta(self):
        l1, l2 = arm_inductances(REFERENCE, FluxBias(0.13, 0.0))
        assert l1 == l2

    @pytest.mark.parametrize("x", [0.05, 0.2, 0.37, -0.3])
    def test_balanced_at_zero_sigma(self, x):
        l1, l2 = arm_inductances(REFERENCE, FluxBias(0.0, x))
        assert l1 == pytest.approx(l2, rel=1e-14)

    def test_against_cosine_form(self):
        # L = l / |cos((sigma +- delta)/2phi0)| with l = (N/2) phi0 / I0, evaluated by hand
        l1, l2 = arm_inductances(REFERENCE, FluxBias(0.13, 0.10))
        assert l1 > l2
        assert l1 == pytest.approx(6.749892255445207e-10, rel=1e-12)
        assert l2 == pytest.approx(5.085739591950956e-10, rel=1e-12)

    def test_divergence_names_arm(self):
        with pytest.raises(DivergentInductance) as info:
            arm_inductances(REFERENCE, FluxBias(0.25, 0.25))
        assert info.value.arm == "l1"
        with pytest.raises(DivergentInductance) as info:
            arm_inductances(REFERENCE, FluxBias(0.25, -0.25))
        assert info.value.arm == "l2"


class TestBridgeTransmission:
    def test_null_when_balanced(self):
        assert bridge_transmission(1e-9, 1e-9, 6e9) == 0

    def test_complex_arithmetic_oracle(self):
        w = 2 * math.pi * 6e9
        a = complex(0, w * 0.5e-9) + 50
        b = complex(0, w * 2e-9) + 50
        expected = complex(0, w * (0.5e-9 - 2e-9) * 50) / (a * b)
        t = bridge_transmission(0.5e-9, 2e-9, 6e9, 50.0)
        assert t == pytest.approx(expected, rel=1e-14)
        assert abs(t) == pytest.approx(0.585, abs=5e-4)

    def test_swap_flips_phase(self):
        t = bridge_transmission(0.5e-9, 2e-9, 6e9)
        s = bridge_transmission(2e-9, 0.5e-9, 6e9)
        assert abs(s) == abs(t)
        assert math.degrees(abs(np.angle(s / t))) == pytest.approx(180.0, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0, 1e-6, allow_nan=False),
        st.floats(0, 1e-6, allow_nan=False),
        st.floats(1e6, 1e11),
        st.floats(1, 500),
    )
    def test_antisymmetric_and_passive(self, l1, l2, f, z0):
        t = bridge_transmission(l1, l2, f, z0)
        assert t == -bridge_transmission(l2, l1, f, z0)
        assert abs(t) <= 1 + 1e-12


class TestTibTransmission:
    def test_reflect_mode(self):
        for s in (0.0, 0.13, 0.25, 0.4):
            assert tib_transmission(REFERENCE, FluxBias(s, 0.0), 5.88e9).value == 0

    def test_invert_is_negation(self):
        t = tib_transmission(REFERENCE, FluxBias(0.13, 0.2), 5.88e9).value
        s = tib_transmission(REFERENCE, FluxBias(0.13, -0.2), 5.88e9).value
        assert s == -t

    def test_flux_periodicity(self):
        base = tib_transmission(REFERENCE, FluxBias(0.13, 0.2), 6e9).value
        for bias in (FluxBias(1.13, 0.2), FluxBias(0.13, 1.2), FluxBias(-0.87, -0.8)):
            assert tib_transmission(REFERENCE, bias, 6e9).value == pytest.approx(base, rel=1e-12)

    def test_grid_search_maximum(self):
        # dense-grid oracle: the brightest point lies where arm l1 approaches frustration
        grid = np.linspace(0, 0.5, 10001)[1:-1]
        powers = []
        for x in grid:
            try:
                powers.append(tib_transmission(REFERENCE, FluxBias(0.13, x), 5.88e9).power)
            except DivergentInductance:
                powers.append(np.nan)
        powers = np.array(powers)
        k = np.nanargmax(powers)
        assert grid[k] == pytest.approx(0.37, abs=1e-3)
        assert 10 * np.log10(powers[k]) == pytest.approx(-1.0257, abs=1e-3)


class TestSweepMap:
    def test_zero_column_floored(self):
        m = sweep_map(REFERENCE, 0.13, np.linspace(4e9, 8e9, 5), np.linspace(-0.4, 0.4, 9))
        col = list(m.phi_deltas).index(0.0)
        assert np.all(m.power_db[:, col] == DB_FLOOR)
        assert np.all(m.floored[:, col])
        assert np.all(np.isfinite(m.power_db))

    def test_symmetric_in_phi_delta(self):
        m = sweep_map(REFERENCE, 0.19, np.linspace(4e9, 8e9, 7), np.linspace(-0.45, 0.45, 19))
        np.testing.assert_allclose(m.power_db, m.power_db[:, ::-1], atol=1e-9)

    def test_divergent_cells_flagged_not_raised(self):
        m = sweep_map(REFERENCE, 0.25, [6e9], [0.0, 0.25, -0.25])
        assert m.divergent.tolist() == [[False, True, True]]
        assert np.all(np.isfinite(m.power_db))

    def test_transmit_lobe_tracks_coil_flux(self):
        # The bright point follows phi_delta = 1/2 - phi_sigma and widens as phi_sigma grows.
        deltas = np.linspace(0, 0.5, 2001)
        freqs = np.linspace(4e9, 8e9, 9)
        peaks, widths = [], []
        for s in (0.13, 0.19, 0.25):
            m = sweep_map(REFERENCE, s, freqs, deltas)
            row = m.power_db[4]
            peaks.append(deltas[np.argmax(row)])
            widths.append(np.count_nonzero(row > row.max() - 3) * (deltas[1] - deltas[0]))
        np.testing.assert_allclose(peaks, [0.37, 0.31, 0.25], atol=2e-3)
        assert widths[0] < widths[1] < widths[2]

    def test_normalized_rows_peak_at_zero_db(self):
        m = sweep_map(REFERENCE, 0.13, np.linspace(4e9, 8e9, 5), np.linspace(0, 0.5, 101), normalize=True)
        np.testing.assert_allclose(m.power_db.max(axis=1), 0.0, atol=1e-12)

    def test_csv_layout(self, tmp_path):
        m = sweep_map(REFERENCE, 0.13, [4e9, 8e9], [-0.1, 0.0, 0.1])
        path = tmp_path / "map.csv"
        m.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "frequency_ghz,-0.1,0.0,0.1"
        assert lines[1].split(",")[0] == "4.0"
        assert float(lines[2].split(",")[2]) == DB_FLOOR

    def test_rejects_empty_grid(self):
        with pytest.raises(ValueError):
            sweep_map(REFERENCE, 0.13, [], [0.1])


class TestOperatingPoints:
    @pytest.mark.parametrize("f", [4e9, 5.88e9, 6e9, 8e9])
    @pytest.mark.parametrize("s", [0.13, 0.19, 0.3])
    def test_symmetry_and_zero_imbalance(self, f, s):
        op = find_operating_points(REFERENCE, s, f)
        assert op.phi_delta_invert == -op.phi_delta_transmit
        assert op.phi_delta_reflect == 0.0
        assert op.phase_imbalance_deg == 0.0
        assert op.on_off_ratio_db == pytest.approx(op.transmit_power_db - DB_FLOOR)

    def test_matches_dense_grid_oracle(self):
        grid = np.linspace(0, 0.5, 10001)
        m = sweep_map(REFERENCE, 0.13, [6e9], grid)
        op = find_operating_points(REFERENCE, 0.13, 6e9)
        assert op.phi_delta_transmit == pytest.approx(grid[np.argmax(m.power_db[0])], abs=1e-4)
        assert op.transmit_power_db >= m.power_db.max() - 1e-6

    @pytest.mark.parametrize("s", [0.0, 0.5])
    def test_flat_map_fails(self, s):
        with pytest.raises(SearchFailed):
            find_operating_points(REFERENCE, s, 6e9)


def test_device_constants():
    assert REFERENCE.max_critical_current == 13e-6
    assert REFERENCE.min_inductance == pytest.approx(0.5e-9, rel=0.02)
