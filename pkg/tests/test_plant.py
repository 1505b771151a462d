import math

import pytest
from hypothesis import given, strategies as st

from sensorless_pfc.plant import (
    PlantParams,
    PlantState,
    apply_current_limit,
    input_voltage,
    plant_derivative,
    stored_energy,
)

P = PlantParams.nominal()


def test_nominal_values():
    assert P.L == 2.13e-3 and P.C == 1100e-6
    assert P.G == pytest.approx(1 / 87)
    assert P.E == 150 and P.omega == pytest.approx(100 * math.pi)
    assert P.rho == pytest.approx(2 * math.pi / 3)
    assert P.period == pytest.approx(0.02)


@pytest.mark.parametrize("bad", [dict(L=0.0), dict(C=-1.0), dict(G=0.0), dict(r=-0.1), dict(E=0.0),
                                 dict(omega=math.nan), dict(i_limit=0.0)])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        PlantParams.nominal(**bad)


def test_derivative_at_rest_is_source_drive():
    t = 0.003
    d = plant_derivative(PlantState(0.0, 0.0), 0.0, t, P)
    assert d.i == pytest.approx(input_voltage(t, P) / P.L)
    assert d.v == 0.0


def test_capacitor_discharges_through_load():
    d = plant_derivative(PlantState(0.0, 200.0), 0.0, 0.0, P)
    assert d.v == pytest.approx(-P.G * 200.0 / P.C)


def test_non_finite_input_raises():
    with pytest.raises(ValueError):
        plant_derivative(PlantState(math.nan, 1.0), 0.0, 0.0, P)
    with pytest.raises(ValueError):
        plant_derivative(PlantState(0.0, 1.0), math.inf, 0.0, P)


@given(i=st.floats(-20, 20), v=st.floats(0, 400), u=st.floats(-1, 1), t=st.floats(0, 1))
def test_energy_balance(i, v, u, t):
    """dW/dt equals source power minus resistive and load losses; u only moves energy around."""
    s = PlantState(i, v)
    d = plant_derivative(s, u, t, P)
    dW = P.L * i * d.i + P.C * v * d.v
    expected = input_voltage(t, P) * i - P.r * i * i - P.G * v * v
    assert dW == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_current_limit_clamps_only_current():
    lim = PlantParams.nominal(i_limit=14.0)
    assert apply_current_limit(PlantState(20.0, 150.0), lim) == PlantState(14.0, 150.0)
    assert apply_current_limit(PlantState(-20.0, 150.0), lim) == PlantState(-14.0, 150.0)
    assert apply_current_limit(PlantState(5.0, 150.0), lim) == PlantState(5.0, 150.0)
    assert apply_current_limit(PlantState(50.0, 1.0), P) == PlantState(50.0, 1.0)


def test_stored_energy():
    assert stored_energy(PlantState(2.0, 100.0), P) == pytest.approx(0.5 * P.L * 4 + 0.5 * P.C * 1e4)
