import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nettrack.scenario import (BsConfig, ConfigError, DegenerateLinkError, GlobalState, RadioConfig,
                               SPEED_OF_LIGHT, link_coefficient, link_geometry, load_scenario,
                               measurement_jacobian, measurement_map, mirror_permutation,
                               scenario_from_dict, table1_path)

RADIO = RadioConfig()
BS0 = BsConfig(position=(-50.0, 0.0), subcarriers=(0, 4))

# Independently evaluated with the math module for BS (-50, 0), target (-45, 95), v = (2.1, -2.1).
THETA = 0.05258306161094172
RANGE = 95.13148795220224
DELAY = 6.346489740726048e-07
DOPPLER = 39.761985447421765
COEFF = 7.838556137277546e-07


def test_radio_wavelength():
    assert RADIO.wavelength * RADIO.carrier_frequency == pytest.approx(SPEED_OF_LIGHT, rel=1e-12)
    assert RADIO.wavelength == pytest.approx(0.09993081933333334, rel=1e-12)


def test_link_geometry_table1_values():
    lk = link_geometry(BS0, (-45.0, 95.0), (2.1, -2.1), RADIO)
    assert lk.aoa == pytest.approx(THETA, rel=1e-12)
    assert lk.range == pytest.approx(RANGE, rel=1e-12)
    assert lk.delay == pytest.approx(DELAY, rel=1e-12)
    assert lk.doppler == pytest.approx(DOPPLER, rel=1e-12)
    assert lk.delay == 2 * lk.range / SPEED_OF_LIGHT


def test_link_coefficient_value_and_laws():
    bs = BsConfig(position=(-50.0, 0.0), subcarriers=(0,), tx_power=10.0)
    assert link_coefficient(bs, RANGE, 1.0, RADIO) == pytest.approx(COEFF, rel=1e-12)
    assert link_coefficient(bs, RANGE, 0.0, RADIO) == 0.0
    assert link_coefficient(bs, 2 * RANGE, 1.0, RADIO) == pytest.approx(COEFF / 4, rel=1e-14)
    with pytest.raises(DegenerateLinkError):
        link_coefficient(bs, 0.0, 1.0, RADIO)


def test_geometry_special_cases():
    assert link_geometry(BS0, (-50.0, 10.0), (0.0, 0.0), RADIO).aoa == 0.0
    assert link_geometry(BS0, (3.0, -7.0), (0.0, 0.0), RADIO).doppler == 0.0
    with pytest.raises(DegenerateLinkError):
        link_geometry(BS0, (-50.0, 0.0), (1.0, 0.0), RADIO)


def test_aod_follows_inclines():
    bs = BsConfig(position=(0.0, 0.0), subcarriers=(0,), rx_incline=0.3, tx_incline=-0.2)
    lk = link_geometry(bs, (10.0, 20.0), (0.0, 0.0), RADIO)
    assert lk.aoa == pytest.approx(math.atan2(10, 20) + 0.3)
    assert lk.aod == lk.aoa - 0.3 - 0.2


@settings(max_examples=50, deadline=None)
@given(st.floats(-200, 200), st.floats(-200, 200), st.floats(0.01, 100))
def test_angle_scale_invariance(dx, dy, s):
    if math.hypot(dx, dy) < 1e-3:
        return
    bs = BsConfig(position=(0.0, 0.0), subcarriers=(0,))
    a = link_geometry(bs, (dx, dy), (0, 0), RADIO)
    b = link_geometry(bs, (s * dx, s * dy), (0, 0), RADIO)
    assert b.aoa == pytest.approx(a.aoa, abs=1e-12)
    assert b.range == pytest.approx(s * a.range, rel=1e-12)
    assert b.delay == pytest.approx(s * a.delay, rel=1e-12)


def test_table1_loads(scenario):
    assert scenario.num_bs == 4 and scenario.num_targets == 2
    assert scenario.state_layout.dim == 24
    assert scenario.bss[0].subcarriers == (0, 4)
    assert scenario.bss[0].tx_power == pytest.approx(10.0)
    u = measurement_map(scenario.initial_state(), scenario)
    assert u.shape == (40,)
    assert u[0] == pytest.approx(THETA, rel=1e-12)
    assert len(scenario.source_hash) == 64


def test_layout_roundtrip(scenario):
    ml = scenario.measurement_layout
    for i in range(ml.dim):
        assert ml.index(*ml.unravel(i)) == i
    vec = np.arange(24.0)
    st_ = GlobalState.from_vector(vec, 2, 4)
    np.testing.assert_array_equal(st_.to_vector(), vec)


def test_zero_velocity_zero_doppler(scenario):
    x = scenario.initial_state()
    x[4:8] = 0
    u = measurement_map(x, scenario)
    ml = scenario.measurement_layout
    assert all(u[ml.index(k, 2, q)] == 0 for k in range(4) for q in range(2))


def _fd_jacobian(x, scenario):
    h0 = measurement_map(x, scenario)
    J = np.zeros((len(h0), len(x)))
    for j in range(len(x)):
        step = max(1e-6, 1e-8 * abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (measurement_map(xp, scenario) - measurement_map(xm, scenario)) / (2 * step)
    return J


def _rel_err(A, B):
    # row-wise scale so every measurement type is judged against its own magnitude
    scale = np.maximum(np.abs(B).max(axis=1, keepdims=True), 1e-300)
    return np.max(np.abs(A - B) / scale)


def test_jacobian_matches_finite_differences(scenario):
    x = scenario.initial_state()
    H = measurement_jacobian(x, scenario)
    assert _rel_err(H, _fd_jacobian(x, scenario)) < 1e-5
    ml, sl = scenario.measurement_layout, scenario.state_layout
    for k in range(4):
        for q in range(2):
            row = ml.index(k, 0, q)
            assert H[row, sl.vel_x(q)] == 0 and H[row, sl.vel_y(q)] == 0
            p = scenario.bss[k].position
            dx, dy = x[q] - p[0], x[2 + q] - p[1]
            assert H[ml.index(k, 1, q), q] == pytest.approx(2 / SPEED_OF_LIGHT * dx / math.hypot(dx, dy))


def test_mirror_symmetry(scenario):
    x = scenario.initial_state()
    sp, ss, mp, ms = mirror_permutation(scenario, [1, 0, 3, 2], [1, 0])
    xm = ss * x[sp]
    np.testing.assert_allclose(measurement_map(xm, scenario), ms * measurement_map(x, scenario)[mp],
                               rtol=1e-12, atol=1e-20)


def _base_cfg():
    return {
        "radio": {"num_subcarriers": 2},
        "bs": [{"position": [0.0, 0.0]}, {"position": [10.0, 0.0]}],
        "target": [{"position": [5.0, 5.0], "velocity": [0.0, 1.0]}],
    }


def test_config_defaults_interleave():
    sc = scenario_from_dict(_base_cfg())
    assert sc.bss[0].subcarriers == (0,) and sc.bss[1].subcarriers == (1,)


@pytest.mark.parametrize("mutate, field", [
    (lambda c: c["radio"].update(noise_power=-1.0), "radio.noise_power"),
    (lambda c: c["bs"][1].update(position=[1.0]), "bs[1].position"),
    (lambda c: c["bs"][0].update(subcarriers=[0, 1]), "bs[1].subcarriers"),
    (lambda c: c["bs"][0].update(colour="red"), "bs[0].colour"),
    (lambda c: c["target"][0].pop("velocity"), "target[0].velocity"),
    (lambda c: c.update(weights={"vector": [1.0]}), "weights.vector"),
    (lambda c: c.update(solver={"mode": "fast"}), "solver.mode"),
])
def test_config_errors_name_field(mutate, field):
    cfg = _base_cfg()
    mutate(cfg)
    with pytest.raises(ConfigError) as info:
        scenario_from_dict(cfg)
    assert info.value.field == field


def test_bad_toml(tmp_path):
    p = tmp_path / "x.scenario"
    p.write_text("[radio\n")
    with pytest.raises(ConfigError):
        load_scenario(p)


def test_bundled_path_exists():
    assert table1_path().is_file()
