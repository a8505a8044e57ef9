"""Acceptance criteria 1-12 on the Table I desk-scale scenario.

Each test prints one ``criterion N: PASS|FAIL`` line (visible in ``pytest -v``
output) before asserting, so a failing criterion still reports its numbers.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from nettrack._linalg import equilibrated_inverse, singular_ratio
from nettrack.beamform import beampattern, build_problem, fold_angle, solve, verify_span
from nettrack.fim import BeamPlan, measurement_info
from nettrack.harness import (fim_validation, genie_run, monte_carlo, plan_for, random_covariances,
                              random_state)
from nettrack.motion import model_for
from nettrack.pcrb import data_info
from nettrack.scenario import (BsConfig, RadioConfig, Scenario, TargetConfig, links, measurement_jacobian,
                               measurement_map)

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def _timed(fn, *a, **k):
    t0 = time.perf_counter()
    out = fn(*a, **k)
    return out, time.perf_counter() - t0


def test_c01_fim_closed_forms(scenario, report):
    rows, dt = _timed(fim_validation, scenario, 20, 0)
    worst = max(r[3] for r in rows)
    ok = worst < 1e-8 and dt < 10 and len({r[0] for r in rows}) == 21
    assert report(1, ok, f"max_rel_err={worst:.2e} cases={len({r[0] for r in rows})} time={dt:.1f}s")


def _fd_jacobian(x, sc):
    h0 = measurement_map(x, sc)
    J = np.zeros((len(h0), len(x)))
    for j in range(len(x)):
        step = max(1e-6, 1e-8 * abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        J[:, j] = (measurement_map(xp, sc) - measurement_map(xm, sc)) / (2 * step)
    return J


def test_c02_jacobian(scenario, report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        x = random_state(scenario, rng)
        H, F = measurement_jacobian(x, scenario), _fd_jacobian(x, scenario)
        # each measurement row judged against its own magnitude (units span many decades)
        scale = np.maximum(np.abs(F).max(axis=1, keepdims=True), 1e-300)
        worst = max(worst, float(np.max(np.abs(H - F) / scale)))
    dt = time.perf_counter() - t0
    assert report(2, worst < 1e-5 and dt < 5, f"max_rel_err={worst:.2e} time={dt:.1f}s")


def test_c03_bim_linearity(scenario, model, report):
    rng = np.random.default_rng(3)
    prob = build_problem(scenario.initial_state(), scenario, model, None, mode="full")
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        r1, r2 = random_covariances(scenario, rng), random_covariances(scenario, rng)
        a, b = rng.uniform(0.0, 2.0, 2)
        lhs = prob.direct_bim({key: a * r1[key] + b * r2[key] for key in r1})
        rhs = a * prob.direct_bim(r1) + b * prob.direct_bim(r2)
        d = np.sqrt(np.abs(np.diag(rhs)))
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.outer(d, d))))
    dt = time.perf_counter() - t0
    assert report(3, worst < 1e-9 and dt < 10, f"max_rel_err={worst:.2e} time={dt:.1f}s")


def _two_bs(target):
    radio = RadioConfig(num_subcarriers=2)
    bss = (BsConfig(position=(-50.0, 0.0), subcarriers=(0,)), BsConfig(position=(50.0, 0.0), subcarriers=(1,)))
    return Scenario(radio, bss, (TargetConfig(target, (1.0, 1.0)),))


def _jd_ratio(sc):
    x = sc.initial_state()
    info = measurement_info(x, sc, BeamPlan.isotropic(sc))
    return singular_ratio(data_info(measurement_jacobian(x, sc), info.fim))


def test_c04_collinearity(report):
    t0 = time.perf_counter()
    on = _jd_ratio(_two_bs((10.0, 0.0)))
    off = _jd_ratio(_two_bs((10.0, 60 * np.tan(np.deg2rad(5.0)))))
    dt = time.perf_counter() - t0
    ok = on < 1e-10 and off > 1e-8 and dt < 5
    assert report(4, ok, f"collinear={on:.2e} off_line={off:.2e} time={dt:.1f}s")


def test_c05_optimal_span(scenario, model, report):
    t0 = time.perf_counter()
    x = scenario.initial_state()
    full = build_problem(x, scenario, model, None, mode="full")
    # the span residual shrinks with the duality gap; 1e-8 brings it well under 1e-4
    sol_f = solve(full, replace(scenario.solver, gap_tol=1e-8))
    sol_r = solve(build_problem(x, scenario, model, None, mode="reduced"))
    dt = time.perf_counter() - t0
    span = max(verify_span(sol_f, full).values())
    rel = abs(sol_r.objective - sol_f.objective) / sol_f.objective
    ok = span < 1e-4 and rel < 1e-4 and dt < 120
    assert report(5, ok, f"max_span_residual={span:.2e} reduced_vs_full={rel:.2e} time={dt:.1f}s")


def test_c06_solver_soundness(genie, report):
    sols = [s for s in genie.solutions if s is not None]
    power = max(s.residuals["power_excess"] for s in sols)
    lmi = min(min(s.residuals["min_eig_ratio"], s.residuals["lmi_min_eig_ratio"]) for s in sols)
    worse = sum(s.objective > s.baseline_objective for s in sols)
    ok = len(sols) == 40 and power <= 1e-6 and lmi >= -1e-8 and worse == 0 and genie.elapsed < 300
    assert report(6, ok, f"blocks={len(sols)} max_power_excess={power:.2e} min_eig_ratio={lmi:.2e} "
                         f"above_isotropic={worse} time={genie.elapsed:.1f}s")


def test_c07_rmse_tracks_pcrb(scenario, genie, report):
    res, dt = _timed(monte_carlo, scenario, 200, "optimized", 2024, True, reference=genie)
    rx = res.rmse_x[9:40] / res.pcrb_x[9:40]
    rv = res.rmse_v[19:40] / res.pcrb_v[19:40]
    ok_x = bool(np.all((rx >= 0.8) & (rx <= 1.25)))
    ok_v = bool(np.all((rv >= 0.8) & (rv <= 1.4)))
    ok = ok_x and ok_v and dt < 600
    detail = (f"pos_ratio=[{rx.min():.3f},{rx.max():.3f}] out_of_band={int(np.sum((rx < 0.8) | (rx > 1.25)))}/{rx.size} "
              f"vel_ratio=[{rv.min():.3f},{rv.max():.3f}] out_of_band={int(np.sum((rv < 0.8) | (rv > 1.4)))}/{rv.size} "
              f"time={dt:.1f}s")
    assert report(7, ok, detail)


def test_c08_tracking_beats_snapshot(scenario, genie, report):
    t0 = time.perf_counter()
    Q = scenario.num_targets
    pos = np.r_[0:2 * Q]
    violations = 0
    worst = 0.0
    for n in range(1, scenario.num_blocks):
        x = genie.truth[n]
        info = measurement_info(x, scenario, genie.plans[n])
        jd = data_info(measurement_jacobian(x, scenario), info.fim)
        snap = np.diag(equilibrated_inverse(jd)[0])[pos]
        trk = np.diag(genie.bims[n].inverse())[pos]
        violations += int(np.sum(trk >= snap))
        worst = max(worst, float(np.max(trk / snap)))
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 60
    assert report(8, ok, f"violations={violations} max_tracking_over_snapshot={worst:.3f} time={dt:.1f}s")


def test_c09_mode_ordering(scenario, genie, report):
    focus = genie_run(scenario, "single-target-focus")
    iso = genie_run(scenario, "isotropic")
    f, o, i = (r.delta_x.mean(axis=0) for r in (focus, genie, iso))
    loss = o[0] / f[0]
    # "much smaller" is taken as at most half
    ok = f[0] < o[0] < i[0] and o[1] <= 0.5 * f[1] and 1.0 <= loss <= 1.5
    assert report(9, ok, f"target0 focus={f[0]:.4f} optimized={o[0]:.4f} isotropic={i[0]:.4f} loss={loss:.3f}; "
                         f"target1 optimized={o[1]:.4f} focus={f[1]:.4f}")


def test_c10_process_noise_monotone(scenario, genie, report):
    t0 = time.perf_counter()
    mus = [1e-3, 1e-2, 1e-1, 1.0]
    runs = [genie if mu == scenario.process_noise else genie_run(scenario.replace(process_noise=mu)) for mu in mus]
    dx = np.array([r.delta_x[-1] for r in runs])
    dv = np.array([r.delta_v[-1] for r in runs])
    dt = time.perf_counter() - t0
    ok = bool(np.all(np.diff(dx, axis=0) >= 0) and np.all(np.diff(dv, axis=0) >= 0)) and dt < 300
    assert report(10, ok, f"delta_x_q0={np.round(dx[:, 0], 5).tolist()} delta_v_q0={np.round(dv[:, 0], 5).tolist()} "
                          f"time={dt:.1f}s")


def _gain_db(plan, sc, k, angles):
    return 10 * np.log10(beampattern(plan, sc, k, np.atleast_1d(angles)))


def test_c11_association(scenario, genie, report):
    grid = np.deg2rad(np.arange(-90.0, 90.0 + 1e-9, 0.1))
    k = 2  # BS 3
    aod = fold_angle(np.atleast_1d(links(genie.truth[0], scenario)[k].aod))
    g = _gain_db(genie.plans[0], scenario, k, grid)
    peak = np.rad2deg(grid[np.argmax(g)])
    off = abs(peak - np.rad2deg(aod[0]))
    drop = g.max() - _gain_db(genie.plans[0], scenario, k, aod[1])[0]
    spread = []
    for kk, lk in enumerate(links(genie.truth[19], scenario)):
        gg = _gain_db(genie.plans[19], scenario, kk, fold_angle(np.atleast_1d(lk.aod)))
        spread.append(float(abs(gg[0] - gg[1])))
    ok = off <= 5.0 and drop >= 6.0 and max(spread) <= 3.0
    assert report(11, ok, f"block1 bs3_peak_offset={off:.2f}deg target2_drop={drop:.1f}dB; "
                          f"block20 max_gain_spread={max(spread):.2f}dB")


def _nearest_target(phi, aods, spacing):
    # neighborhoods by electrical angle, which wraps at endfire
    psi = 2 * np.pi * spacing * np.sin(np.r_[phi, aods])
    d = np.angle(np.exp(1j * (psi[1:] - psi[0])))
    return int(np.argmin(np.abs(d)))


def test_c12_weight_sweep(scenario, model, report):
    Q = scenario.num_targets
    x = scenario.initial_state()
    grid = np.deg2rad(np.arange(-90.0, 91.0, 1.0))
    lks = links(x, scenario)
    picks = {}
    for ratio in (1e-3, 1e3):
        w = np.zeros(scenario.state_layout.dim)
        w[:2 * Q] = 1.0
        w[2 * Q:4 * Q] = ratio
        plan, _ = plan_for("optimized", x, scenario, model, None, w)
        for k in (2, 3):
            bs = scenario.bss[k]
            phi = grid[np.argmax(beampattern(plan, scenario, k, grid))]
            sp = bs.spacing(scenario.radio) / scenario.radio.wavelength
            picks[(ratio, k)] = (np.rad2deg(phi), _nearest_target(phi, np.atleast_1d(lks[k].aod), sp))
    ok = (picks[(1e-3, 2)][1] == 0 and picks[(1e3, 2)][1] == 1
          and picks[(1e-3, 3)][1] == 1 and picks[(1e3, 3)][1] == 0)
    detail = " ".join(f"bs{k + 1}@{r:g}:{picks[(r, k)][0]:.0f}deg->target{picks[(r, k)][1] + 1}"
                      for k in (2, 3) for r in (1e-3, 1e3))
    assert report(12, ok, detail)
