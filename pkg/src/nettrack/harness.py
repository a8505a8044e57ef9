"""End-to-end simulation: truth, CRB-level measurements, tracking, PCRB and beam updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericalError, psd_factor
from .beamform import SdpSolution, optimize_beams
from .fim import BeamPlan, fim_closed_thetatau, fim_closed_xixi, fim_general, measurement_info
from .motion import MotionModel, model_for, trajectory
from .nkf import TrackState, run_block
from .pcrb import Bim, accuracy, bim_step
from .scenario import (BsConfig, GlobalState, LinkParams, RadioConfig, Scenario, links, measurement_jacobian,
                       measurement_map, steering_vector)

MODES = ("optimized", "isotropic", "single-target-focus")


class BlockError(RuntimeError):
    """A numerical failure inside the per-block loop."""

    def __init__(self, block: int, cause: Exception):
        super().__init__(f"block {block}: {cause}")
        self.block = block
        self.cause = cause


# --------------------------------------------------------------------------- synthesis

def synthesize_measurement(state: np.ndarray, Ru: np.ndarray, rng: np.random.Generator,
                           scenario: Scenario) -> np.ndarray:
    """``h(state) + w`` with ``w ~ N(0, R_u)``."""
    mean = measurement_map(state, scenario)
    F = psd_factor(Ru)
    return mean + F @ rng.standard_normal(F.shape[1])


def _cov_root(R: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (R + R.conj().T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def echo_from_links(bs: BsConfig, link: LinkParams, roots, symbols: np.ndarray, radio: RadioConfig) -> np.ndarray:
    """Noise-free echo ``y[i, j, :]`` for subcarrier ``m = bs.subcarriers[j]``.

    ``roots[j]`` is any ``B`` with ``B B^H = R_{k,m}`` and ``symbols[i, j]`` the
    transmitted symbol vectors of matching width.
    """
    lam = radio.wavelength
    d = bs.spacing(radio)
    ar = np.atleast_2d(steering_vector(np.atleast_1d(link.aoa), bs.num_rx, d, lam))
    at = np.atleast_2d(steering_vector(np.atleast_1d(link.aod), bs.num_tx, d, lam))
    xi = np.atleast_1d(link.coeff)
    I = symbols.shape[0]
    i = np.arange(I)
    out = np.zeros((I, len(bs.subcarriers), bs.num_rx), dtype=complex)
    for j, m in enumerate(bs.subcarriers):
        x = symbols[:, j] @ roots[j].T  # (I, N_T) transmitted snapshots
        for q in range(len(xi)):
            ph = xi[q] * np.exp(2j * np.pi * np.atleast_1d(link.doppler)[q] * i * radio.symbol_interval) \
                * np.exp(2j * np.pi * m * radio.subcarrier_spacing * np.atleast_1d(link.delay)[q])
            out[:, j] += (ph * (x @ at[q].conj()))[:, None] * ar[q][None, :]
    return out


def synthesize_echo(state: np.ndarray, plan: BeamPlan, rng: np.random.Generator, scenario: Scenario,
                    noise: bool = True) -> list[np.ndarray]:
    """Raw frequency-domain echo per BS, shape ``(I, M, N_R)``.

    Subcarriers outside a BS's allocation carry nothing (not even noise) since
    that BS never processes them.
    """
    radio = scenario.radio
    out = []
    for k, (bs, lk) in enumerate(zip(scenario.bss, links(state, scenario))):
        roots = [_cov_root(r) for r in plan.for_bs(k, bs)]
        I, nt = radio.num_symbols_per_block, bs.num_tx
        sym = (rng.standard_normal((I, len(roots), nt)) + 1j * rng.standard_normal((I, len(roots), nt))) / np.sqrt(2)
        y = echo_from_links(bs, lk, roots, sym, radio)
        if noise:
            y = y + np.sqrt(radio.noise_power / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        full = np.zeros((I, radio.num_subcarriers, bs.num_rx), dtype=complex)
        full[:, list(bs.subcarriers)] = y
        out.append(full)
    return out


# --------------------------------------------------------------------------- records

@dataclass
class BlockRecord:
    n: int
    truth: np.ndarray
    prediction: np.ndarray
    posterior: np.ndarray
    delta_x: np.ndarray
    delta_v: np.ndarray
    err_x: np.ndarray
    err_v: np.ndarray
    plan: BeamPlan = field(repr=False)
    solver: dict | None = None


@dataclass
class GenieRun:
    """Beams and PCRB computed along the noise-free trajectory."""

    truth: np.ndarray
    plans: list[BeamPlan]
    bims: list[Bim]
    delta_x: np.ndarray  # (N, Q)
    delta_v: np.ndarray
    solutions: list[SdpSolution | None]


@dataclass
class CampaignResult:
    rmse_x: np.ndarray  # (N, Q)
    rmse_v: np.ndarray
    pcrb_x: np.ndarray
    pcrb_v: np.ndarray
    trials: int
    seed: int
    mode: str
    first: list[BlockRecord] = field(default_factory=list, repr=False)  # records of trial 0


def _position_errors(est: np.ndarray, truth: np.ndarray, Q: int) -> tuple[np.ndarray, np.ndarray]:
    ex = np.hypot(est[:Q] - truth[:Q], est[Q:2 * Q] - truth[Q:2 * Q])
    ev = np.hypot(est[2 * Q:3 * Q] - truth[2 * Q:3 * Q], est[3 * Q:4 * Q] - truth[3 * Q:4 * Q])
    return ex, ev


def _solver_summary(sol: SdpSolution | None) -> dict | None:
    if sol is None:
        return None
    return {"objective": sol.objective, "baseline": sol.baseline_objective, "outer": sol.outer_iterations,
            "newton": sol.newton_iterations, "gap": sol.gap, "converged": sol.converged, **sol.residuals}


def plan_for(mode: str, state: np.ndarray, scenario: Scenario, model: MotionModel, prev_bim,
             weights=None) -> tuple[BeamPlan, SdpSolution | None]:
    """Beam plan for the block whose predicted state is ``state``."""
    if mode == "isotropic":
        return BeamPlan.isotropic(scenario), None
    if mode == "single-target-focus":
        return BeamPlan.focused(scenario, [float(np.atleast_1d(lk.aod)[0]) for lk in links(state, scenario)]), None
    if mode == "optimized":
        plan, sol, _ = optimize_beams(state, scenario, model, prev_bim, weights)
        return plan, sol
    raise ValueError(f"unknown mode {mode!r}")


def truth_trajectory(scenario: Scenario, model: MotionModel, rng: np.random.Generator | None = None) -> np.ndarray:
    noisy = rng if scenario.truth_process_noise else None
    return trajectory(scenario.initial_state(), model, scenario.num_blocks, noisy)


def genie_run(scenario: Scenario, mode: str = "optimized", model: MotionModel | None = None,
              weights=None, num_blocks: int | None = None) -> GenieRun:
    """PCRB recursion with prediction = noise-free truth; beams optimized along the way."""
    model = model or model_for(scenario)
    N = num_blocks or scenario.num_blocks
    truth = trajectory(scenario.initial_state(), model, N)
    Q = scenario.num_targets
    plans, bims, sols = [], [], []
    dx, dv = np.zeros((N, Q)), np.zeros((N, Q))
    prev = None
    for n in range(N):
        try:
            plan, sol = plan_for(mode, truth[n], scenario, model, prev, weights)
            info = measurement_info(truth[n], scenario, plan)
            bim = bim_step(prev, model, measurement_jacobian(truth[n], scenario), info.fim, n)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            raise BlockError(n, exc) from exc
        for q in range(Q):
            dx[n, q], dv[n, q] = accuracy(bim, Q, q)
        plans.append(plan)
        bims.append(bim)
        sols.append(sol)
        prev = bim.matrix
    return GenieRun(truth, plans, bims, dx, dv, sols)


def run_scenario(scenario: Scenario, mode: str, rng: np.random.Generator,
                 plans: list[BeamPlan] | None = None, model: MotionModel | None = None,
                 weights=None) -> list[BlockRecord]:
    """Closed-loop run: track each block, then plan the next block's beams.

    If ``plans`` is given (genie beams) they are used as-is and no optimization
    happens inside the loop.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    model = model or model_for(scenario)
    Q = scenario.num_targets
    truth = truth_trajectory(scenario, model, rng)
    P0 = scenario.initial_covariance()
    x0 = truth[0] + rng.multivariate_normal(np.zeros(len(P0)), P0, method="eigh")
    track = TrackState(x0, P0, 0)
    prev = None
    records = []
    plan, sol = (plans[0], None) if plans is not None else plan_for(mode, x0, scenario, model, None, weights)
    for n in range(scenario.num_blocks):
        try:
            true_info = measurement_info(truth[n], scenario, plan)
            meas = synthesize_measurement(truth[n], true_info.cov, rng, scenario)
            pred_info = measurement_info(track.estimate, scenario, plan)
            post, nxt = run_block(track, meas, pred_info.cov, scenario, model)
            bim = bim_step(prev, model, measurement_jacobian(track.estimate, scenario), pred_info.fim, n)
            dxv = [accuracy(bim, Q, q) for q in range(Q)]
            ex, ev = _position_errors(post.estimate, truth[n], Q)
            records.append(BlockRecord(n, truth[n], track.estimate, post.estimate,
                                       np.array([d[0] for d in dxv]), np.array([d[1] for d in dxv]),
                                       ex, ev, plan, _solver_summary(sol)))
            prev = bim.matrix
            track = nxt
            if n + 1 < scenario.num_blocks:
                if plans is not None:
                    plan, sol = plans[n + 1], None
                else:
                    plan, sol = plan_for(mode, nxt.estimate, scenario, model, prev, weights)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            raise BlockError(n, exc) from exc
    return records


def trial_generators(seed: int, trials: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def monte_carlo(scenario: Scenario, trials: int, mode: str = "optimized", seed: int = 0,
                genie: bool = True, model: MotionModel | None = None, weights=None,
                reference: GenieRun | None = None) -> CampaignResult:
    """RMSE over independent trials, paired with the genie-trajectory PCRB."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    model = model or model_for(scenario)
    ref = reference or genie_run(scenario, mode, model, weights)
    N, Q = scenario.num_blocks, scenario.num_targets
    sx, sv = np.zeros((N, Q)), np.zeros((N, Q))
    first = None
    for rng in trial_generators(seed, trials):
        recs = run_scenario(scenario, mode, rng, ref.plans if genie else None, model, weights)
        first = first or recs
        for r in recs:
            sx[r.n] += r.err_x ** 2
            sv[r.n] += r.err_v ** 2
    return CampaignResult(np.sqrt(sx / trials), np.sqrt(sv / trials), ref.delta_x, ref.delta_v,
                          trials, seed, mode, first)


def random_covariances(scenario: Scenario, rng: np.random.Generator) -> dict:
    """Random PSD covariances scaled to each BS's power budget."""
    out = {}
    for k, bs in enumerate(scenario.bss):
        mats = []
        for _ in bs.subcarriers:
            A = rng.standard_normal((bs.num_tx, bs.num_tx)) + 1j * rng.standard_normal((bs.num_tx, bs.num_tx))
            mats.append(A @ A.conj().T)
        total = sum(np.trace(m).real for m in mats)
        for m, R in zip(bs.subcarriers, mats):
            out[(k, m)] = R * bs.tx_power / total
    return out


def random_state(scenario: Scenario, rng: np.random.Generator, extent: float = 100.0) -> np.ndarray:
    """Targets uniform over the BS bounding box (padded), velocities N(0, 2^2), unit-modulus ERCS."""
    pos = np.array([bs.position for bs in scenario.bss])
    lo, hi = pos.min(0) - 0.1 * extent, pos.max(0) + 0.1 * extent
    Q, K = scenario.num_targets, scenario.num_bs
    while True:
        p = rng.uniform(lo, hi, size=(Q, 2))
        if np.min(np.linalg.norm(p[:, None] - pos[None], axis=-1)) > 1.0:
            break
    v = 2.0 * rng.standard_normal((Q, 2))
    ercs = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(K, Q)))
    return GlobalState(p, v, ercs).to_vector()


def fim_validation(scenario: Scenario, geometries: int = 20, seed: int = 0) -> list[tuple]:
    """Closed-form vs general FIM relative errors: ``(case, k, block, rel_err)`` rows."""
    rng = np.random.default_rng(seed)
    Q = scenario.num_targets
    rows = []
    cases = [("table1", scenario.initial_state(), BeamPlan.isotropic(scenario).covariances)]
    for g in range(geometries):
        cases.append((f"random{g}", random_state(scenario, rng), random_covariances(scenario, rng)))
    for name, state, covs in cases:
        for k, (bs, lk) in enumerate(zip(scenario.bss, links(state, scenario))):
            c = [covs[(k, m)] for m in bs.subcarriers]
            J = fim_general(bs, lk, c, scenario.radio)
            xx = fim_closed_xixi(bs, lk, c, scenario.radio)
            tt = fim_closed_thetatau(bs, lk, c, scenario.radio)
            ref_xx = J[3 * Q:4 * Q, 3 * Q:4 * Q]
            ref_tt = J[:Q, Q:2 * Q]
            rows.append((name, k, "xi_re/xi_re", float(np.abs(xx - ref_xx).max() / np.abs(ref_xx).max())))
            rows.append((name, k, "theta/tau", float(np.abs(tt - ref_tt).max() / np.abs(ref_tt).max())))
    return rows
