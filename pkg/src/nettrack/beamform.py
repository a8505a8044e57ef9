"""Transmit-covariance optimization that minimizes a weighted PCRB trace.

The next-block BIM is affine in the transmit covariances,
``J(R) = J_const + sum_{k,m} H_k^T FIM_{k,m}(R_{k,m}) H_k``, so the problem

    min  sum_a w_a alpha_a
    s.t. [[J(R), e_a], [e_a^T, alpha_a]] >= 0   for every weighted index a
         sum_m tr R_{k,m} <= P_k,  R_{k,m} >= 0

is a semidefinite program. It is solved with a log-barrier interior-point
method. Using ``det [[J, e], [e^T, alpha]] = det J * (alpha - e^T J^-1 e)``
the LMI barrier becomes ``-n_w logdet J - sum_a log s_a``, and the Newton
system is assembled analytically.

In the reduced mode each ``R_{k,m}`` is restricted to ``V_k S V_k^H`` where
``V_k`` spans the predicted transmit steering vectors and their derivatives;
the optimum of the full problem lies in that span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import equilibrated_inverse, sym
from .fim import BeamPlan, FimOperator
from .motion import MotionModel
from .pcrb import data_info, prior_info
from .scenario import Scenario, SolverConfig, links, measurement_jacobian, steering_derivative, steering_vector


def hermitian_basis(r: int) -> np.ndarray:
    """Orthonormal basis (under ``Re tr(A^H B)``) of ``r x r`` Hermitian matrices."""
    out = []
    for i in range(r):
        e = np.zeros((r, r), dtype=complex)
        e[i, i] = 1.0
        out.append(e)
    s = 1 / math.sqrt(2)
    for i in range(r):
        for j in range(i + 1, r):
            e = np.zeros((r, r), dtype=complex)
            e[i, j] = e[j, i] = s
            out.append(e)
            e = np.zeros((r, r), dtype=complex)
            e[i, j], e[j, i] = 1j * s, -1j * s
            out.append(e)
    return np.array(out)


def span_basis(aods, num_tx: int, spacing: float, wavelength: float, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``span{a_t(phi_q), da_t(phi_q)}``."""
    a = np.atleast_2d(steering_vector(np.atleast_1d(aods), num_tx, spacing, wavelength))
    da = np.atleast_2d(steering_derivative(np.atleast_1d(aods), num_tx, spacing, wavelength))
    U = np.concatenate([a, da]).T
    u, s, _ = np.linalg.svd(U, full_matrices=False)
    return u[:, s > tol * s[0]]


@dataclass
class SdpBlock:
    k: int
    m: int
    basis: np.ndarray  # V, N_T x r (identity in full mode)
    herm: np.ndarray  # (p, r, r) Hermitian basis
    images: np.ndarray  # (p, n, n) contributions to the BIM

    @property
    def size(self) -> int:
        return len(self.herm)


@dataclass
class SdpProblem:
    const: np.ndarray
    blocks: list[SdpBlock]
    weights: np.ndarray
    budgets: np.ndarray
    mode: str
    aods: list[np.ndarray]
    state: np.ndarray
    scenario: Scenario = field(repr=False)

    @property
    def num_vars(self) -> int:
        return sum(b.size for b in self.blocks)

    def coordinates(self, covs: dict) -> np.ndarray:
        """Basis coordinates of ``covs`` (projected onto each block's subspace)."""
        parts = []
        for b in self.blocks:
            S = b.basis.conj().T @ covs[(b.k, b.m)] @ b.basis
            parts.append(np.real(np.einsum("pij,ij->p", b.herm.conj(), S)))
        return np.concatenate(parts)

    def covariances(self, x: np.ndarray) -> dict:
        out, i = {}, 0
        for b in self.blocks:
            S = np.einsum("p,pij->ij", x[i:i + b.size], b.herm)
            R = b.basis @ S @ b.basis.conj().T
            out[(b.k, b.m)] = 0.5 * (R + R.conj().T)
            i += b.size
        return out

    def bim(self, x: np.ndarray) -> np.ndarray:
        J = self.const.copy()
        i = 0
        for b in self.blocks:
            J += np.tensordot(x[i:i + b.size], b.images, axes=1)
            i += b.size
        return sym(J)

    def bim_of(self, covs: dict) -> np.ndarray:
        """BIM via the stored linear map."""
        return self.bim(self.coordinates(covs))

    def direct_bim(self, covs: dict) -> np.ndarray:
        """BIM evaluated from scratch through the FIM and ``H^T FIM H``."""
        sc = self.scenario
        H = measurement_jacobian(self.state, sc)
        J = self.const.copy()
        for k, (bs, lk) in enumerate(zip(sc.bss, links(self.state, sc))):
            fim = FimOperator(bs, lk, sc.radio)([covs[(k, m)] for m in bs.subcarriers])
            rows = sc.measurement_layout.bs_slice(k)
            J += data_info(H[rows], fim)
        return sym(J)

    def objective(self, J: np.ndarray) -> float:
        inv, _ = equilibrated_inverse(J)
        return float(self.weights @ np.diag(inv))


def build_problem(state: np.ndarray, scenario: Scenario, model: MotionModel,
                  prev_bim: np.ndarray | None, weights: np.ndarray | None = None,
                  mode: str | None = None) -> SdpProblem:
    """Linearize the next-block BIM around the predicted ``state``."""
    mode = mode or scenario.solver.mode
    if mode not in ("reduced", "full"):
        raise ValueError(f"unknown solver mode {mode!r}")
    w = scenario.weight_vector() if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n = len(state)
    const = np.zeros((n, n)) if prev_bim is None else prior_info(prev_bim, model)
    H = measurement_jacobian(state, scenario)
    lam = scenario.radio.wavelength
    blocks, aods = [], []
    for k, (bs, lk) in enumerate(zip(scenario.bss, links(state, scenario))):
        aods.append(np.atleast_1d(lk.aod))
        if mode == "reduced":
            V = span_basis(lk.aod, bs.num_tx, bs.spacing(scenario.radio), lam)
        else:
            V = np.eye(bs.num_tx, dtype=complex)
        herm = hermitian_basis(V.shape[1])
        lifted = np.einsum("ir,prs,js->pij", V, herm, V.conj())
        op = FimOperator(bs, lk, scenario.radio)
        Hk = H[scenario.measurement_layout.bs_slice(k)]
        for j, m in enumerate(bs.subcarriers):
            img = op.images(j, lifted)
            A = np.einsum("ia,pij,jb->pab", Hk, img, Hk)
            blocks.append(SdpBlock(k, m, V, herm, 0.5 * (A + A.transpose(0, 2, 1))))
    budgets = np.array([bs.tx_power for bs in scenario.bss])
    return SdpProblem(const, blocks, w, budgets, mode, aods, np.asarray(state, float), scenario)


# --------------------------------------------------------------------------- solver

@dataclass
class SdpSolution:
    covariances: dict
    alphas: np.ndarray
    weighted_index: np.ndarray
    objective: float
    baseline_objective: float
    bim: np.ndarray
    outer_iterations: int
    newton_iterations: int
    gap: float
    converged: bool
    history: list[float]
    residuals: dict


class _Barrier:
    """Barrier pieces in the Jacobi-scaled coordinates ``J' = D J D``, ``alpha' = alpha / d^2``."""

    def __init__(self, problem: SdpProblem, scale: np.ndarray):
        self.p = problem
        self.idx = np.flatnonzero(problem.weights > 0)
        d = scale
        self.d = d
        self.const = problem.const * np.outer(d, d)
        self.images = np.concatenate([b.images for b in problem.blocks]) * np.outer(d, d)[None]
        self.w = problem.weights[self.idx] * d[self.idx] ** 2
        self.nx = problem.num_vars
        self.nw = len(self.idx)
        self.K = len(problem.budgets)
        offs = np.cumsum([0] + [b.size for b in problem.blocks])
        self.slices = [slice(offs[i], offs[i + 1]) for i in range(len(problem.blocks))]
        self.power = np.zeros((self.K, self.nx))
        for b, sl in zip(problem.blocks, self.slices):
            self.power[b.k, sl] = np.real(np.einsum("pii->p", b.herm))
        n = len(d)
        self.nu = self.nw * (n + 1) + sum(b.herm.shape[1] for b in problem.blocks) + self.K

    def J(self, x):
        return sym(self.const + np.tensordot(x, self.images, axes=1))

    def parts(self, z):
        """Factorizations, or ``None`` if ``z`` is not strictly feasible."""
        x, a = z[:self.nx], z[self.nx:]
        try:
            L = linalg.cholesky(self.J(x), lower=True)
        except linalg.LinAlgError:
            return None
        E = np.zeros((len(self.d), self.nw))
        E[self.idx, np.arange(self.nw)] = 1.0
        Z = linalg.cho_solve((L, True), E)
        s = a - Z[self.idx, np.arange(self.nw)]
        if np.any(s <= 0):
            return None
        slack = self.p.budgets - self.power @ x
        if np.any(slack <= 0):
            return None
        chols = []
        for b, sl in zip(self.p.blocks, self.slices):
            S = np.einsum("p,pij->ij", x[sl], b.herm)
            try:
                chols.append(linalg.cholesky(0.5 * (S + S.conj().T), lower=True))
            except linalg.LinAlgError:
                return None
        return L, Z, s, slack, chols

    def value(self, z, t, parts):
        L, _, s, slack, chols = parts
        v = t * self.w @ z[self.nx:]
        v -= 2 * self.nw * np.log(np.diag(L)).sum()
        v -= np.log(s).sum() + np.log(slack).sum()
        for c in chols:
            v -= 2 * np.log(np.abs(np.diag(c))).sum()
        return float(v)

    def newton_system(self, z, t, parts):
        L, Z, s, slack, chols = parts
        nx, nw = self.nx, self.nw
        g = np.zeros(nx + nw)
        Hs = np.zeros((nx + nw, nx + nw))
        g[nx:] = t * self.w
        n = len(self.d)
        # -n_w logdet J
        M = _sandwich(L, self.images)  # L^-1 A_i L^-T
        Mf = M.reshape(nx, n * n)
        g[:nx] -= nw * np.einsum("pii->p", M)
        Hs[:nx, :nx] += nw * Mf @ Mf.T
        # -sum_a log s_a, with ds_a/dx_i = z_a^T A_i z_a
        for j in range(nw):
            z_a = Z[:, j]
            Az = self.images @ z_a  # (nx, n)
            Y = linalg.solve_triangular(L, Az.T, lower=True).T
            dvec = np.zeros(nx + nw)
            dvec[:nx] = Az @ z_a
            dvec[nx + j] = 1.0
            g -= dvec / s[j]
            Hs += np.outer(dvec, dvec) / s[j] ** 2
            Hs[:nx, :nx] += 2 * (Y @ Y.T) / s[j]
        # -sum logdet S_b
        for b, sl, c in zip(self.p.blocks, self.slices, chols):
            X = _sandwich(c, b.herm)  # C^-1 F_i C^-H
            g[sl] -= np.real(np.einsum("pii->p", X))
            Xf = X.reshape(b.size, -1)
            Hs[sl, sl] += np.real(Xf.conj() @ Xf.T)
        # -sum log slack
        for k in range(self.K):
            c = np.zeros(nx + nw)
            c[:nx] = self.power[k]
            g += c / slack[k]
            Hs += np.outer(c, c) / slack[k] ** 2
        return g, 0.5 * (Hs + Hs.T)


def _sandwich(L, mats):
    """``L^-1 A_i L^-H`` for a stack of Hermitian ``A_i``."""
    p, n, _ = mats.shape
    T = linalg.solve_triangular(L, mats.transpose(1, 0, 2).reshape(n, p * n), lower=True)
    T = T.reshape(n, p, n).transpose(1, 0, 2)  # L^-1 A_i
    U = linalg.solve_triangular(L, T.conj().transpose(0, 2, 1).transpose(1, 0, 2).reshape(n, p * n), lower=True)
    U = U.reshape(n, p, n).transpose(1, 0, 2)  # L^-1 (L^-1 A_i)^H
    return U.conj().transpose(0, 2, 1)


def _solve_newton(Hs, g):
    d = np.sqrt(np.abs(np.diag(Hs)))
    d[d == 0] = 1.0
    Hn = Hs / np.outer(d, d)
    try:
        c = linalg.cho_factor(Hn)
        return -linalg.cho_solve(c, g / d) / d
    except linalg.LinAlgError:
        return -np.linalg.lstsq(Hn, g / d, rcond=1e-14)[0] / d


def isotropic_covariances(scenario: Scenario, fraction: float = 1.0) -> dict:
    return BeamPlan.isotropic(scenario, fraction).covariances


def solve(problem: SdpProblem, config: SolverConfig | None = None) -> SdpSolution:
    cfg = config or problem.scenario.solver
    sc = problem.scenario
    iso = isotropic_covariances(sc)
    J_iso = problem.direct_bim(iso)
    baseline = problem.objective(J_iso)
    idx = np.flatnonzero(problem.weights > 0)

    x = problem.coordinates(isotropic_covariances(sc, cfg.start_power_fraction))
    J0 = problem.bim(x)
    diag0 = np.diag(J0).copy()
    if np.any(diag0[idx] <= 0):
        raise np.linalg.LinAlgError("BIM at the isotropic start is singular on a weighted index")
    scale = np.ones_like(diag0)
    scale[diag0 > 0] = 1 / np.sqrt(diag0[diag0 > 0])
    bar = _Barrier(problem, scale)
    if bar.nw == 0:
        covs = problem.covariances(x)
        return SdpSolution(covs, np.zeros(0), idx, 0.0, baseline, J0, 0, 0, 0.0, True, [0.0], {})

    inv0 = linalg.inv(bar.J(x))
    a = 2 * np.diag(inv0)[bar.idx]
    z = np.concatenate([x, a])
    parts = bar.parts(z)
    if parts is None:
        raise np.linalg.LinAlgError("isotropic start point is not strictly feasible")
    obj = float(bar.w @ a)
    t = bar.nu / max(obj, 1e-300)
    history, newton_total, outer = [], 0, 0
    converged = False
    while outer < cfg.max_outer:
        outer += 1
        for _ in range(cfg.max_newton):
            g, Hs = bar.newton_system(z, t, parts)
            step = _solve_newton(Hs, g)
            dec = -g @ step
            if dec / 2 <= 1e-10:
                break
            f0 = bar.value(z, t, parts)
            h = 1.0
            while h > 1e-14:
                cand = z + h * step
                cp = bar.parts(cand)
                if cp is not None and bar.value(cand, t, cp) <= f0 - 0.25 * h * dec:
                    break
                h *= 0.5
            else:
                break
            z, parts = cand, cp
            newton_total += 1
        obj = float(bar.w @ z[bar.nx:])
        history.append(obj)
        if bar.nu / t < cfg.gap_tol * abs(obj):
            converged = True
            break
        t *= cfg.barrier_factor

    x, a = z[:bar.nx], z[bar.nx:]
    covs = problem.covariances(x)
    J = problem.bim(x)
    alphas = a * scale[bar.idx] ** 2
    Jinv = np.diag(equilibrated_inverse(J)[0])[bar.idx]
    powers = bar.power @ x
    lmi_min = min(_lmi_min_ratio(J, i, al) for i, al in zip(bar.idx, alphas))
    residuals = {
        "schur_gap": float(np.max(np.abs(alphas - Jinv) / np.abs(Jinv))),
        "power_excess": float(np.max((powers - problem.budgets) / problem.budgets)),
        "min_eig_ratio": float(min(np.linalg.eigvalsh(c).min() / max(np.trace(c).real, 1e-300)
                                   for c in covs.values())),
        "lmi_min_eig_ratio": float(lmi_min),
    }
    return SdpSolution(covs, alphas, bar.idx, float(problem.weights[bar.idx] @ alphas), baseline, J,
                       outer, newton_total, bar.nu / t, converged,
                       [h for h in np.asarray(history)], residuals)


def _lmi_min_ratio(J, i, alpha):
    n = J.shape[0]
    d = np.sqrt(np.abs(np.diag(J)))
    d[d == 0] = 1.0
    block = np.zeros((n + 1, n + 1))
    block[:n, :n] = J / np.outer(d, d)
    block[:n, n] = block[n, :n] = np.eye(n)[i] / d[i]
    block[n, n] = alpha
    return np.linalg.eigvalsh(block).min() / np.trace(block)


def verify_span(solution: SdpSolution, problem: SdpProblem) -> dict:
    """Off-span energy ``||(I-P) R (I-P)||_F / tr R`` per ``(k, m)``."""
    sc = problem.scenario
    out = {}
    for k, bs in enumerate(sc.bss):
        U = span_basis(problem.aods[k], bs.num_tx, bs.spacing(sc.radio), sc.radio.wavelength)
        Pc = np.eye(bs.num_tx) - U @ U.conj().T
        for m in bs.subcarriers:
            out[(k, m)] = span_residual(solution.covariances[(k, m)], Pc)
    return out


def span_residual(R: np.ndarray, complement: np.ndarray) -> float:
    tr = np.trace(R).real
    if tr <= 0:
        return 0.0
    return float(np.linalg.norm(complement @ R @ complement) / tr)


def extract_beamformers(covariances: dict, threshold: float = 1e-3) -> BeamPlan:
    """Eigen-truncated beams ``B`` with ``B B^H`` carrying the original trace."""
    beams, covs = {}, {}
    for key, R in covariances.items():
        R = 0.5 * (R + R.conj().T)
        lam, vec = np.linalg.eigh(R)
        tr = lam.sum()
        if lam[-1] <= 0:
            B = np.zeros((R.shape[0], 0), dtype=complex)
        else:
            keep = lam >= threshold * lam[-1]
            B = vec[:, keep][:, ::-1] * np.sqrt(lam[keep][::-1])
            B = B * np.sqrt(tr / np.sum(lam[keep]))
        beams[key] = B
        covs[key] = B @ B.conj().T
    return BeamPlan(covs, beams, threshold)


def fold_angle(angle):
    """Front-back fold of a broadside ULA angle onto [-pi/2, pi/2]."""
    return np.arcsin(np.clip(np.sin(angle), -1.0, 1.0))


def beampattern(plan: BeamPlan, scenario: Scenario, k: int, angles) -> np.ndarray:
    """Transmit gain ``a_t^H R a_t`` on ``angles`` (rad) at the BS's first subcarrier."""
    bs = scenario.bss[k]
    R = plan.covariances[(k, bs.subcarriers[0])]
    a = np.atleast_2d(steering_vector(np.asarray(angles, float), bs.num_tx, bs.spacing(scenario.radio),
                                      scenario.radio.wavelength))
    g = np.real(np.einsum("ai,ij,aj->a", a.conj(), R, a))
    return np.clip(g, 0.0, None)


def optimize_beams(state, scenario, model, prev_bim, weights=None, mode=None,
                   config: SolverConfig | None = None):
    """Build, solve and extract; returns ``(plan, solution, problem)``."""
    problem = build_problem(state, scenario, model, prev_bim, weights, mode)
    sol = solve(problem, config)
    cfg = config or scenario.solver
    return extract_beamformers(sol.covariances, cfg.rank_threshold), sol, problem
