"""Measurement Fisher information of the multi-target OFDM MIMO echo.

Per BS the observables are ``[theta (Q); tau (Q); f (Q); Re xi (Q); Im xi (Q)]``.
For transmit covariance ``R_m`` on subcarrier ``m`` the Gaussian echo model
gives the Slepian-Bangs form

    J[a, b] = 2/sigma^2 * sum_{i, m} Re tr(dM_a(i, m)^H dM_b(i, m) R_m)

where ``M(i, m) = sum_q xi_q e^{j2pi f_q i T0} e^{j2pi m df tau_q} a_r a_t^H``.
Every derivative factors as a scalar ``c_a(i, m)`` times a fixed matrix
``S_a``, which :class:`FimOperator` exploits; :func:`fim_general` evaluates the
sum literally and serves as the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from ._linalg import PINV_CUTOFF, equilibrated_inverse, min_eig_ratio
from .scenario import (BsConfig, LinkParams, RadioConfig, Scenario, links, steering_derivative,
                       steering_vector)


# --------------------------------------------------------------------------- beam plans

@dataclass
class BeamPlan:
    """Transmit covariances ``R[(k, m)]`` plus optionally extracted beam matrices."""

    covariances: dict[tuple[int, int], np.ndarray]
    beams: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    rank_threshold: float | None = None

    def for_bs(self, k: int, bs: BsConfig) -> list[np.ndarray]:
        return [self.covariances[(k, m)] for m in bs.subcarriers]

    def power(self, k: int, bs: BsConfig) -> float:
        return float(sum(np.trace(r).real for r in self.for_bs(k, bs)))

    def validate(self, scenario: Scenario, rel_tol: float = 1e-9) -> None:
        for k, bs in enumerate(scenario.bss):
            for m in bs.subcarriers:
                r = self.covariances[(k, m)]
                if r.shape != (bs.num_tx, bs.num_tx):
                    raise ValueError(f"covariance ({k}, {m}) has shape {r.shape}")
                scale = max(np.abs(r).max(), 1e-300)
                if np.abs(r - r.conj().T).max() > 1e-12 * scale:
                    raise ValueError(f"covariance ({k}, {m}) is not Hermitian")
                if min_eig_ratio(r) < -1e-10:
                    raise ValueError(f"covariance ({k}, {m}) is not PSD")
            if self.power(k, bs) > bs.tx_power * (1 + rel_tol):
                raise ValueError(f"BS {k} exceeds its power budget")

    @classmethod
    def isotropic(cls, scenario: Scenario, fraction: float = 1.0) -> "BeamPlan":
        cov = {}
        for k, bs in enumerate(scenario.bss):
            level = fraction * bs.tx_power / (len(bs.subcarriers) * bs.num_tx)
            for m in bs.subcarriers:
                cov[(k, m)] = level * np.eye(bs.num_tx, dtype=complex)
        return cls(cov)

    @classmethod
    def focused(cls, scenario: Scenario, aods: list[float]) -> "BeamPlan":
        """All power of BS ``k`` on a single beam steered at ``aods[k]``."""
        cov = {}
        for k, bs in enumerate(scenario.bss):
            a = steering_vector(aods[k], bs.num_tx, bs.spacing(scenario.radio), scenario.radio.wavelength)
            p = bs.tx_power / len(bs.subcarriers)
            for m in bs.subcarriers:
                cov[(k, m)] = p / bs.num_tx * np.outer(a, a.conj())
        return cls(cov)


# --------------------------------------------------------------------------- derivative structure

def _arrays(bs: BsConfig, link: LinkParams, radio: RadioConfig):
    lam = radio.wavelength
    d = bs.spacing(radio)
    ar = np.atleast_2d(steering_vector(link.aoa, bs.num_rx, d, lam))
    dar = np.atleast_2d(steering_derivative(link.aoa, bs.num_rx, d, lam))
    at = np.atleast_2d(steering_vector(link.aod, bs.num_tx, d, lam))
    dat = np.atleast_2d(steering_derivative(link.aod, bs.num_tx, d, lam))
    return ar, dar, at, dat


def derivative_factors(bs: BsConfig, link: LinkParams, radio: RadioConfig):
    """Return ``(S, c)`` with ``dM_a(i, m) = c[a, i, j] * S[a]`` for ``m = subcarriers[j]``.

    ``S`` has shape ``(5Q, N_R, N_T)``; ``c`` has shape ``(5Q, I, M_k)``.
    """
    ar, dar, at, dat = _arrays(bs, link, radio)
    Q = ar.shape[0]
    base = np.einsum("qr,qt->qrt", ar, at.conj())
    dtheta = np.einsum("qr,qt->qrt", dar, at.conj()) + np.einsum("qr,qt->qrt", ar, dat.conj())
    S = np.concatenate([dtheta, base, base, base, base])

    xi = np.atleast_1d(link.coeff).astype(complex)
    f = np.atleast_1d(link.doppler)
    tau = np.atleast_1d(link.delay)
    i = np.arange(radio.num_symbols_per_block)
    m = np.asarray(bs.subcarriers, dtype=float)
    t_phase = np.exp(2j * np.pi * np.outer(f, i * radio.symbol_interval))  # (Q, I)
    f_phase = np.exp(2j * np.pi * np.outer(tau, m * radio.subcarrier_spacing))  # (Q, Mk)
    phase = t_phase[:, :, None] * f_phase[:, None, :]
    g_tau = 2j * np.pi * m * radio.subcarrier_spacing
    g_f = 2j * np.pi * i * radio.symbol_interval
    c = np.concatenate([
        xi[:, None, None] * phase,
        xi[:, None, None] * phase * g_tau[None, None, :],
        xi[:, None, None] * phase * g_f[None, :, None],
        phase,
        1j * phase,
    ])
    assert c.shape[0] == 5 * Q
    return S, c


class FimOperator:
    """Linear map from per-subcarrier transmit covariances to one BS's 5Q x 5Q FIM."""

    def __init__(self, bs: BsConfig, link: LinkParams, radio: RadioConfig):
        S, c = derivative_factors(bs, link, radio)
        self.bs = bs
        self.scale = 2.0 / radio.noise_power
        self.S = S
        # W[j, a, b] = sum_i conj(c_a) c_b on subcarrier j
        self.W = np.einsum("aij,bij->jab", c.conj(), c)
        # K[a, b, s, t] = sum_r conj(S_a[r, t]) S_b[r, s]  so that tr(S_a^H S_b R) = sum K * R
        self.K = np.einsum("art,brs->abst", S.conj(), S)
        self.dim = S.shape[0]

    def subcarrier(self, j: int, cov: np.ndarray) -> np.ndarray:
        G = np.einsum("abst,st->ab", self.K, cov)
        return self.scale * np.real(self.W[j] * G)

    def __call__(self, covs) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for j, cov in enumerate(covs):
            out += self.subcarrier(j, cov)
        return 0.5 * (out + out.T)

    def images(self, j: int, basis: np.ndarray) -> np.ndarray:
        """FIM contributions of a stack of ``N_T x N_T`` matrices on subcarrier ``j``."""
        n = self.dim
        nt = self.K.shape[-1]
        G = (self.K.reshape(n * n, nt * nt) @ basis.reshape(len(basis), nt * nt).T).T
        J = self.scale * np.real(self.W[j][None] * G.reshape(len(basis), n, n))
        return 0.5 * (J + J.transpose(0, 2, 1))


def fim_general(bs: BsConfig, link: LinkParams, covs, radio: RadioConfig) -> np.ndarray:
    """Reference FIM: explicit per-(symbol, subcarrier) derivative matrices and traces."""
    ar, dar, at, dat = _arrays(bs, link, radio)
    Q = ar.shape[0]
    xi = np.atleast_1d(link.coeff).astype(complex)
    f = np.atleast_1d(link.doppler)
    tau = np.atleast_1d(link.delay)
    T0, df = radio.symbol_interval, radio.subcarrier_spacing
    n_par = 5 * Q
    J = np.zeros((n_par, n_par))
    i_all = np.arange(radio.num_symbols_per_block)
    for j, m in enumerate(bs.subcarriers):
        R = np.asarray(covs[j])
        # dmu[a, i] : N_R x N_T derivative of the channel matrix at symbol i
        dM = np.zeros((n_par, len(i_all), bs.num_rx, bs.num_tx), dtype=complex)
        for q in range(Q):
            ph = np.exp(2j * np.pi * f[q] * i_all * T0) * np.exp(2j * np.pi * m * df * tau[q])
            Yq = np.outer(ar[q], at[q].conj())
            dY_theta = np.outer(dar[q], at[q].conj()) + np.outer(ar[q], dat[q].conj())
            dM[q] = xi[q] * ph[:, None, None] * dY_theta
            dM[Q + q] = xi[q] * 2j * np.pi * m * df * ph[:, None, None] * Yq
            dM[2 * Q + q] = xi[q] * (2j * np.pi * i_all * T0 * ph)[:, None, None] * Yq
            dM[3 * Q + q] = ph[:, None, None] * Yq
            dM[4 * Q + q] = 1j * ph[:, None, None] * Yq
        dMR = dM @ R
        J += np.real(np.einsum("airt,birt->ab", dM.conj(), dMR))
    J *= 2.0 / radio.noise_power
    return 0.5 * (J + J.T)


# --------------------------------------------------------------------------- closed forms

def _chi(link: LinkParams, bs: BsConfig, radio: RadioConfig, m: int, weight: float, dr: np.ndarray | None):
    """Per-subcarrier correlation ``chi[q0, q1]`` normalised by ``I M N_R``."""
    ar, dar, _, _ = _arrays(bs, link, radio)
    left = ar if dr is None else dr
    spatial = left.conj() @ ar.T  # [q0, q1] = a_left(q0)^H a_r(q1)
    f = np.atleast_1d(link.doppler)
    tau = np.atleast_1d(link.delay)
    i = np.arange(radio.num_symbols_per_block)
    dfreq = f[None, :] - f[:, None]
    temporal = np.exp(2j * np.pi * dfreq[:, :, None] * i * radio.symbol_interval).sum(-1)
    dtau = tau[None, :] - tau[:, None]
    spectral = weight * np.exp(2j * np.pi * m * radio.subcarrier_spacing * dtau)
    norm = radio.num_symbols_per_block * radio.num_subcarriers * bs.num_rx
    return spatial * temporal * spectral / norm


def fim_closed_xixi(bs: BsConfig, link: LinkParams, covs, radio: RadioConfig) -> np.ndarray:
    """``J[Re xi, Re xi]`` block via the spatial-time-frequency correlation ``chi``."""
    _, _, at, _ = _arrays(bs, link, radio)
    norm = radio.num_symbols_per_block * radio.num_subcarriers * bs.num_rx
    out = 0.0
    for j, m in enumerate(bs.subcarriers):
        chi = _chi(link, bs, radio, m, 1.0, None)
        form = at @ np.asarray(covs[j]).conj() @ at.conj().T  # a_t(q0)^T R^* a_t(q1)^*
        out = out + np.real(chi * form)
    return 2.0 / radio.noise_power * norm * out


def fim_closed_thetatau(bs: BsConfig, link: LinkParams, covs, radio: RadioConfig) -> np.ndarray:
    """``J[theta, tau]`` block including both the receive- and transmit-derivative terms."""
    ar, dar, at, dat = _arrays(bs, link, radio)
    xi = np.atleast_1d(link.coeff).astype(complex)
    norm = radio.num_symbols_per_block * radio.num_subcarriers * bs.num_rx
    out = 0.0
    for j, m in enumerate(bs.subcarriers):
        chi_dot = _chi(link, bs, radio, m, float(m), dar)
        chi = _chi(link, bs, radio, m, float(m), None)
        Rc = np.asarray(covs[j]).conj()
        form = at @ Rc @ at.conj().T
        dform = dat @ Rc @ at.conj().T
        amp = np.outer(xi.conj(), xi)
        out = out + np.imag(amp * (chi_dot * form + chi * dform))
    return -2.0 / radio.noise_power * norm * 2 * np.pi * radio.subcarrier_spacing * out


# --------------------------------------------------------------------------- assembly

@dataclass
class MeasurementInfo:
    """Global measurement FIM (block diagonal over BSs) and its inverse ``R_u``."""

    blocks: list[np.ndarray]
    fim: np.ndarray
    cov: np.ndarray
    singular: list[bool]

    @property
    def any_singular(self) -> bool:
        return any(self.singular)


def assemble_Ru(blocks, cutoff: float = PINV_CUTOFF) -> MeasurementInfo:
    covs, flags = [], []
    for b in blocks:
        inv, sing = equilibrated_inverse(b, cutoff)
        covs.append(inv)
        flags.append(sing)
    return MeasurementInfo(list(blocks), block_diag(*blocks), block_diag(*covs), flags)


def bs_fims(state: np.ndarray, scenario: Scenario, plan: BeamPlan) -> list[np.ndarray]:
    """Per-BS FIMs (summed over each BS's subcarriers) at ``state`` under ``plan``."""
    out = []
    for k, (bs, lk) in enumerate(zip(scenario.bss, links(state, scenario))):
        out.append(FimOperator(bs, lk, scenario.radio)(plan.for_bs(k, bs)))
    return out


def measurement_info(state: np.ndarray, scenario: Scenario, plan: BeamPlan) -> MeasurementInfo:
    return assemble_Ru(bs_fims(state, scenario, plan))
