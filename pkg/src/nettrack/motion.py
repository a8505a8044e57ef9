"""Constant-velocity kinematics plus a random-walk model for the ERCS entries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag


@dataclass(frozen=True)
class MotionModel:
    transition: np.ndarray
    process_cov: np.ndarray
    process_noise: float
    block_interval: float
    ercs_cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.transition.shape[0]


def cv_blocks(num_targets: int, dt: float, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Transition and process covariance of the 4Q kinematic sub-state."""
    eye = np.eye(2 * num_targets)
    F = np.block([[eye, dt * eye], [np.zeros_like(eye), eye]])
    R = mu * np.block([[dt ** 3 / 3 * eye, dt ** 2 / 2 * eye], [dt ** 2 / 2 * eye, dt * eye]])
    return F, R


def build_motion_model(num_targets: int, num_bs: int, dt: float, mu: float,
                       ercs_cov=None) -> MotionModel:
    """Assemble ``F = blockdiag(F_A, I)`` and ``R = blockdiag(R_A, R_sigma)``.

    ``ercs_cov`` may be a scalar (times identity) or a full ``2KQ x 2KQ`` matrix;
    it defaults to ``1e-4 * I``.
    """
    if not dt > 0:
        raise ValueError("block interval must be positive")
    if mu < 0:
        raise ValueError("process noise power must be nonnegative")
    n_sig = 2 * num_bs * num_targets
    if ercs_cov is None:
        ercs_cov = 1e-4
    if np.isscalar(ercs_cov):
        r_sig = float(ercs_cov) * np.eye(n_sig)
    else:
        r_sig = np.asarray(ercs_cov, dtype=float)
        if r_sig.shape != (n_sig, n_sig):
            raise ValueError(f"ERCS covariance must be {n_sig}x{n_sig}")
    if not np.allclose(r_sig, r_sig.T) or (
            r_sig.size and np.linalg.eigvalsh(r_sig).min() < -1e-12 * max(np.trace(r_sig), 1e-300)):
        raise ValueError("ERCS process covariance must be symmetric PSD")
    fa, ra = cv_blocks(num_targets, dt, mu)
    F = block_diag(fa, np.eye(n_sig))
    R = block_diag(ra, r_sig)
    return MotionModel(F, R, mu, dt, r_sig)


def model_for(scenario, mu: float | None = None) -> MotionModel:
    return build_motion_model(scenario.num_targets, scenario.num_bs, scenario.radio.block_interval,
                              scenario.process_noise if mu is None else mu, scenario.ercs_noise)


def propagate(state: np.ndarray, model: MotionModel, rng: np.random.Generator | None = None) -> np.ndarray:
    nxt = model.transition @ state
    if rng is not None:
        nxt = nxt + rng.multivariate_normal(np.zeros(model.dim), model.process_cov, method="eigh")
    return nxt


def trajectory(initial: np.ndarray, model: MotionModel, num_blocks: int,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """States for blocks ``0..num_blocks-1`` starting from ``initial``."""
    out = [np.asarray(initial, dtype=float)]
    for _ in range(num_blocks - 1):
        out.append(propagate(out[-1], model, rng))
    return np.array(out)
