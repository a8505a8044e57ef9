"""Recursive posterior Cramer-Rao bound via the Bayesian information matrix (BIM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import equilibrated_inverse, sym
from .motion import MotionModel


@dataclass(frozen=True)
class Bim:
    matrix: np.ndarray
    block: int = 0
    singular: bool = False

    def inverse(self) -> np.ndarray:
        return equilibrated_inverse(self.matrix)[0]


def prior_info(prev: np.ndarray, model: MotionModel) -> np.ndarray:
    """``(R + F J^-1 F^T)^-1``: information carried over by the motion model."""
    F, R = model.transition, model.process_cov
    inv, _ = equilibrated_inverse(prev)
    out, _ = equilibrated_inverse(R + F @ inv @ F.T)
    return out


def prior_info_woodbury(prev: np.ndarray, model: MotionModel) -> np.ndarray:
    """Expanded form ``R^-1 - R^-1 F (J + F^T R^-1 F)^-1 F^T R^-1``; needs invertible ``R``."""
    F, R = model.transition, model.process_cov
    Ri = np.linalg.inv(R)
    mid = np.linalg.inv(prev + F.T @ Ri @ F)
    return sym(Ri - Ri @ F @ mid @ F.T @ Ri)


def data_info(H: np.ndarray, fim: np.ndarray) -> np.ndarray:
    """``H^T R_u^-1 H`` with ``R_u^-1`` supplied directly as the measurement FIM."""
    return sym(H.T @ fim @ H)


def bim_step(prev: np.ndarray | None, model: MotionModel, H: np.ndarray, fim: np.ndarray,
             block: int = 0) -> Bim:
    """One recursion; ``prev=None`` starts the recursion from the data alone."""
    jd = data_info(H, fim)
    J = jd if prev is None else sym(prior_info(prev, model) + jd)
    _, singular = equilibrated_inverse(J)
    return Bim(J, block, singular)


def accuracy(bim: Bim | np.ndarray, num_targets: int, q: int) -> tuple[float, float]:
    """Position and velocity bounds ``(delta_x, delta_v)`` of target ``q``."""
    J = bim.matrix if isinstance(bim, Bim) else np.asarray(bim)
    C = equilibrated_inverse(J)[0]
    d = np.diag(C)
    Q = num_targets
    dx = np.sqrt(max(d[q] + d[Q + q], 0.0))
    dv = np.sqrt(max(d[2 * Q + q] + d[3 * Q + q], 0.0))
    return float(dx), float(dv)
