"""Networked Kalman filter: an EKF over the stacked multi-BS, multi-target state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import NumericalError, condition_number, spd_cholesky, sym
from .motion import MotionModel
from .scenario import MeasurementLayout, Scenario, measurement_jacobian, measurement_map


@dataclass(frozen=True)
class TrackState:
    estimate: np.ndarray
    covariance: np.ndarray
    block: int = 0


def predict(posterior: TrackState, model: MotionModel) -> TrackState:
    F = model.transition
    P = F @ posterior.covariance @ F.T + model.process_cov
    return TrackState(F @ posterior.estimate, sym(P), posterior.block + 1)


def wrap_angle_innovations(innovation: np.ndarray, layout: MeasurementLayout) -> np.ndarray:
    """Map the AOA entries of an innovation into (-pi, pi]."""
    out = np.array(innovation, dtype=float)
    for k in range(layout.num_bs):
        for q in range(layout.num_targets):
            i = layout.index(k, 0, q)
            out[i] = -np.remainder(-out[i] + np.pi, 2 * np.pi) + np.pi
    return out


def kalman_gain(P: np.ndarray, H: np.ndarray, Ru: np.ndarray) -> np.ndarray:
    """``P H^T (H P H^T + R_u)^-1`` via an equilibrated Cholesky solve."""
    S = sym(H @ P @ H.T + Ru)
    try:
        chol, s = spd_cholesky(S)
    except NumericalError as exc:
        raise NumericalError(f"innovation covariance not invertible (cond={exc.condition:.3g})",
                             exc.condition) from None
    # G^T = S^-1 H P  with  S = D^-1 L L^T D^-1
    rhs = (H @ P) * s[:, None]
    GT = linalg.cho_solve((chol, True), rhs) * s[:, None]
    if not np.all(np.isfinite(GT)):
        raise NumericalError("non-finite Kalman gain", condition_number(S))
    return GT.T


def update(prediction: TrackState, measurement: np.ndarray, Ru: np.ndarray, scenario: Scenario) -> TrackState:
    x = prediction.estimate
    P = prediction.covariance
    H = measurement_jacobian(x, scenario)
    G = kalman_gain(P, H, Ru)
    innov = wrap_angle_innovations(measurement - measurement_map(x, scenario), scenario.measurement_layout)
    x_post = x + G @ innov
    P_post = sym((np.eye(len(x)) - G @ H) @ P)
    return TrackState(x_post, P_post, prediction.block)


def run_block(track: TrackState, measurement: np.ndarray, Ru: np.ndarray, scenario: Scenario,
              model: MotionModel) -> tuple[TrackState, TrackState]:
    """Update with this block's measurement, then predict the next block."""
    post = update(track, measurement, Ru, scenario)
    return post, predict(post, model)
