"""Static scenario description and the geometric measurement map.

A scenario holds the radio constants, the base-station (BS) arrays and the
initial target states. The measurement map ``h`` takes the stacked global
state ``[x_x; x_y; v_x; v_y; sigma_all]`` to the per-BS observables
``[theta; tau; f; Re xi; Im xi]`` stacked over BSs.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SPEED_OF_LIGHT = 299792458.0
PARAMS = ("theta", "tau", "doppler", "xi_re", "xi_im")


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` is a dotted path such as ``bs[2].tx_power``."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateLinkError(ValueError):
    """Target coincides with a BS (zero range)."""


@dataclass(frozen=True)
class RadioConfig:
    carrier_frequency: float = 3e9
    subcarrier_spacing: float = 480e3
    symbol_interval: float = 1e-4
    num_subcarriers: int = 8
    num_symbols_per_block: int = 100
    noise_power: float = 4.92e-12
    block_interval: float = 1.0

    def __post_init__(self):
        for name in ("carrier_frequency", "subcarrier_spacing", "symbol_interval",
                     "num_subcarriers", "num_symbols_per_block", "noise_power", "block_interval"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"radio.{name}", "must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass(frozen=True)
class BsConfig:
    position: tuple[float, float]
    subcarriers: tuple[int, ...]
    rx_incline: float = 0.0
    tx_incline: float = 0.0
    num_tx: int = 8
    num_rx: int = 8
    antenna_spacing: float | None = None  # None means half a wavelength
    tx_power: float = 10.0
    antenna_gain: float = 1.0

    def spacing(self, radio: RadioConfig) -> float:
        return radio.wavelength / 2 if self.antenna_spacing is None else self.antenna_spacing


@dataclass(frozen=True)
class TargetConfig:
    position: tuple[float, float]
    velocity: tuple[float, float]
    rcs: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "reduced"
    gap_tol: float = 1e-6
    barrier_factor: float = 5.0
    max_outer: int = 200
    max_newton: int = 100
    start_power_fraction: float = 0.9
    rank_threshold: float = 1e-3


@dataclass(frozen=True)
class LinkParams:
    aoa: np.ndarray
    aod: np.ndarray
    delay: np.ndarray
    doppler: np.ndarray
    range: np.ndarray
    coeff: np.ndarray | None = None


@dataclass(frozen=True)
class StateLayout:
    """Index bookkeeping for the global state vector."""

    num_targets: int
    num_bs: int

    @property
    def dim(self) -> int:
        return 4 * self.num_targets + 2 * self.num_bs * self.num_targets

    def pos_x(self, q):
        return q

    def pos_y(self, q):
        return self.num_targets + q

    def vel_x(self, q):
        return 2 * self.num_targets + q

    def vel_y(self, q):
        return 3 * self.num_targets + q

    def ercs_re(self, k, q):
        return 4 * self.num_targets + 2 * self.num_targets * k + q

    def ercs_im(self, k, q):
        return 4 * self.num_targets + 2 * self.num_targets * k + self.num_targets + q

    @property
    def kinematic(self) -> slice:
        return slice(0, 4 * self.num_targets)


@dataclass(frozen=True)
class MeasurementLayout:
    """Flat index of the stacked observable vector: BS-major, then parameter, then target."""

    num_targets: int
    num_bs: int

    @property
    def dim(self) -> int:
        return 5 * self.num_bs * self.num_targets

    def index(self, k: int, param: int, q: int) -> int:
        return (k * 5 + param) * self.num_targets + q

    def unravel(self, idx: int) -> tuple[int, int, int]:
        kp, q = divmod(idx, self.num_targets)
        k, param = divmod(kp, 5)
        return k, param, q

    def bs_slice(self, k: int) -> slice:
        n = 5 * self.num_targets
        return slice(k * n, (k + 1) * n)


@dataclass
class GlobalState:
    positions: np.ndarray  # (Q, 2)
    velocities: np.ndarray  # (Q, 2)
    ercs: np.ndarray  # (K, Q) complex

    def to_vector(self) -> np.ndarray:
        e = np.asarray(self.ercs)
        sig = np.concatenate([np.concatenate([e[k].real, e[k].imag]) for k in range(e.shape[0])])
        return np.concatenate([self.positions[:, 0], self.positions[:, 1],
                               self.velocities[:, 0], self.velocities[:, 1], sig])

    @classmethod
    def from_vector(cls, vec: np.ndarray, num_targets: int, num_bs: int) -> "GlobalState":
        Q, K = num_targets, num_bs
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (4 * Q + 2 * K * Q,):
            raise ValueError(f"state vector has shape {vec.shape}, expected ({4 * Q + 2 * K * Q},)")
        pos = np.stack([vec[:Q], vec[Q:2 * Q]], axis=1)
        vel = np.stack([vec[2 * Q:3 * Q], vec[3 * Q:4 * Q]], axis=1)
        sig = vec[4 * Q:].reshape(K, 2, Q)
        return cls(pos, vel, sig[:, 0, :] + 1j * sig[:, 1, :])


@dataclass(frozen=True)
class Scenario:
    radio: RadioConfig
    bss: tuple[BsConfig, ...]
    targets: tuple[TargetConfig, ...]
    num_blocks: int = 40
    process_noise: float = 1e-2
    ercs_noise: float = 1e-4
    weights: tuple[float, ...] | None = None
    initial_std: tuple[float, float, float] = (1.0, 0.5, 0.1)
    truth_process_noise: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    source_hash: str = ""

    def __post_init__(self):
        if not self.bss:
            raise ConfigError("bs", "at least one BS is required")
        if not self.targets:
            raise ConfigError("target", "at least one target is required")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks", "must be >= 1")
        if self.process_noise < 0:
            raise ConfigError("process_noise", "must be >= 0")
        if self.ercs_noise < 0:
            raise ConfigError("ercs_noise", "must be >= 0")
        M = self.radio.num_subcarriers
        seen: set[int] = set()
        for k, bs in enumerate(self.bss):
            if bs.num_tx < 1 or bs.num_rx < 1:
                raise ConfigError(f"bs[{k}].num_tx", "antenna counts must be >= 1")
            if not bs.tx_power > 0:
                raise ConfigError(f"bs[{k}].tx_power", "must be positive")
            if not bs.subcarriers:
                raise ConfigError(f"bs[{k}].subcarriers", "must not be empty")
            for m in bs.subcarriers:
                if not 0 <= m < M:
                    raise ConfigError(f"bs[{k}].subcarriers", f"index {m} outside 0..{M - 1}")
                if m in seen:
                    raise ConfigError(f"bs[{k}].subcarriers", f"subcarrier {m} allocated twice")
                seen.add(m)
        if len(seen) != M:
            raise ConfigError("bs", "subcarrier sets must cover all subcarriers")
        if self.weights is not None:
            if len(self.weights) != 4 * self.num_targets:
                raise ConfigError("weights.vector", f"expected {4 * self.num_targets} entries")
            if any(w < 0 for w in self.weights):
                raise ConfigError("weights.vector", "weights must be nonnegative")

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def num_bs(self) -> int:
        return len(self.bss)

    @property
    def state_layout(self) -> StateLayout:
        return StateLayout(self.num_targets, self.num_bs)

    @property
    def measurement_layout(self) -> MeasurementLayout:
        return MeasurementLayout(self.num_targets, self.num_bs)

    def weight_vector(self) -> np.ndarray:
        """Full state-space weight vector; ERCS entries are always zero."""
        Q = self.num_targets
        w = np.zeros(self.state_layout.dim)
        if self.weights is None:
            w[:2 * Q] = 1.0
        else:
            w[:4 * Q] = self.weights
        return w

    def initial_state(self) -> np.ndarray:
        pos = np.array([t.position for t in self.targets], dtype=float)
        vel = np.array([t.velocity for t in self.targets], dtype=float)
        amp = np.sqrt([t.rcs for t in self.targets])
        ercs = np.tile(amp.astype(complex), (self.num_bs, 1))
        return GlobalState(pos, vel, ercs).to_vector()

    def initial_covariance(self) -> np.ndarray:
        sp, sv, se = self.initial_std
        Q, K = self.num_targets, self.num_bs
        d = np.concatenate([np.full(2 * Q, sp ** 2), np.full(2 * Q, sv ** 2), np.full(2 * K * Q, se ** 2)])
        return np.diag(d)

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)


def interleaved_subcarriers(k: int, num_bs: int, num_subcarriers: int) -> tuple[int, ...]:
    return tuple(range(k, num_subcarriers, num_bs))


# --------------------------------------------------------------------------- loading

def _get(table: dict, key: str, path: str, default: Any = None, kind: type | tuple = (int, float)):
    if key not in table:
        return default
    value = table[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind != bool:
        raise ConfigError(f"{path}{key}", f"expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(path, "expected a pair of numbers")
    return float(value[0]), float(value[1])


def scenario_from_dict(cfg: dict, source_hash: str = "") -> Scenario:
    known = {"radio", "bs", "target", "num_blocks", "process_noise", "ercs_noise",
             "weights", "filter", "truth", "solver"}
    for key in cfg:
        if key not in known:
            raise ConfigError(key, "unknown key")
    rt = cfg.get("radio", {})
    if not isinstance(rt, dict):
        raise ConfigError("radio", "expected a table")
    radio_fields = {f: _get(rt, f, "radio.") for f in RadioConfig.__dataclass_fields__ if f in rt}
    for f in ("num_subcarriers", "num_symbols_per_block"):
        if f in radio_fields:
            radio_fields[f] = _get(rt, f, "radio.", kind=int)
    for key in rt:
        if key not in RadioConfig.__dataclass_fields__:
            raise ConfigError(f"radio.{key}", "unknown key")
    radio = RadioConfig(**radio_fields)

    bs_list = cfg.get("bs", [])
    if not isinstance(bs_list, list) or not bs_list:
        raise ConfigError("bs", "expected at least one [[bs]] entry")
    K = len(bs_list)
    bss = []
    allowed = set(BsConfig.__dataclass_fields__) | {"tx_power_dbm"}
    for k, entry in enumerate(bs_list):
        p = f"bs[{k}]."
        for key in entry:
            if key not in allowed:
                raise ConfigError(p + key, "unknown key")
        if "position" not in entry:
            raise ConfigError(p + "position", "required")
        power = _get(entry, "tx_power", p, 10.0)
        if "tx_power_dbm" in entry:
            power = 10 ** ((_get(entry, "tx_power_dbm", p) - 30) / 10)
        sub = entry.get("subcarriers")
        if sub is None:
            sub = interleaved_subcarriers(k, K, radio.num_subcarriers)
        elif not isinstance(sub, list) or not all(isinstance(m, int) for m in sub):
            raise ConfigError(p + "subcarriers", "expected a list of integers")
        bss.append(BsConfig(
            position=_pair(entry["position"], p + "position"),
            subcarriers=tuple(sub),
            rx_incline=float(_get(entry, "rx_incline", p, 0.0)),
            tx_incline=float(_get(entry, "tx_incline", p, 0.0)),
            num_tx=_get(entry, "num_tx", p, 8, int),
            num_rx=_get(entry, "num_rx", p, 8, int),
            antenna_spacing=_get(entry, "antenna_spacing", p, None),
            tx_power=float(power),
            antenna_gain=float(_get(entry, "antenna_gain", p, 1.0)),
        ))

    tgt_list = cfg.get("target", [])
    if not isinstance(tgt_list, list) or not tgt_list:
        raise ConfigError("target", "expected at least one [[target]] entry")
    targets = []
    for q, entry in enumerate(tgt_list):
        p = f"target[{q}]."
        for key in entry:
            if key not in TargetConfig.__dataclass_fields__:
                raise ConfigError(p + key, "unknown key")
        for key in ("position", "velocity"):
            if key not in entry:
                raise ConfigError(p + key, "required")
        rcs = float(_get(entry, "rcs", p, 1.0))
        if rcs < 0:
            raise ConfigError(p + "rcs", "must be nonnegative")
        targets.append(TargetConfig(_pair(entry["position"], p + "position"),
                                    _pair(entry["velocity"], p + "velocity"), rcs))
    Q = len(targets)

    weights = None
    wt = cfg.get("weights", {})
    if wt:
        if "vector" in wt:
            vec = wt["vector"]
            if not isinstance(vec, list):
                raise ConfigError("weights.vector", "expected a list")
            weights = tuple(float(v) for v in vec)
        else:
            wp = float(_get(wt, "position", "weights.", 1.0))
            wv = float(_get(wt, "velocity", "weights.", 0.0))
            weights = tuple([wp] * (2 * Q) + [wv] * (2 * Q))

    ft = cfg.get("filter", {})
    initial_std = (float(_get(ft, "initial_position_std", "filter.", 1.0)),
                   float(_get(ft, "initial_velocity_std", "filter.", 0.5)),
                   float(_get(ft, "initial_ercs_std", "filter.", 0.1)))
    if min(initial_std) <= 0:
        raise ConfigError("filter", "initial standard deviations must be positive")

    tt = cfg.get("truth", {})
    truth_noise = _get(tt, "process_noise", "truth.", False, bool)

    st = cfg.get("solver", {})
    for key in st:
        if key not in SolverConfig.__dataclass_fields__:
            raise ConfigError(f"solver.{key}", "unknown key")
    solver = SolverConfig(**{k: v for k, v in st.items()})
    if solver.mode not in ("reduced", "full"):
        raise ConfigError("solver.mode", "expected 'reduced' or 'full'")

    return Scenario(
        radio=radio, bss=tuple(bss), targets=tuple(targets),
        num_blocks=_get(cfg, "num_blocks", "", 40, int),
        process_noise=float(_get(cfg, "process_noise", "", 1e-2)),
        ercs_noise=float(_get(cfg, "ercs_noise", "", 1e-4)),
        weights=weights, initial_std=initial_std, truth_process_noise=truth_noise,
        solver=solver, source_hash=source_hash,
    )


def load_scenario(path: str | Path) -> Scenario:
    raw = Path(path).read_bytes()
    try:
        cfg = tomllib.loads(raw.decode())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse: {exc}") from exc
    return scenario_from_dict(cfg, hashlib.sha256(raw).hexdigest())


def table1_path() -> Path:
    return Path(__file__).parent / "data" / "table1.scenario"


def table1() -> Scenario:
    return load_scenario(table1_path())


# --------------------------------------------------------------------------- geometry

def steering_vector(angle, n: int, spacing: float, wavelength: float) -> np.ndarray:
    """ULA response ``exp(j 2 pi/lambda * i d sin(angle))``; shape ``(n,)`` or ``(len(angle), n)``."""
    idx = np.arange(n)
    phase = 2 * np.pi / wavelength * spacing * np.multiply.outer(np.sin(angle), idx)
    return np.exp(1j * phase)


def steering_derivative(angle, n: int, spacing: float, wavelength: float) -> np.ndarray:
    idx = np.arange(n)
    a = steering_vector(angle, n, spacing, wavelength)
    return 1j * 2 * np.pi / wavelength * spacing * np.multiply.outer(np.cos(angle), idx) * a


def link_amplitude(bs: BsConfig, radio: RadioConfig) -> float:
    """Range-free factor ``sqrt(P G^2 lambda^2 / (4 pi)^3)`` of the link coefficient."""
    lam = radio.wavelength
    return float(np.sqrt(bs.tx_power * bs.antenna_gain ** 2 * lam ** 2 / (4 * np.pi) ** 3))


def link_geometry(bs: BsConfig, target_pos, target_vel, radio: RadioConfig) -> LinkParams:
    """AOA, AOD, delay, Doppler and range between one BS and one or more targets."""
    pos = np.atleast_2d(np.asarray(target_pos, dtype=float))
    vel = np.atleast_2d(np.asarray(target_vel, dtype=float))
    p = np.asarray(bs.position, dtype=float)
    dx = pos[:, 0] - p[0]
    dy = pos[:, 1] - p[1]
    rng = np.hypot(dx, dy)
    if np.any(rng <= 0):
        raise DegenerateLinkError("degenerate link: target at BS position")
    theta = np.arctan2(dx, dy) + bs.rx_incline
    phi = theta - bs.rx_incline + bs.tx_incline
    delay = 2 * rng / SPEED_OF_LIGHT
    doppler = -2 * (vel[:, 0] * dx + vel[:, 1] * dy) / (radio.wavelength * rng)
    squeeze = np.ndim(target_pos) == 1
    pick = (lambda a: a[0]) if squeeze else (lambda a: a)
    return LinkParams(pick(theta), pick(phi), pick(delay), pick(doppler), pick(rng))


def link_coefficient(bs: BsConfig, rng, ercs, radio: RadioConfig):
    rng = np.asarray(rng, dtype=float)
    if np.any(rng <= 0):
        raise DegenerateLinkError("degenerate link: nonpositive range")
    return np.asarray(ercs) / rng ** 2 * link_amplitude(bs, radio)


def links(state: np.ndarray, scenario: Scenario) -> list[LinkParams]:
    """Per-BS link parameters (including the coefficient) for every target."""
    st = GlobalState.from_vector(state, scenario.num_targets, scenario.num_bs)
    out = []
    for k, bs in enumerate(scenario.bss):
        g = link_geometry(bs, st.positions, st.velocities, scenario.radio)
        xi = link_coefficient(bs, g.range, st.ercs[k], scenario.radio)
        out.append(LinkParams(g.aoa, g.aod, g.delay, g.doppler, g.range, xi))
    return out


def measurement_map(state: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Stacked observables ``u`` of length ``5KQ``."""
    blocks = []
    for lk in links(state, scenario):
        blocks.append(np.concatenate([lk.aoa, lk.delay, lk.doppler, lk.coeff.real, lk.coeff.imag]))
    return np.concatenate(blocks)


def measurement_jacobian(state: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Analytic Jacobian ``dh/dstate`` of shape ``(5KQ, 4Q+2KQ)``."""
    Q, K = scenario.num_targets, scenario.num_bs
    sl = scenario.state_layout
    ml = scenario.measurement_layout
    st = GlobalState.from_vector(state, Q, K)
    lam = scenario.radio.wavelength
    H = np.zeros((ml.dim, sl.dim))
    for k, bs in enumerate(scenario.bss):
        p = np.asarray(bs.position)
        c0 = link_amplitude(bs, scenario.radio)
        for q in range(Q):
            dx, dy = st.positions[q] - p
            vx, vy = st.velocities[q]
            d2 = dx * dx + dy * dy
            d = np.sqrt(d2)
            if d <= 0:
                raise DegenerateLinkError("degenerate link: target at BS position")
            ix, iy, ivx, ivy = sl.pos_x(q), sl.pos_y(q), sl.vel_x(q), sl.vel_y(q)
            r = ml.index(k, 0, q)
            H[r, ix] = dy / d2
            H[r, iy] = -dx / d2
            r = ml.index(k, 1, q)
            H[r, ix] = 2 * dx / (SPEED_OF_LIGHT * d)
            H[r, iy] = 2 * dy / (SPEED_OF_LIGHT * d)
            r = ml.index(k, 2, q)
            s = vx * dx + vy * dy
            H[r, ix] = -2 / lam * (vx / d - s * dx / d ** 3)
            H[r, iy] = -2 / lam * (vy / d - s * dy / d ** 3)
            H[r, ivx] = -2 / lam * dx / d
            H[r, ivy] = -2 / lam * dy / d
            sig = st.ercs[k, q]
            g = c0 / d2
            dg_dx = -2 * c0 * dx / d2 ** 2
            dg_dy = -2 * c0 * dy / d2 ** 2
            for param, part, col in ((3, sig.real, sl.ercs_re(k, q)), (4, sig.imag, sl.ercs_im(k, q))):
                r = ml.index(k, param, q)
                H[r, ix] = part * dg_dx
                H[r, iy] = part * dg_dy
                H[r, col] = g
    return H


def mirror_permutation(scenario: Scenario, bs_map: Sequence[int], target_map: Sequence[int]):
    """Index maps for a mirror ``x -> -x`` that swaps BSs and targets.

    Returns ``(state_perm, state_sign, meas_perm, meas_sign)`` such that the
    mirrored state is ``sign * state[perm]`` (and likewise for measurements).
    """
    Q, K = scenario.num_targets, scenario.num_bs
    sl, ml = scenario.state_layout, scenario.measurement_layout
    sp = np.zeros(sl.dim, dtype=int)
    ss = np.ones(sl.dim)
    for q in range(Q):
        src = target_map[q]
        sp[sl.pos_x(q)], ss[sl.pos_x(q)] = sl.pos_x(src), -1
        sp[sl.pos_y(q)] = sl.pos_y(src)
        sp[sl.vel_x(q)], ss[sl.vel_x(q)] = sl.vel_x(src), -1
        sp[sl.vel_y(q)] = sl.vel_y(src)
        for k in range(K):
            sp[sl.ercs_re(k, q)] = sl.ercs_re(bs_map[k], src)
            sp[sl.ercs_im(k, q)] = sl.ercs_im(bs_map[k], src)
    mp = np.zeros(ml.dim, dtype=int)
    ms = np.ones(ml.dim)
    for k in range(K):
        for param in range(5):
            for q in range(Q):
                i = ml.index(k, param, q)
                mp[i] = ml.index(bs_map[k], param, target_map[q])
                if param == 0:
                    ms[i] = -1
    return sp, ss, mp, ms
