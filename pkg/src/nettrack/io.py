"""CSV and manifest writers/readers for simulation outputs.

Floats are written with ``repr`` so every value round-trips exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


BLOCK_FIELDS = ("true_x", "true_y", "true_vx", "true_vy", "est_x", "est_y", "est_vx", "est_vy",
                "delta_x", "delta_v", "err_x", "err_v")


def blocks_header(num_targets: int) -> list[str]:
    cols = ["n"]
    for name in BLOCK_FIELDS:
        cols += [f"{name}_q{q}" for q in range(num_targets)]
    return cols


def write_blocks(path, records, num_targets: int) -> None:
    """One row per block; per-target quantities are suffixed ``_q{q}``."""
    Q = num_targets
    header = blocks_header(Q)
    rows = []
    for r in records:
        t, e = r.truth, r.posterior
        row = [r.n]
        for src in (t, e):
            for part in range(4):
                row += list(src[part * Q:(part + 1) * Q])
        row += list(r.delta_x) + list(r.delta_v) + list(r.err_x) + list(r.err_v)
        rows.append(row)
    write_table(path, header, rows)


def write_rmse(path, result) -> None:
    N, Q = result.rmse_x.shape
    header = ["n"] + [f"{c}_q{q}" for c in ("rmse_x", "rmse_v", "pcrb_x", "pcrb_v") for q in range(Q)]
    rows = [[n, *result.rmse_x[n], *result.rmse_v[n], *result.pcrb_x[n], *result.pcrb_v[n]] for n in range(N)]
    write_table(path, header, rows)


def write_pcrb(path, delta_x: np.ndarray, delta_v: np.ndarray) -> None:
    N, Q = delta_x.shape
    header = ["n"] + [f"delta_x_q{q}" for q in range(Q)] + [f"delta_v_q{q}" for q in range(Q)]
    write_table(path, header, [[n, *delta_x[n], *delta_v[n]] for n in range(N)])


def write_beampattern(path, angles_deg: np.ndarray, gain: np.ndarray) -> None:
    db = 10 * np.log10(np.maximum(gain, 1e-300))
    write_table(path, ["angle_deg", "gain_db"], zip(angles_deg, db))


def write_manifest(path, entries: dict) -> None:
    """``key = value`` lines; strings are quoted, numbers use full precision."""
    lines = []
    for key, value in entries.items():
        if isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        else:
            lines.append(f"{key} = {_fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n")
