"""Stability map over ``(k l_l, k l_r)`` and the critical line.

Every cell is solved in internal units ``L = k = omega = 1`` so the stored
diagnostics are already rescaled: ``slope0 = phi'(0+)/L``,
``overlap0 = k rho(0+)/L`` and ``vol_revealed = k^2 V_r / L``.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from . import bvp
from .bvp import BvpConfig
from .exceptions import LatentBookError, ParameterError
from .model import ModelParams

CELL_COLUMNS = ("k_ll", "k_lr", "slope0", "overlap0", "vol_revealed", "stable")
LINE_COLUMNS = ("ratio", "zeta_c", "k_lr")


@dataclass(frozen=True)
class StabilityCell:
    k_ll: float
    k_lr: float
    slope0: float = math.nan
    overlap0: float = math.nan
    vol_revealed: float = math.nan
    error: Optional[str] = None

    @property
    def stable(self) -> bool:
        return bool(self.slope0 < 0)

    @property
    def ok(self) -> bool:
        return self.error is None


def solve_cell(k_ll: float, k_lr: float, cfg: Optional[BvpConfig] = None) -> StabilityCell:
    """Solve one point of the map; failures are recorded, not raised."""
    if k_ll <= 0 or k_lr <= 0:
        raise ParameterError("stability coordinates must be > 0")
    try:
        profile = bvp.solve_stationary(ModelParams.from_dimensionless(k_ll, k_lr), cfg)
    except LatentBookError as exc:
        return StabilityCell(k_ll, k_lr, error=str(exc))
    return StabilityCell(
        k_ll,
        k_lr,
        slope0=bvp.slope_at_origin(profile),
        overlap0=bvp.overlap_proxy(profile),
        vol_revealed=bvp.revealed_volume(profile),
    )


def _solve_cell_args(args: tuple[float, float, Optional[BvpConfig]]) -> StabilityCell:
    return solve_cell(*args)


def default_axis(n: int = 60, lo: float = 0.02, hi: float = 3.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def sweep(
    k_ll_values: Sequence[float],
    k_lr_values: Sequence[float],
    cfg: Optional[BvpConfig] = None,
    workers: Optional[int] = None,
) -> list[StabilityCell]:
    """Solve every ``(k_ll, k_lr)`` pair; output is row-major in ``k_lr`` then ``k_ll``.

    The order is fixed regardless of ``workers``.
    """
    k_ll_values = np.asarray(k_ll_values, dtype=float)
    k_lr_values = np.asarray(k_lr_values, dtype=float)
    if np.any(k_ll_values <= 0) or np.any(k_lr_values <= 0):
        raise ParameterError("stability coordinates must be > 0")
    jobs = [(float(a), float(b), cfg) for b in k_lr_values for a in k_ll_values]
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) < 2 * workers:
        return [_solve_cell_args(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_cell_args, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def _slope0(k_ll: float, k_lr: float, cfg: Optional[BvpConfig]) -> float:
    return bvp.slope_at_origin(bvp.solve_stationary(ModelParams.from_dimensionless(k_ll, k_lr), cfg))


def critical_zeta_for_ratio(
    ratio: float,
    cfg: Optional[BvpConfig] = None,
    bracket: tuple[float, float] = (1.0, 2.5),
    xtol: float = 1e-6,
) -> float:
    """Root in ``k l_l`` of the origin slope at fixed ``l_r / l_l``."""
    if ratio <= 0:
        raise ParameterError("ratio must be > 0; the ratio -> 0 limit is 2")

    def f(z: float) -> float:
        return _slope0(z, ratio * z, cfg)

    a, b = bracket
    fa, fb = f(a), f(b)
    if fa * fb > 0:
        raise LatentBookError(f"no sign change of the origin slope on [{a}, {b}] for ratio {ratio}")
    return float(brentq(f, a, b, xtol=xtol))


@dataclass(frozen=True)
class CriticalLine:
    """Critical ``k l_l`` as a function of ``l_r / l_l`` (also tabulated against ``k l_r``)."""

    k_lr: np.ndarray
    zeta_c: np.ndarray
    excluded: dict[float, str] = field(default_factory=dict)

    @property
    def ratio(self) -> np.ndarray:
        return self.k_lr / self.zeta_c

    def __call__(self, ratio: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Interpolate in ``log(ratio)``; values beyond the table are held constant."""
        if self.zeta_c.size == 0:
            raise LatentBookError("critical line is empty")
        order = np.argsort(self.ratio)
        r, z = self.ratio[order], self.zeta_c[order]
        out = np.interp(np.log(np.maximum(np.asarray(ratio, dtype=float), 1e-300)), np.log(r), z)
        return float(out) if np.ndim(ratio) == 0 else out

    def to_csv(self, path: Union[str, Path]) -> None:
        order = np.argsort(self.ratio)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(LINE_COLUMNS)
            for i in order:
                w.writerow([repr(float(self.ratio[i])), repr(float(self.zeta_c[i])), repr(float(self.k_lr[i]))])


def critical_line(
    cells: Iterable[StabilityCell],
    cfg: Optional[BvpConfig] = None,
    xtol: float = 1e-4,
) -> CriticalLine:
    """Locate ``slope0 = 0`` along each ``k l_r`` row of a sweep.

    The sweep supplies a bracketing sign change; the root is then refined by
    Brent iterations on fresh solves to ``xtol`` in ``k l_l``.  Rows without a
    bracket are reported in ``excluded``.
    """
    rows: dict[float, list[StabilityCell]] = {}
    for c in cells:
        rows.setdefault(c.k_lr, []).append(c)
    k_lr_out, z_out = [], []
    excluded: dict[float, str] = {}
    for k_lr in sorted(rows):
        row = sorted((c for c in rows[k_lr] if c.ok and math.isfinite(c.slope0)), key=lambda c: c.k_ll)
        s = np.array([c.slope0 for c in row])
        idx = np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]
        if idx.size == 0:
            excluded[k_lr] = "no sign change of slope0 along the row"
            continue
        a, b = row[idx[0]].k_ll, row[idx[0] + 1].k_ll
        try:
            z = brentq(lambda z: _slope0(z, k_lr, cfg), a, b, xtol=xtol)
        except (ValueError, LatentBookError) as exc:
            excluded[k_lr] = f"refinement failed: {exc}"
            continue
        k_lr_out.append(k_lr)
        z_out.append(z)
    return CriticalLine(np.array(k_lr_out), np.array(z_out), excluded)


def line_from_ratios(
    ratios: Sequence[float] = (1e-3, 0.01, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, 1.0, 1.5, 2.0),
    cfg: Optional[BvpConfig] = None,
    xtol: float = 1e-6,
) -> CriticalLine:
    """Critical line from direct fixed-ratio root finds (no sweep needed)."""
    z = np.array([critical_zeta_for_ratio(r, cfg, xtol=xtol) for r in ratios])
    return CriticalLine(np.asarray(ratios, dtype=float) * z, z)


@dataclass(frozen=True)
class AssetLocation:
    k_ll: float
    k_lr: float
    ratio: float
    zeta_c: float
    margin: float

    @property
    def stable(self) -> bool:
        return self.margin > 0


def locate_asset(fit: Any, line: Callable[[float], float]) -> AssetLocation:
    """Place calibrated parameters on the map.

    ``fit`` is anything exposing ``k``, ``l_latent`` and ``l_revealed``
    (a :class:`~latentbook.calibration.FitResult` or :class:`ModelParams`).
    ``margin = zeta_c(ratio) - k l_l``; positive means stable.
    """
    k, l_l, l_r = float(fit.k), float(fit.l_latent), float(fit.l_revealed)
    if k <= 0 or l_l <= 0 or l_r < 0:
        raise ParameterError("fitted parameters must be positive")
    ratio = l_r / l_l
    z = float(line(ratio))
    return AssetLocation(k * l_l, k * l_r, ratio, z, z - k * l_l)


def write_cells_csv(cells: Sequence[StabilityCell], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CELL_COLUMNS)
        for c in cells:
            w.writerow([repr(c.k_ll), repr(c.k_lr), repr(c.slope0), repr(c.overlap0), repr(c.vol_revealed), int(c.stable)])
