"""Finite-difference solver for the general stationary book.

The three linear ODEs are solved in dimensionless form (``L = k = omega = 1``,
``x = k xi``) for the unknowns ``rho_B``, ``u = rho_A - x`` and ``phi`` with
second-order differences on a graded grid, then scaled back.  Working with
the decaying deviation ``u`` keeps the far-field Neumann condition
``u' = 0`` well conditioned.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analytic import BookProfile, Provenance, default_grid
from .exceptions import ParameterError, SolverError
from .model import ModelParams, gamma


@dataclass(frozen=True)
class BvpConfig:
    n_points: int = 2001
    xi_max: Optional[float] = None  # default 20 * max(1/k, l_l)
    clustering: float = 8.0
    tolerance: float = 1e-10
    max_refinements: int = 2

    def __post_init__(self) -> None:
        if self.n_points < 101:
            raise ParameterError("n_points must be >= 101")
        if self.tolerance <= 0:
            raise ParameterError("tolerance must be > 0")
        if self.clustering < 0:
            raise ParameterError("clustering must be >= 0")
        if self.max_refinements < 0:
            raise ParameterError("max_refinements must be >= 0")

    def resolve_xi_max(self, p: ModelParams) -> float:
        floor = 10.0 * p.depth
        if self.xi_max is None:
            return 20.0 * p.depth
        if self.xi_max < floor * (1 - 1e-12):
            raise ParameterError(f"xi_max must be >= 10 * max(1/k, l_l) = {floor:.6g}")
        return float(self.xi_max)


def _second_derivative_weights(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Three-point weights for ``f''`` at interior nodes of a nonuniform grid."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    wm = 2.0 / (hm * (hm + hp))
    wp = 2.0 / (hp * (hm + hp))
    return wm, -(wm + wp), wp


def one_sided_slope_weights(h1: float, h2: float) -> tuple[float, float, float]:
    """Second-order forward-difference weights for ``f'(x0)`` from nodes at +h1, +h2."""
    return (
        -(h1 + h2) / (h1 * h2),
        h2 / (h1 * (h2 - h1)),
        -h1 / (h2 * (h2 - h1)),
    )


def _assemble(x: np.ndarray, zeta: float, eta: float) -> tuple[sp.csc_matrix, np.ndarray]:
    n = x.size
    G = gamma(x)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    b = np.zeros(3 * n)

    def add(r, c, v):
        r, c, v = np.broadcast_arrays(np.atleast_1d(r), np.atleast_1d(c), np.atleast_1d(np.asarray(v, dtype=float)))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    i = np.arange(1, n - 1)
    wm, w0, wp = _second_derivative_weights(x)
    RB, U, PH = 0, 1, 2

    # latent bid: zeta^2 rho_B'' - rho_B = 0
    r = 3 * i + RB
    add(r, 3 * (i - 1) + RB, zeta**2 * wm)
    add(r, 3 * i + RB, zeta**2 * w0 - 1.0)
    add(r, 3 * (i + 1) + RB, zeta**2 * wp)

    # latent ask deviation: zeta^2 u'' - G u - (1-G) phi = G x
    r = 3 * i + U
    add(r, 3 * (i - 1) + U, zeta**2 * wm)
    add(r, 3 * i + U, zeta**2 * w0 - G[i])
    add(r, 3 * (i + 1) + U, zeta**2 * wp)
    add(r, 3 * i + PH, -(1.0 - G[i]))
    b[r] = G[i] * x[i]

    # revealed: eta^2 phi'' - G u - (1-G) phi + rho_B = G x
    r = 3 * i + PH
    if eta > 0:
        add(r, 3 * (i - 1) + PH, eta**2 * wm)
        add(r, 3 * (i + 1) + PH, eta**2 * wp)
        add(r, 3 * i + PH, eta**2 * w0 - (1.0 - G[i]))
    else:
        add(r, 3 * i + PH, -(1.0 - G[i]))
    add(r, 3 * i + U, -G[i])
    add(r, 3 * i + RB, 1.0)
    b[r] = G[i] * x[i]

    # origin: rho_B(0+) = rho_A(0+), rho_B'(0+) = -rho_A'(0+)
    c0, c1, c2 = one_sided_slope_weights(x[1] - x[0], x[2] - x[0])
    add(0, [RB, U], [1.0, -1.0])
    add(1, [RB, 3 + RB, 6 + RB, U, 3 + U, 6 + U], [c0, c1, c2, c0, c1, c2])
    b[1] = -1.0
    if eta > 0:
        add(2, PH, 1.0)
    else:
        # no condition at 0 without revealed diffusion: quadratic extrapolation of 0+
        h1, h2, h3 = x[1] - x[0], x[2] - x[0], x[3] - x[0]
        l1 = h2 * h3 / ((h1 - h2) * (h1 - h3))
        l2 = h1 * h3 / ((h2 - h1) * (h2 - h3))
        l3 = h1 * h2 / ((h3 - h1) * (h3 - h2))
        add(2, [PH, 3 + PH, 6 + PH, 9 + PH], [1.0, -l1, -l2, -l3])

    # far field: rho_B = 0, rho_A' = 1 (u' = 0), phi = 0
    m = n - 1
    d0, d1, d2 = one_sided_slope_weights(x[m - 1] - x[m], x[m - 2] - x[m])
    add(3 * m + RB, 3 * m + RB, 1.0)
    add(3 * m + U, [3 * m + U, 3 * (m - 1) + U, 3 * (m - 2) + U], [d0, d1, d2])
    if eta > 0:
        add(3 * m + PH, 3 * m + PH, 1.0)
    else:
        add(3 * m + PH, [3 * m + PH, 3 * m + U, 3 * m + RB], [-(1.0 - G[m]), -G[m], 1.0])
        b[3 * m + PH] = G[m] * x[m]

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n)
    )
    return A, b


def solve_rescaled(x: np.ndarray, zeta: float, eta: float, tolerance: float = 1e-10) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Solve on a dimensionless grid ``x``; returns ``(rho_B, rho_A, phi, residual)``.

    ``zeta = k l_l`` and ``eta = k l_r``.  The residual is the normwise
    backward error ``|A z - b| / (|A| |z| + |b|)`` in the max-norm.
    """
    if zeta <= 0:
        raise ParameterError("D_latent = 0 admits no solution compatible with the far-field conditions")
    A, b = _assemble(x, zeta, eta)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"singular stationary system: {exc}") from exc
    z = lu.solve(b)
    if not np.all(np.isfinite(z)):
        raise SolverError("non-finite solution of the stationary system")
    a_norm = float(abs(A).sum(axis=1).max())
    scale = a_norm * np.max(np.abs(z)) + np.max(np.abs(b))
    residual = float(np.max(np.abs(A @ z - b)) / scale)
    z = z.reshape(-1, 3)
    rho_b = z[:, 0]
    rho_a = z[:, 1] + x
    phi = z[:, 2]
    return rho_b, rho_a, phi, residual


def solve_stationary(p: ModelParams, cfg: Optional[BvpConfig] = None, grid: Optional[np.ndarray] = None) -> BookProfile:
    """Stationary book for arbitrary ``D_r >= 0``.

    ``grid`` overrides the graded default grid built from ``cfg``.
    """
    cfg = cfg or BvpConfig()
    p.require_equal_rates("solve_stationary")
    zeta, eta = p.k_ll, p.k_lr
    n = cfg.n_points
    refinements = 0
    while True:
        if grid is not None:
            xi = np.asarray(grid, dtype=float)
            if xi[0] != 0.0 or np.any(np.diff(xi) <= 0):
                raise ParameterError("bvp grid must start at 0 and increase strictly")
        else:
            xi = default_grid(p, n, cfg.clustering, cfg.resolve_xi_max(p))
        rho_b, rho_a, phi, residual = solve_rescaled(p.k * xi, zeta, eta, cfg.tolerance)
        if residual <= cfg.tolerance:
            break
        if grid is not None or refinements >= cfg.max_refinements:
            raise SolverError(f"discrete residual {residual:.3g} above tolerance after {refinements} refinements")
        refinements += 1
        n = 2 * n - 1

    scale = p.L_latent / p.k
    slope = float(p.L_latent * _slope(p.k * xi, phi)) if eta > 0 else None
    diag = {
        "residual": residual,
        "refinements": refinements,
        "n_points": int(xi.size),
        "slope_at_origin": slope,
        "stable": None if slope is None else slope < 0,
        "has_hole": bool(np.any(rho_b < 0) or np.any(phi[1:] > 0)),
    }
    return BookProfile(xi, scale * rho_b, scale * rho_a, scale * phi, p, Provenance.BVP, diag)


def write_diagnostics(profile: BookProfile, path: Union[str, Path]) -> None:
    """JSON sidecar with solver diagnostics."""
    payload = {"params": None if profile.params is None else profile.params.to_dict()}
    payload.update({k: v for k, v in profile.diagnostics.items()})
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


# -- scalar diagnostics -------------------------------------------------------


def _slope(x: np.ndarray, f: np.ndarray) -> float:
    c0, c1, c2 = one_sided_slope_weights(x[1] - x[0], x[2] - x[0])
    return c0 * f[0] + c1 * f[1] + c2 * f[2]


def slope_at_origin(b: BookProfile) -> float:
    """One-sided second-order estimate of ``phi_r'(0+)``."""
    if b.params is not None and b.params.D_revealed == 0.0:
        raise ParameterError("phi_r jumps at the origin when D_revealed = 0; use jump_at_origin")
    if b.grid[0] != 0.0:
        raise ParameterError("slope_at_origin needs a grid starting at xi = 0")
    return float(_slope(b.grid, b.phi_revealed))


def overlap_proxy(b: BookProfile) -> float:
    """Latent y-intercept ``rho_B(0+)`` measuring the latent bid/ask overlap."""
    if b.grid[0] != 0.0:
        # linear extrapolation to the origin
        x0, x1 = b.grid[:2]
        y0, y1 = b.rho_latent_bid[:2]
        return float(y0 - x0 * (y1 - y0) / (x1 - x0))
    return float(b.rho_latent_bid[0])


def revealed_volume(b: BookProfile) -> float:
    """``|integral of phi_r 1{phi_r < 0}|`` by the trapezoidal rule on the grid.

    Sign changes inside a cell are located by linear interpolation so that
    only the negative part is integrated.
    """
    x = b.grid
    f = b.phi_revealed
    total = 0.0
    f0, f1 = f[:-1], f[1:]
    h = np.diff(x)
    both = (f0 <= 0) & (f1 <= 0)
    total += np.sum(0.5 * (f0[both] + f1[both]) * h[both])
    cross = (f0 * f1 < 0)
    if np.any(cross):
        a, c, hh = f0[cross], f1[cross], h[cross]
        neg = np.where(a < 0, a, c)
        frac = np.abs(neg) / (np.abs(a) + np.abs(c))
        total += np.sum(0.5 * neg * frac * hh)
    return float(abs(total))


def solver_config_dict(cfg: BvpConfig) -> dict:
    return asdict(cfg)
