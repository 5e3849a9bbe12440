"""Closed-form stationary books for D_r = 0 and D_r = D_l.

Profiles live on the half line ``xi >= 0``.  A grid may start exactly at
``xi = 0``; that node holds the one-sided ``0+`` limits.  The bid-side
(negative ``xi``) values follow from ``rho_B(xi) = rho_A(-xi)`` and
``phi(xi) = -phi(-xi)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .exceptions import ParameterError, UnstableRegimeError
from .model import ModelParams, g_factor, gamma_slope_at_zero

#: Half width of the window around k l_l = 1 reported as the degenerate branch.
DEGENERATE_TOL = 1e-4
# the pole-free form is exact everywhere; the poles cost digits within ~5% of zeta = 1
POLE_FREE_WINDOW = 0.05

CSV_COLUMNS = ("xi", "rho_latent_bid", "rho_latent_ask", "phi_revealed")


class Provenance(str, Enum):
    ANALYTIC_DR0 = "analytic_dr0"
    ANALYTIC_DREQ = "analytic_dreq"
    BVP = "bvp"
    SIMULATION = "simulation"


@dataclass(frozen=True)
class BookProfile:
    """Stationary (or time-averaged) densities on the half line ``xi >= 0``."""

    grid: np.ndarray
    rho_latent_bid: np.ndarray
    rho_latent_ask: np.ndarray
    phi_revealed: np.ndarray
    params: Optional[ModelParams]
    provenance: Provenance
    diagnostics: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=float) for a in (self.grid, self.rho_latent_bid, self.rho_latent_ask, self.phi_revealed)]
        n = arrays[0].shape
        if arrays[0].ndim != 1 or any(a.shape != n for a in arrays):
            raise ParameterError("profile arrays must be 1-d and of equal length")
        if arrays[0].size < 2 or arrays[0][0] < 0 or np.any(np.diff(arrays[0]) <= 0):
            raise ParameterError("grid must be strictly increasing and start at xi >= 0")
        for name, arr in zip(("grid", "rho_latent_bid", "rho_latent_ask", "phi_revealed"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def rho_revealed_ask(self) -> np.ndarray:
        return np.maximum(-self.phi_revealed, 0.0)

    @property
    def rho_revealed_bid(self) -> np.ndarray:
        return np.maximum(self.phi_revealed, 0.0)

    def full_line(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Reconstruct ``(x, rho_B, rho_A, phi)`` on the full line.

        When the grid starts at 0 the origin appears twice (``0-`` and ``0+``)
        so that the jump of a discontinuous ``phi`` is kept.
        """
        xi = self.grid
        x = np.concatenate([-xi[::-1], xi])
        rho_b = np.concatenate([self.rho_latent_ask[::-1], self.rho_latent_bid])
        rho_a = np.concatenate([self.rho_latent_bid[::-1], self.rho_latent_ask])
        phi = np.concatenate([-self.phi_revealed[::-1], self.phi_revealed])
        return x, rho_b, rho_a, phi

    def rescaled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(k xi, k rho_B/L, k rho_A/L, k phi/L)``."""
        if self.params is None:
            raise ParameterError("rescaling needs model parameters")
        p = self.params
        return (
            p.k * self.grid,
            p.rescale_density(self.rho_latent_bid),
            p.rescale_density(self.rho_latent_ask),
            p.rescale_density(self.phi_revealed),
        )

    def scaled(self, factor: float) -> "BookProfile":
        """Multiply every density by ``factor`` (densities are linear in L)."""
        params = None if self.params is None else self.params.replace(L_latent=self.params.L_latent * factor)
        return BookProfile(
            self.grid,
            self.rho_latent_bid * factor,
            self.rho_latent_ask * factor,
            self.phi_revealed * factor,
            params,
            self.provenance,
            dict(self.diagnostics),
        )

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in zip(self.grid, self.rho_latent_bid, self.rho_latent_ask, self.phi_revealed):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(
        cls,
        path: Union[str, Path],
        params: Optional[ModelParams] = None,
        provenance: Provenance = Provenance.BVP,
    ) -> "BookProfile":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
                raise ParameterError(f"profile CSV header must be {','.join(CSV_COLUMNS)}")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], params, provenance)


def default_grid(p: ModelParams, n_points: int = 2001, clustering: float = 8.0, xi_max: Optional[float] = None) -> np.ndarray:
    """Half-line grid clustered near the origin.

    ``xi = xi_max * sinh(c s) / sinh(c)`` on a uniform ``s`` in ``[0, 1]``:
    nearly geometric spacing for small ``xi`` and uniform in the tail, so the
    boundary layer of width ``l_l`` and the ``1/k`` tail are both resolved.
    """
    if n_points < 3:
        raise ParameterError("grid needs at least 3 points")
    if xi_max is None:
        xi_max = 20.0 * p.depth
    s = np.linspace(0.0, 1.0, n_points)
    if clustering <= 0:
        return xi_max * s
    return xi_max * np.sinh(clustering * s) / math.sinh(clustering)


def _as_grid(grid: Any) -> np.ndarray:
    xi = np.asarray(grid, dtype=float)
    if xi.ndim != 1 or xi.size < 1 or xi[0] < 0 or np.any(np.diff(xi) <= 0):
        raise ParameterError("grid must be a strictly increasing 1-d array with xi >= 0")
    return xi


def _x_over_expm1(x: np.ndarray) -> np.ndarray:
    """``x / (exp(x) - 1)`` with its limit 1 at the origin."""
    out = np.ones_like(x)
    nz = x != 0
    out[nz] = x[nz] / np.expm1(x[nz])
    return out


# -- D_r = 0 ------------------------------------------------------------------


def stationary_dr0(p: ModelParams, grid: Any = None) -> BookProfile:
    """Closed-form book without revealed diffusion.

    Unequal reveal/unreveal rates are supported: the latent length uses the
    reveal rate and the revealed density is multiplied by
    ``omega / omega_unreveal``.
    """
    if p.D_revealed != 0.0:
        raise ParameterError("stationary_dr0 requires D_revealed == 0")
    xi = default_grid(p) if grid is None else _as_grid(grid)
    L, k, l_l = p.L_latent, p.k, p.l_latent
    overlap = 0.5 * L * l_l * np.exp(-xi / l_l)
    rho_b = overlap
    rho_a = L * xi + overlap
    # L xi Gamma/(1-Gamma) = (L/k) * kxi/(exp(kxi)-1), limit L/k at 0
    phi = (p.omega / p.omega_unreveal) * (overlap - (L / k) * _x_over_expm1(k * xi))
    diag = {"phi_discontinuous_at_origin": True, "jump_at_origin": jump_at_origin(p)}
    return BookProfile(xi, rho_b, rho_a, phi, p, Provenance.ANALYTIC_DR0, diag)


def jump_at_origin(p: ModelParams) -> float:
    """``phi(0-) - phi(0+)`` for the D_r = 0 book."""
    if p.D_revealed != 0.0:
        raise ParameterError("the revealed book is continuous when D_revealed > 0")
    slope = gamma_slope_at_zero(p.profile)
    if slope == 0.0:
        raise ParameterError("jump is undefined when the conversion profile is flat at 0+")
    jump = -p.L_latent * (p.l_latent + 2.0 / (slope * p.k))
    return jump * p.omega / p.omega_unreveal


# -- D_r = D_l ------------------------------------------------------------------


def _h2(u: np.ndarray) -> np.ndarray:
    """``(exp(u) - 1 - u) / u^2``, Taylor series near 0."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-2
    us = u[small]
    out[small] = 0.5 + us * (1.0 / 6 + us * (1.0 / 24 + us * (1.0 / 120 + us / 720)))
    ub = u[~small]
    out[~small] = (np.expm1(ub) - ub) / ub**2
    return out


def _dreq_singular_part(x: np.ndarray, zeta: float) -> np.ndarray:
    """Terms of the revealed density carrying ``1/(zeta^2 - 1)`` poles.

    Away from ``zeta = 1`` the textbook form is used; near it the poles are
    cancelled analytically, leaving
    ``-x e^{-x} (1 + 2 x h2(u)) / (1 + zeta)^2`` with ``u = x (zeta-1)/zeta``.
    """
    if abs(zeta - 1.0) >= POLE_FREE_WINDOW:
        a = 1.0 / (zeta**2 - 1.0)
        ab = 2.0 * zeta**2 * a**2
        return a * x * np.exp(-x) + ab * (np.exp(-x) - np.exp(-x / zeta))
    u = x * (zeta - 1.0) / zeta
    return -x * np.exp(-x) * (1.0 + 2.0 * x * _h2(u)) / (1.0 + zeta) ** 2


def dreq_rescaled(x: Any, zeta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rescaled ``(k rho_B/L, k rho_A/L, k phi/L)`` at ``x = k xi`` for ``k l_l = zeta``."""
    x = np.asarray(x, dtype=float)
    g = g_factor(zeta)
    gt = g / (zeta * (zeta + 2.0))
    e_l = np.exp(-x / zeta)
    phi = _dreq_singular_part(x, zeta) + gt * np.exp(-(1.0 + 1.0 / zeta) * x) + (0.5 * g * x / zeta - gt) * e_l
    rho_b = g * e_l
    rho_a = x + g * e_l + phi
    return rho_b, rho_a, phi


def dreq_slope_rescaled(zeta: float) -> float:
    """``phi'(0+) / L`` of the equal-diffusivity book (dimensionless)."""
    return (zeta**3 + 2 * zeta**2 - 3 * zeta - 8) / ((zeta + 1) ** 2 * (3 * zeta + 8))


def stationary_dreq(p: ModelParams, grid: Any = None) -> BookProfile:
    """Closed-form book for equal latent and revealed diffusivities."""
    if not math.isclose(p.D_revealed, p.D_latent, rel_tol=1e-12):
        raise ParameterError("stationary_dreq requires D_revealed == D_latent")
    p.require_equal_rates("stationary_dreq")
    xi = default_grid(p) if grid is None else _as_grid(grid)
    zeta = p.k_ll
    rb, ra, phi = dreq_rescaled(p.k * xi, zeta)
    scale = p.L_latent / p.k
    diag = {
        "degenerate_branch": abs(zeta - 1.0) < DEGENERATE_TOL,
        # positive tail beyond k l_l > 1 (asymptotically unstable solution)
        "tail_sign": float(np.sign(phi[-1])) if phi.size else 0.0,
        "slope_at_origin": p.L_latent * dreq_slope_rescaled(zeta),
    }
    return BookProfile(xi, scale * rb, scale * ra, scale * phi, p, Provenance.ANALYTIC_DREQ, diag)


# -- thresholds ---------------------------------------------------------------


def critical_zeta(ratio: float) -> float:
    """Critical ``k l_l`` for ``l_r / l_l`` equal to 0 or 1.

    Other ratios have no closed form; use :func:`latentbook.stability.critical_line`.
    """
    if ratio == 0:
        return 2.0
    if ratio == 1:
        s = math.sqrt(87.0)
        return (-2.0 + (73.0 - 6.0 * s) ** (1.0 / 3.0) + (73.0 + 6.0 * s) ** (1.0 / 3.0)) / 3.0
    raise ParameterError("closed-form critical value exists only for ratio 0 or 1")


@dataclass(frozen=True)
class Amplitude:
    """Maximum revealed density: closed-form estimate and exact grid maximum."""

    estimate: float
    grid_max: float


def max_amplitude(p: ModelParams, grid: Any = None) -> Amplitude:
    """Maximum of ``|phi_r|`` below the critical line."""
    p.require_equal_rates("max_amplitude")
    zeta = p.k_ll
    scale = p.L_latent / p.k
    if p.D_revealed == 0.0:
        zc = critical_zeta(0.0)
        if zeta >= zc:
            raise UnstableRegimeError(f"k l_l = {zeta:.4g} >= zeta_c = {zc}")
        profile = stationary_dr0(p, grid)
        return Amplitude(scale * (1.0 - zeta / zc), float(np.max(np.abs(profile.phi_revealed))))
    if math.isclose(p.D_revealed, p.D_latent, rel_tol=1e-12):
        zc = critical_zeta(1.0)
        if zeta >= zc:
            raise UnstableRegimeError(f"k l_l = {zeta:.4g} >= zeta_c = {zc:.6f}")
        coef = zc * (3 * zc**2 + 4 * zc - 3) / ((1 + zc) ** 2 * (8 + 3 * zc))
        estimate = scale / math.e * coef * (1.0 - zeta / zc)
        profile = stationary_dreq(p, grid)
        return Amplitude(estimate, float(np.max(np.abs(profile.phi_revealed))))
    raise ParameterError("max_amplitude needs D_revealed = 0 or D_revealed = D_latent")
