"""Metaorder impact: static-book inversions, reference curves and simulations.

The geometric impact treats the revealed ask book as frozen: a buy volume
``Q`` eats through it up to the price ``p`` with ``Q = -int_0^p phi_r``.
Closed forms exist for ``D_r = 0`` (through the dilogarithm) and for
``D_r = D_l``; both are inverted by bisection.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc

from . import sim
from .analytic import POLE_FREE_WINDOW, dreq_rescaled
from .exceptions import ImpactDivergence, ParameterError
from .model import ModelParams, g_factor

TRAJECTORY_COLUMNS = ("t", "Q", "price_mean", "price_stderr", "fair_price_mean", "imbalance_mean")
EXTRA_COLUMNS = ("mid_price_mean", "n_members")

_ZETA2 = math.pi**2 / 6.0


# -- dilogarithm -----------------------------------------------------------------


def _li2_series(y: np.ndarray, n_terms: int = 64) -> np.ndarray:
    k = np.arange(1, n_terms + 1, dtype=float)
    # Horner-free evaluation: y^k / k^2 summed from the small terms upward
    powers = y[..., None] ** k
    return np.sum(powers[..., ::-1] / (k[::-1] ** 2), axis=-1)


def dilogarithm(y: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """``Li2(y) = sum_k y^k / k^2`` on ``[0, 1]``.

    The series is summed directly for ``y <= 1/2`` (64 terms leave an error
    below 1e-21) and through ``Li2(y) = pi^2/6 - ln(y) ln(1-y) - Li2(1-y)``
    above.
    """
    arr = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ParameterError("dilogarithm is implemented on [0, 1]")
    out = np.empty_like(arr)
    low = arr <= 0.5
    out[low] = _li2_series(arr[low])
    hi = arr[~low]
    z = 1.0 - hi
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(z > 0, np.log(hi) * np.log(np.where(z > 0, z, 1.0)), 0.0)
    out[~low] = _ZETA2 - cross - _li2_series(z)
    return float(out) if np.ndim(y) == 0 else out


# -- integrals of exponentials ----------------------------------------------------


def _int_exp(c: float, X: np.ndarray) -> np.ndarray:
    """``int_0^X exp(-c x) dx``."""
    return -np.expm1(-c * X) / c


def _int_x_exp(c: float, X: np.ndarray) -> np.ndarray:
    """``int_0^X x exp(-c x) dx`` without cancellation at small ``c X``."""
    y = c * X
    out = np.empty_like(y)
    small = y < 0.5
    ys = y[small]
    # 1 - (1+y) e^{-y} = sum_{n>=2} (-1)^n (n-1) y^n / n!
    acc = np.zeros_like(ys)
    term = np.ones_like(ys)
    for n in range(1, 30):
        term = term * ys / n
        if n >= 2:
            acc += (-1) ** n * (n - 1) * term
    out[small] = acc
    yb = y[~small]
    out[~small] = -np.expm1(-yb) - yb * np.exp(-yb)
    return out / c**2


# -- rescaled static-book volume functions -----------------------------------------


def _phi_dr0_rescaled(x: np.ndarray, zeta: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    ratio = np.ones_like(x)
    nz = x != 0
    ratio[nz] = x[nz] / np.expm1(x[nz])
    return 0.5 * zeta * np.exp(-x / zeta) - ratio


def _volume_dr0_rescaled(X: np.ndarray, zeta: float) -> np.ndarray:
    """``-int_0^X phi`` for ``D_r = 0`` in units ``L = k = 1``.

    Equivalent to the form with ``X ln(1 - e^{-X})`` and ``Li2(e^{-X})`` after
    the reflection identity, which cancels the logarithms exactly.
    """
    X = np.asarray(X, dtype=float)
    return dilogarithm(-np.expm1(-X)) - 0.5 * zeta**2 * (-np.expm1(-X / zeta))


def _volume_dreq_degenerate(X: np.ndarray, zeta: float) -> np.ndarray:
    """Volume near ``zeta = 1``, where the textbook form loses digits to its poles.

    The pole-cancelled revealed term ``-x e^{-x} (1 + 2 x h2(eps x)) / (1+zeta)^2``
    with ``eps = (zeta - 1) / zeta`` is expanded in ``eps``; each power
    integrates to a regularized incomplete gamma function.
    """
    eps = (zeta - 1.0) / zeta
    singular = gammainc(2.0, X)
    for n in range(16):
        singular = singular + 2.0 * eps**n * gammainc(n + 3.0, X)
    singular = -singular / (1.0 + zeta) ** 2
    g = g_factor(zeta)
    gam = g / (zeta * (zeta + 2.0))
    inv = 1.0 / zeta
    regular = gam * (_int_exp(1.0 + inv, X) - _int_exp(inv, X)) + 0.5 * g * inv * _int_x_exp(inv, X)
    return -(singular + regular)


def _volume_dreq_rescaled(X: np.ndarray, zeta: float) -> np.ndarray:
    """``-int_0^X phi`` for ``D_r = D_l`` in units ``L = k = 1``."""
    X = np.asarray(X, dtype=float)
    if abs(zeta - 1.0) < POLE_FREE_WINDOW:
        return _volume_dreq_degenerate(X, zeta)
    g = g_factor(zeta)
    alpha = 1.0 / (zeta**2 - 1.0)
    beta = 2.0 * alpha * zeta**2  # alpha * beta multiplies the exponential difference
    gam = g / (zeta * (zeta + 2.0))
    eta = g / (2.0 * zeta)
    c = 1.0 + 1.0 / zeta
    inv = 1.0 / zeta
    integral = (
        alpha * _int_x_exp(1.0, X)
        + alpha * beta * (_int_exp(1.0, X) - _int_exp(inv, X))
        + gam * (_int_exp(c, X) - _int_exp(inv, X))
        + eta * _int_x_exp(inv, X)
    )
    return -integral


def _first_zero(phi: Callable[[np.ndarray], np.ndarray], scale: float) -> float:
    """First positive zero of ``phi`` (negative near 0+), or ``inf``."""
    x = np.concatenate([np.geomspace(1e-8, 1.0, 200) * scale, np.linspace(scale, 200.0 * scale + 200.0, 4000)[1:]])
    f = phi(x)
    idx = np.nonzero(f >= 0)[0]
    if idx.size == 0:
        return math.inf
    i = int(idx[0])
    if i == 0:
        return 0.0
    return float(brentq(lambda s: float(phi(np.array([s]))[0]), x[i - 1], x[i], xtol=1e-14, rtol=1e-15))


@dataclass(frozen=True)
class StaticBook:
    """Geometric-impact view of a stationary book in rescaled units."""

    params: ModelParams
    zeta: float
    volume: Callable[[np.ndarray, float], np.ndarray]
    phi: Callable[[np.ndarray, float], np.ndarray]
    factor: float  # Q = factor * rescaled volume
    x_star: float  # end of the ask-side revealed region (first zero of phi)

    @property
    def max_volume(self) -> float:
        """Revealed volume available before the impact diverges."""
        if self.x_star == 0.0:
            return 0.0
        if math.isinf(self.x_star):
            return self.factor * float(self._volume_at_infinity())
        return self.factor * float(self.volume(np.array([self.x_star]), self.zeta)[0])

    def _volume_at_infinity(self) -> float:
        return float(self.volume(np.array([400.0 * max(1.0, self.zeta)]), self.zeta)[0])

    def Q_of_price(self, price: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        P = np.asarray(price, dtype=float)
        if np.any(P < 0):
            raise ParameterError("impact price must be >= 0")
        out = self.factor * self.volume(self.params.k * np.atleast_1d(P), self.zeta)
        return float(out[0]) if np.ndim(price) == 0 else out.reshape(P.shape)

    def price_of_Q(self, Q: Union[float, np.ndarray], rtol: float = 1e-12) -> Union[float, np.ndarray]:
        Qa = np.atleast_1d(np.asarray(Q, dtype=float))
        if np.any(Qa < 0):
            raise ParameterError("executed volume must be >= 0")
        qmax = self.max_volume
        if np.any(Qa >= qmax):
            raise ImpactDivergence(f"executed volume reaches the revealed volume {qmax:.6g}; impact diverges")
        out = np.array([self._invert(float(q), rtol) for q in Qa])
        return float(out[0]) if np.ndim(Q) == 0 else out.reshape(np.shape(Q))

    def _invert(self, q: float, rtol: float) -> float:
        if q == 0.0:
            return 0.0
        target = q / self.factor
        f = lambda x: float(self.volume(np.array([x]), self.zeta)[0])
        if math.isinf(self.x_star):
            hi = 1.0
            while f(hi) < target:
                hi *= 2.0
        else:
            hi = self.x_star
        lo = 0.0
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            v = f(mid)
            if abs(v - target) <= rtol * target or hi - lo <= 4e-16 * hi:
                break
            if v < target:
                lo = mid
            else:
                hi = mid
        return mid / self.params.k


def static_book(p: ModelParams) -> StaticBook:
    """Static-book view for ``D_r = 0`` or ``D_r = D_l``."""
    zeta = p.k_ll
    factor = p.L_latent / p.k**2
    if p.D_revealed == 0.0:
        factor *= p.omega / p.omega_unreveal
        vol, phi = _volume_dr0_rescaled, _phi_dr0_rescaled
    elif math.isclose(p.D_revealed, p.D_latent, rel_tol=1e-12):
        p.require_equal_rates("geometric impact")
        vol = _volume_dreq_rescaled
        phi = lambda x, z: dreq_rescaled(x, z)[2]
    else:
        raise ParameterError("closed-form geometric impact needs D_revealed = 0 or D_revealed = D_latent")
    x_star = _first_zero(lambda x: phi(x, zeta), max(1.0, zeta))
    return StaticBook(p, zeta, vol, phi, factor, x_star)


def geometric_impact_dr0(p: ModelParams, Q: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Price reached by executing ``Q`` against the frozen ``D_r = 0`` book."""
    if p.D_revealed != 0.0:
        raise ParameterError("geometric_impact_dr0 requires D_revealed == 0")
    return static_book(p).price_of_Q(Q)


def geometric_impact_dreq(p: ModelParams, Q: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Price reached by executing ``Q`` against the frozen ``D_r = D_l`` book."""
    if not math.isclose(p.D_revealed, p.D_latent, rel_tol=1e-12):
        raise ParameterError("geometric_impact_dreq requires D_revealed == D_latent")
    return static_book(p).price_of_Q(Q)


def revealed_volume_available(p: ModelParams) -> float:
    """Ask-side revealed volume up to the first sign change of the static book."""
    return static_book(p).max_volume


def short_time_linear_coefficient(p: ModelParams) -> float:
    """``dp/dQ`` at ``Q = 0`` for ``D_r = 0``: ``k / (L (1 - k l_l / 2))``."""
    if p.D_revealed != 0.0:
        raise ParameterError("linear short-time impact applies to D_revealed == 0")
    return p.k / (p.L_latent * (p.omega / p.omega_unreveal) * (1.0 - p.k_ll / 2.0))


def short_time_sqrt_coefficient(p: ModelParams, slope0: Optional[float] = None) -> float:
    """``p / sqrt(Q)`` at small ``Q`` when ``D_r > 0``: ``sqrt(2 / |phi'(0+)|)``.

    ``slope0`` is ``phi'(0+)`` in physical units; it defaults to the
    equal-diffusivity closed form.
    """
    if slope0 is None:
        from .analytic import dreq_slope_rescaled

        slope0 = p.L_latent * dreq_slope_rescaled(p.k_ll)
    if slope0 >= 0:
        raise ImpactDivergence("non-negative origin slope: no revealed liquidity at the price")
    return math.sqrt(2.0 / abs(slope0))


# -- LLOB references ------------------------------------------------------------


def llob_reference(
    p: ModelParams, Q: Union[float, np.ndarray], regime: str = "fast", m0: Optional[float] = None
) -> Union[float, np.ndarray]:
    """Locally linear book impact curves.

    fast: ``sqrt(2 Q / L)``; slow: ``sqrt(alpha Q / (pi L))`` with
    participation ``alpha = m0 / (D_l L)``.
    """
    Qa = np.asarray(Q, dtype=float)
    if np.any(Qa < 0):
        raise ParameterError("Q must be >= 0")
    if regime == "fast":
        out = np.sqrt(2.0 * Qa / p.L_latent)
    elif regime == "slow":
        if m0 is None:
            raise ParameterError("the slow reference needs the execution rate m0")
        alpha = abs(m0) / (p.D_latent * p.L_latent)
        out = np.sqrt(alpha * Qa / (math.pi * p.L_latent))
    else:
        raise ParameterError(f"unknown regime {regime!r}")
    return float(out) if np.ndim(Q) == 0 else out


# -- metaorder simulations -------------------------------------------------------


@dataclass(frozen=True)
class MetaorderSpec:
    m0: float
    duration: float
    record_every: int = 1

    def __post_init__(self) -> None:
        if not math.isfinite(self.m0) or self.m0 == 0:
            raise ParameterError("m0 must be finite and nonzero")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ParameterError("duration must be > 0")
        if self.record_every < 1:
            raise ParameterError("record_every must be >= 1")

    def regime(self, p: ModelParams) -> dict[str, float]:
        """``m0 / J`` and ``m0 / J_r``; ``J_r = 0`` gives ``inf``."""
        m = abs(self.m0)
        return {
            "m0_over_J": m / p.J,
            "m0_over_J_r": math.inf if p.J_revealed == 0 else m / p.J_revealed,
        }


@dataclass
class ImpactTrajectory:
    """Ensemble-averaged price path during execution.

    ``price`` is the signed displacement of the last fill (the trade price
    of the metaorder) from the initial mid-price; ``mid_price`` is the
    displacement of the mid-quote.
    """

    t: np.ndarray
    Q: np.ndarray
    price: np.ndarray
    price_stderr: np.ndarray
    fair_price: np.ndarray
    imbalance: np.ndarray
    mid_price: np.ndarray
    n_members: np.ndarray
    ensemble: int
    crisis: bool = False
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS + EXTRA_COLUMNS)
            for i in range(self.t.size):
                row = [self.t[i], self.Q[i], self.price[i], self.price_stderr[i], self.fair_price[i], self.imbalance[i], self.mid_price[i]]
                w.writerow([repr(float(v)) for v in row] + [int(self.n_members[i])])

    def write_metadata(self, path: Union[str, Path]) -> None:
        payload = dict(self.metadata)
        payload.update({"ensemble": self.ensemble, "crisis": self.crisis})
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=float), encoding="utf-8")


def _member(args: tuple[sim.SimConfig, MetaorderSpec, int]) -> dict[str, Any]:
    cfg, spec, seed = args
    cfg = cfg.replace(seed=seed)
    state = sim.initial_state(cfg)
    burn = cfg.burn_in if cfg.burn_in is not None else cfg.default_burn_in()
    for _ in range(burn):
        sim.step(state, cfg)
    centers = cfg.centers
    p0 = (0.5 * state.mid_index2 - 0.5 * (cfg.n_bins - 1)) * cfg.price_step
    n_steps = int(round(spec.duration / cfg.tau))
    n_rec = n_steps // spec.record_every
    price = np.full(n_rec, np.nan)
    mid = np.full(n_rec, np.nan)
    fair = np.full(n_rec, np.nan)
    imb = np.full(n_rec, np.nan)
    sign = 1 if spec.m0 > 0 else -1
    residue = 0.0
    last_fill = p0
    crisis = False
    try:
        for i in range(n_steps):
            sim.step(state, cfg)
            residue += abs(spec.m0) * cfg.tau
            vol = int(residue)
            residue -= vol
            if vol:
                filled = sim.execute_market_buy(state, vol) if sign > 0 else sim.execute_market_sell(state, vol)
                if state.last_fill_bin >= 0:
                    last_fill = float(centers[state.last_fill_bin])
                if filled < vol:
                    crisis = True
                sim._update_price(state, cfg)
                if state.crisis:
                    crisis = True
            if crisis:
                break
            if (i + 1) % spec.record_every == 0:
                j = (i + 1) // spec.record_every - 1
                price[j] = last_fill - p0
                mid[j] = (0.5 * state.mid_index2 - 0.5 * (cfg.n_bins - 1)) * cfg.price_step - p0
                try:
                    fair[j] = sim.fair_price(state, cfg) - p0
                except Exception:
                    fair[j] = np.nan
                vb, va = float(state.revealed_bid.sum()), float(state.revealed_ask.sum())
                imb[j] = (vb - va) / (vb + va) if vb + va > 0 else np.nan
    except sim.DomainOverflow:
        crisis = True
    return {"price": price, "mid": mid, "fair": fair, "imbalance": imb, "crisis": crisis}


def run_metaorder(
    cfg: sim.SimConfig,
    spec: MetaorderSpec,
    ensemble: int = 64,
    workers: Optional[int] = 1,
) -> ImpactTrajectory:
    """Execute the metaorder on ``ensemble`` independent books and average.

    Each member starts from the Poisson-sampled stationary book, runs
    ``cfg.burn_in`` cycles and then adds ``|m0| tau`` market orders per step
    (fractional parts carried over) at the best opposite quote.  Members hit
    by a liquidity crisis are truncated; the trajectory keeps the flag.
    """
    if ensemble < 1:
        raise ParameterError("ensemble must be >= 1")
    seeds = sim.ensemble_seeds(cfg.seed, ensemble)
    jobs = [(cfg, spec, s) for s in seeds]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and ensemble > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_member, jobs))
    else:
        members = [_member(j) for j in jobs]
    price = np.array([m["price"] for m in members])
    n = np.sum(np.isfinite(price), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nanmean(np.where(np.isfinite(price), price, np.nan), axis=0) if n.any() else price[0]
        sd = np.nanstd(price, axis=0, ddof=1) if ensemble > 1 else np.full(price.shape[1], np.nan)
        se = sd / np.sqrt(np.maximum(n, 1))
        fair = np.nanmean(np.array([m["fair"] for m in members]), axis=0)
        imb = np.nanmean(np.array([m["imbalance"] for m in members]), axis=0)
        mid = np.nanmean(np.array([m["mid"] for m in members]), axis=0)
    n_rec = price.shape[1]
    t = (np.arange(1, n_rec + 1) * spec.record_every) * cfg.tau
    Q = abs(spec.m0) * t
    p = cfg.params
    meta = {"m0": spec.m0, "duration": spec.duration, "seed": cfg.seed, **spec.regime(p)}
    return ImpactTrajectory(
        t, Q, mean, se, fair, imb, mid, n, ensemble, any(m["crisis"] for m in members), meta
    )


# -- fits -------------------------------------------------------------------------


def _xy(traj: Union[ImpactTrajectory, tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(traj, ImpactTrajectory):
        return traj.Q, np.abs(traj.price)
    x, y = traj
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def fit_impact_exponent(
    traj: Union[ImpactTrajectory, tuple[np.ndarray, np.ndarray]], window: Optional[tuple[float, float]] = None
) -> float:
    """Least-squares slope of ``log I`` against ``log Q`` inside ``window``."""
    x, y = _xy(traj)
    sel = np.isfinite(x) & np.isfinite(y)
    if window is not None:
        sel &= (x >= window[0]) & (x <= window[1])
    if sel.sum() < 2:
        raise ParameterError("fewer than two points in the fit window")
    if np.any(x[sel] <= 0) or np.any(y[sel] <= 0):
        raise ParameterError("impact and volume must be positive inside the fit window")
    slope, _ = np.polyfit(np.log(x[sel]), np.log(y[sel]), 1)
    return float(slope)


def fit_linear_coefficient(t: np.ndarray, y: np.ndarray, window: tuple[float, float]) -> float:
    """Slope of ``y = c t`` through the origin over ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (t >= window[0]) & (t <= window[1]) & np.isfinite(y)
    if sel.sum() < 1:
        raise ParameterError("no points in the fit window")
    return float(np.dot(t[sel], y[sel]) / np.dot(t[sel], t[sel]))


def crossover_time(
    t: np.ndarray, y: np.ndarray, early: tuple[float, float], late: tuple[float, float]
) -> float:
    """Intersection of the early linear law ``c t`` with the late power law ``A t^b``."""
    c = fit_linear_coefficient(t, y, early)
    b = fit_impact_exponent((t, y), late)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (t >= late[0]) & (t <= late[1]) & np.isfinite(y) & (y > 0)
    logA = float(np.mean(np.log(y[sel]) - b * np.log(t[sel])))
    if b >= 1.0:
        raise ParameterError("late regime is not concave; no crossover")
    return float(math.exp((logA - math.log(c)) / (1.0 - b)))
