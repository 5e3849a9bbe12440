"""Particle simulation of the latent/revealed book.

Four integer count vectors live on a price grid of ``n_bins`` cells.  Each
cycle applies, in order: binomial diffusion, current injection at the far
edges of the latent books, reveal/unreveal conversion relative to the
mid-price, bid/ask annihilation and the mid-price update.

Price coordinates are centred: bin ``i`` sits at
``(i - (n_bins - 1)/2) * price_step`` so the initial mid-price is 0.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .analytic import BookProfile, Provenance
from .exceptions import DegenerateBookError, DomainOverflow, LiquidityCrisis, ParameterError
from .model import ModelParams, gamma


class WrongSideMode(str, Enum):
    """Where a latent order revealed on the wrong side of the price goes."""

    IN_PLACE = "in_place"
    TO_BEST_QUOTE = "to_best_quote"


@dataclass(frozen=True)
class SimConfig:
    n_bins: int = 2000
    price_step: float = 0.01
    tau: float = 1e-4
    p_diff_latent: float = 0.5
    p_diff_revealed: float = 0.5
    omega: float = 1.0
    k: float = 1.0
    L_latent: float = 1000.0
    seed: int = 0
    wrong_side_mode: WrongSideMode = WrongSideMode.IN_PLACE
    n_steps: int = 10_000
    window: int = 100
    burn_in: Optional[int] = None
    sample_every: int = 10
    edge_margin: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "wrong_side_mode", WrongSideMode(self.wrong_side_mode))
        if self.n_bins < 10 or self.n_bins % 2:
            raise ParameterError("n_bins must be an even number >= 10")
        for name in ("price_step", "tau", "omega", "k", "L_latent"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be finite and > 0")
        for name in ("p_diff_latent", "p_diff_revealed"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.omega * self.tau > 1.0:
            raise ParameterError("omega * tau must be <= 1 for valid conversion probabilities")
        if self.n_steps < 0 or self.window < 1 or self.sample_every < 1:
            raise ParameterError("n_steps >= 0, window >= 1 and sample_every >= 1 are required")

    @classmethod
    def from_params(
        cls,
        p: ModelParams,
        n_bins: int = 2000,
        half_width: Optional[float] = None,
        p_diff_latent: float = 0.5,
        **kwargs: Any,
    ) -> "SimConfig":
        """Choose ``price_step`` and ``tau`` so that ``D = p dx^2 / (2 tau)`` holds for both books.

        ``half_width`` defaults to ``10 * max(1/k, l_l)``.
        """
        p.require_equal_rates("the particle simulator")
        half_width = half_width or 10.0 * p.depth
        dx = 2.0 * half_width / n_bins
        tau = p_diff_latent * dx**2 / (2.0 * p.D_latent)
        p_rev = p_diff_latent * p.D_revealed / p.D_latent
        if p_rev > 1.0:
            raise ParameterError("D_revealed too large for p_diff_latent; lower p_diff_latent")
        return cls(
            n_bins=n_bins,
            price_step=dx,
            tau=tau,
            p_diff_latent=p_diff_latent,
            p_diff_revealed=p_rev,
            omega=p.omega,
            k=p.k,
            L_latent=p.L_latent,
            **kwargs,
        )

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def D_latent(self) -> float:
        return self.p_diff_latent * self.price_step**2 / (2.0 * self.tau)

    @property
    def D_revealed(self) -> float:
        return self.p_diff_revealed * self.price_step**2 / (2.0 * self.tau)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.D_latent, self.D_revealed, self.omega, self.k, self.L_latent)

    @property
    def injection_per_step(self) -> float:
        """Particles entering each latent book per step, ``J tau`` with ``J = D_l L``."""
        return self.D_latent * self.L_latent * self.tau

    @property
    def half_width(self) -> float:
        return 0.5 * self.n_bins * self.price_step

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) - 0.5 * (self.n_bins - 1)) * self.price_step

    def default_burn_in(self) -> int:
        """Ten slowest relaxation times, ``max(1/omega, W^2/D_l)``, in steps."""
        width = 2.0 * self.half_width
        slowest = max(1.0 / self.omega, width**2 / self.D_latent)
        return int(math.ceil(10.0 * slowest / self.tau))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["wrong_side_mode"] = self.wrong_side_mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ParameterError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SimState:
    """Mutable particle state.  ``step`` updates it in place."""

    latent_bid: np.ndarray
    latent_ask: np.ndarray
    revealed_bid: np.ndarray
    revealed_ask: np.ndarray
    rng: np.random.Generator
    time: float = 0.0
    n_step: int = 0
    mid_index2: int = 0  # best_bid + best_ask, i.e. twice the mid in bin units
    residue_bid: float = 0.0
    residue_ask: float = 0.0
    injected: int = 0  # particles injected in the last step
    matched: int = 0  # pairs annihilated in the last step
    executed: int = 0  # book orders consumed by market orders in the last step
    last_fill_bin: int = -1
    crisis: bool = False
    crisis_steps: int = 0
    meta_residue: float = 0.0

    @property
    def books(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.latent_bid, self.latent_ask, self.revealed_bid, self.revealed_ask

    def total(self) -> int:
        return int(sum(int(b.sum()) for b in self.books))

    def copy(self) -> "SimState":
        new = dataclasses.replace(self)
        for name in ("latent_bid", "latent_ask", "revealed_bid", "revealed_ask"):
            setattr(new, name, getattr(self, name).copy())
        new.rng = np.random.Generator(type(self.rng.bit_generator)())
        new.rng.bit_generator.state = self.rng.bit_generator.state
        return new


def _mid_index2(revealed_bid: np.ndarray, revealed_ask: np.ndarray) -> Optional[int]:
    bids = np.flatnonzero(revealed_bid)
    asks = np.flatnonzero(revealed_ask)
    if bids.size == 0 or asks.size == 0:
        return None
    return int(bids[-1] + asks[0])


def trade_price(state: SimState, cfg: SimConfig) -> float:
    """Mid of the best revealed bid and ask bin centres."""
    m2 = _mid_index2(state.revealed_bid, state.revealed_ask)
    if m2 is None:
        raise LiquidityCrisis("a revealed side is empty; trade price undefined")
    return (0.5 * m2 - 0.5 * (cfg.n_bins - 1)) * cfg.price_step


def fair_price(state: SimState, cfg: SimConfig) -> float:
    """Price where cumulative supply below equals cumulative demand above.

    Each bin's volume is spread uniformly over the bin, so the crossing is
    interpolated linearly inside the bin found by binary search.
    """
    ask = (state.latent_ask + state.revealed_ask).astype(float)
    bid = (state.latent_bid + state.revealed_bid).astype(float)
    if ask.sum() <= 0 or bid.sum() <= 0:
        raise DegenerateBookError("fair price needs volume on both sides")
    # F at left edges e_0..e_n: ask mass below minus bid mass above
    ask_below = np.concatenate([[0.0], np.cumsum(ask)])
    bid_above = np.concatenate([np.cumsum(bid[::-1])[::-1], [0.0]])
    F = ask_below - bid_above
    i = int(np.searchsorted(F, 0.0, side="left"))
    if i == 0 or i > cfg.n_bins:
        raise DegenerateBookError("cumulative supply and demand do not cross")
    f0, f1 = F[i - 1], F[i]
    frac = 0.0 if f1 == f0 else -f0 / (f1 - f0)
    edge = (i - 1 - 0.5 * cfg.n_bins) * cfg.price_step
    return edge + frac * cfg.price_step


def initial_state(cfg: SimConfig, profile: Optional[BookProfile] = None, *, seed: Any = None) -> SimState:
    """Poisson-sample the stationary book onto the grid.

    ``profile`` (half-line, any provenance) defaults to the stationary
    finite-difference solution for ``cfg.params`` reaching the domain edge.
    The far latent ask beyond the profile grid is extended linearly.
    """
    from . import bvp

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if profile is None:
        p = cfg.params
        profile = bvp.solve_stationary(p, bvp.BvpConfig(xi_max=max(20.0 * p.depth, 1.01 * cfg.half_width)))
    x = cfg.centers
    ax = np.abs(x)
    g = profile.grid
    slope_tail = cfg.L_latent

    def interp(values: np.ndarray, extend_linear: bool = False) -> np.ndarray:
        out = np.interp(ax, g, values)
        beyond = ax > g[-1]
        if extend_linear:
            out[beyond] = values[-1] + slope_tail * (ax[beyond] - g[-1])
        else:
            out[beyond] = 0.0
        return out

    rb_h = interp(profile.rho_latent_bid)
    ra_h = interp(profile.rho_latent_ask, extend_linear=True)
    phi_h = interp(profile.phi_revealed)
    right = x > 0
    lat_ask_density = np.where(right, ra_h, rb_h)
    lat_bid_density = np.where(right, rb_h, ra_h)
    rev_ask_density = np.where(right, np.maximum(-phi_h, 0.0), 0.0)
    rev_bid_density = np.where(right, 0.0, np.maximum(-phi_h, 0.0))
    dx = cfg.price_step
    books = [rng.poisson(np.maximum(d, 0.0) * dx).astype(np.int64) for d in (lat_bid_density, lat_ask_density, rev_bid_density, rev_ask_density)]
    state = SimState(*books, rng=rng)
    n = cfg.n_bins
    # guarantee quotes on both sides of the centre
    if not state.revealed_bid[: n // 2].any():
        state.revealed_bid[n // 2 - 1] = 1
    if not state.revealed_ask[n // 2 :].any():
        state.revealed_ask[n // 2] = 1
    _match(state)
    m2 = _mid_index2(state.revealed_bid, state.revealed_ask)
    state.mid_index2 = n - 1 if m2 is None else m2
    state.matched = 0
    return state


def _diffuse(counts: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if p <= 0.0:
        return counts
    movers = rng.binomial(counts, p)
    left = rng.binomial(movers, 0.5)
    right = movers - left
    out = counts - movers
    out[:-1] += left[1:]
    out[1:] += right[:-1]
    # reflecting walls
    out[0] += left[0]
    out[-1] += right[-1]
    return out


def _match(state: SimState) -> int:
    """Annihilate overlapping revealed bids and asks; returns pairs removed."""
    bid, ask = state.revealed_bid, state.revealed_ask
    m = np.minimum(bid, ask)
    total = int(m.sum())
    if total:
        bid -= m
        ask -= m
    # uncross what diffusion swapped past each other
    while True:
        bids = np.flatnonzero(bid)
        asks = np.flatnonzero(ask)
        if bids.size == 0 or asks.size == 0 or bids[-1] < asks[0]:
            break
        bb, ba = bids[-1], asks[0]
        q = min(bid[bb], ask[ba])
        bid[bb] -= q
        ask[ba] -= q
        total += int(q)
    state.matched += total
    return total


def step(state: SimState, cfg: SimConfig) -> SimState:
    """Advance one cycle in place and return ``state``.

    Raises :class:`DomainOverflow` when the mid-price comes within
    ``edge_margin`` of the domain edge.  An empty revealed side sets
    ``state.crisis`` and keeps the previous mid-price.
    """
    rng = state.rng
    state.injected = 0
    state.matched = 0
    state.executed = 0

    # (1) diffusion
    state.latent_bid = _diffuse(state.latent_bid, cfg.p_diff_latent, rng)
    state.latent_ask = _diffuse(state.latent_ask, cfg.p_diff_latent, rng)
    state.revealed_bid = _diffuse(state.revealed_bid, cfg.p_diff_revealed, rng)
    state.revealed_ask = _diffuse(state.revealed_ask, cfg.p_diff_revealed, rng)

    # (2) boundary currents into the latent books
    inj = cfg.injection_per_step
    state.residue_ask += inj
    state.residue_bid += inj
    na, nb = int(state.residue_ask), int(state.residue_bid)
    state.residue_ask -= na
    state.residue_bid -= nb
    state.latent_ask[-1] += na
    state.latent_bid[0] += nb
    state.injected = na + nb

    # (3) conversion relative to the mid-price of the previous cycle
    n = cfg.n_bins
    xi = (np.arange(n) - 0.5 * state.mid_index2) * cfg.price_step
    g_ask = gamma(cfg.k * xi)
    g_bid = gamma(-cfg.k * xi)
    wt = cfg.omega * cfg.tau
    rev_a = rng.binomial(state.latent_ask, wt * g_ask)
    unrev_a = rng.binomial(state.revealed_ask, wt * (1.0 - g_ask))
    rev_b = rng.binomial(state.latent_bid, wt * g_bid)
    unrev_b = rng.binomial(state.revealed_bid, wt * (1.0 - g_bid))
    state.latent_ask += unrev_a - rev_a
    state.latent_bid += unrev_b - rev_b
    state.revealed_ask -= unrev_a
    state.revealed_bid -= unrev_b
    if cfg.wrong_side_mode is WrongSideMode.TO_BEST_QUOTE:
        below = 2 * np.arange(n) < state.mid_index2
        above = 2 * np.arange(n) > state.mid_index2
        wrong_a = int(rev_a[below].sum())
        wrong_b = int(rev_b[above].sum())
        rev_a[below] = 0
        rev_b[above] = 0
        bids = np.flatnonzero(state.revealed_bid)
        asks = np.flatnonzero(state.revealed_ask)
        # marketable: sent to the opposite best quote, where matching clears them
        rev_a[bids[-1] if bids.size else min(n - 1, (state.mid_index2 + 1) // 2)] += wrong_a
        rev_b[asks[0] if asks.size else max(0, state.mid_index2 // 2)] += wrong_b
    state.revealed_ask += rev_a
    state.revealed_bid += rev_b

    # (4) matching
    _match(state)

    # (5) price update
    _update_price(state, cfg)
    state.n_step += 1
    state.time += cfg.tau
    return state


def _update_price(state: SimState, cfg: SimConfig) -> None:
    m2 = _mid_index2(state.revealed_bid, state.revealed_ask)
    if m2 is None:
        state.crisis = True
        state.crisis_steps += 1
    else:
        state.crisis = False
        state.mid_index2 = m2
    margin = max(1, int(cfg.edge_margin * cfg.n_bins))
    mid_bin = 0.5 * state.mid_index2
    if mid_bin < margin or mid_bin > cfg.n_bins - 1 - margin:
        raise DomainOverflow(f"mid-price reached the grid edge at step {state.n_step}")


def execute_market_buy(state: SimState, volume: int) -> int:
    """Consume ``volume`` revealed asks from the best ask upward; returns the amount filled."""
    ask = state.revealed_ask
    filled = 0
    while filled < volume:
        asks = np.flatnonzero(ask)
        if asks.size == 0:
            break
        cum = np.cumsum(ask[asks])
        need = volume - filled
        j = int(np.searchsorted(cum, need))
        if j >= asks.size:
            ask[asks] = 0
            filled += int(cum[-1])
            state.last_fill_bin = int(asks[-1])
            break
        ask[asks[:j]] = 0
        taken_before = int(cum[j - 1]) if j else 0
        ask[asks[j]] -= need - taken_before
        filled = volume
        state.last_fill_bin = int(asks[j])
    state.executed += filled
    return filled


def execute_market_sell(state: SimState, volume: int) -> int:
    """Mirror of :func:`execute_market_buy` on the revealed bids."""
    bid = state.revealed_bid
    filled = 0
    asks_view = bid[::-1]
    while filled < volume:
        idx = np.flatnonzero(asks_view)
        if idx.size == 0:
            break
        cum = np.cumsum(asks_view[idx])
        need = volume - filled
        j = int(np.searchsorted(cum, need))
        if j >= idx.size:
            asks_view[idx] = 0
            filled += int(cum[-1])
            state.last_fill_bin = bid.size - 1 - int(idx[-1])
            break
        asks_view[idx[:j]] = 0
        taken_before = int(cum[j - 1]) if j else 0
        asks_view[idx[j]] -= need - taken_before
        filled = volume
        state.last_fill_bin = bid.size - 1 - int(idx[j])
    state.executed += filled
    return filled


# -- runs and series -----------------------------------------------------------


@dataclass
class PriceSeries:
    time: np.ndarray
    trade_price: np.ndarray
    fair_price: np.ndarray

    def ohlc(self, window: int, which: str = "trade") -> np.ndarray:
        """Rows ``(open, high, low, close)`` over consecutive windows sharing endpoints."""
        x = self.trade_price if which == "trade" else self.fair_price
        n_win = (x.size - 1) // window
        if n_win < 1:
            return np.empty((0, 4))
        idx = np.arange(n_win)[:, None] * window + np.arange(window + 1)[None, :]
        w = x[idx]
        return np.column_stack([w[:, 0], w.max(axis=1), w.min(axis=1), w[:, -1]])

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(("t", "trade_price", "fair_price"))
            for row in zip(self.time, self.trade_price, self.fair_price):
                wr.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class Volatility:
    rogers_satchell: float  # squared
    parkinson: float  # squared


def volatility(series: Union[PriceSeries, np.ndarray], window: int = 100, which: str = "trade") -> Volatility:
    """Rogers-Satchell and Parkinson squared volatilities from windowed price ranges.

    ``series`` is either a :class:`PriceSeries` or an ``(n, 4)`` array of
    ``(open, high, low, close)`` rows.
    """
    bars = series.ohlc(window, which) if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    if bars.ndim != 2 or bars.shape[1] != 4 or bars.shape[0] < 1:
        raise ParameterError("volatility needs at least one (open, high, low, close) window")
    o, h, l, c = bars.T
    rs = np.mean((h - o) * (h - c) + (l - o) * (l - c))
    pk = np.mean((h - l) ** 2) / (4.0 * math.log(2.0))
    return Volatility(float(rs), float(pk))


@dataclass
class ProfileAccumulator:
    """Time average of the four books in the frame of the current mid-price.

    Offsets are stored in half-bin units so both parities of the mid (on a
    bin centre or between two bins) are kept exactly.
    """

    n_bins: int
    price_step: float
    sums: np.ndarray = field(init=False)
    hits: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.sums = np.zeros((4, 4 * self.n_bins))
        self.hits = np.zeros(4 * self.n_bins)

    def add(self, state: SimState) -> None:
        start = 2 * self.n_bins - state.mid_index2
        sl = slice(start, start + 2 * self.n_bins, 2)
        for row, book in enumerate(state.books):
            self.sums[row, sl] += book
        self.hits[sl] += 1

    def merge(self, other: "ProfileAccumulator") -> None:
        self.sums += other.sums
        self.hits += other.hits

    def profile(self, params: Optional[ModelParams] = None, min_hits: int = 1) -> BookProfile:
        """Fold onto the half line using the bid/ask mirror symmetry."""
        n2 = 2 * self.n_bins
        keep = self.hits >= min_hits
        mean = np.zeros_like(self.sums)
        mean[:, keep] = self.sums[:, keep] / self.hits[keep]
        mean /= self.price_step
        lb, la, rb, ra = mean
        pos = np.arange(0, n2)
        pos = pos[keep[n2 + pos] & keep[n2 - pos]]
        ip, im = n2 + pos, n2 - pos
        rho_b = 0.5 * (lb[ip] + la[im])
        rho_a = 0.5 * (la[ip] + lb[im])
        phi = 0.5 * ((rb[ip] - ra[ip]) - (rb[im] - ra[im]))
        xi = pos * 0.5 * self.price_step
        hits = np.minimum(self.hits[ip], self.hits[im])
        # smallest nonzero density a single particle contributes to the average
        quantum = 1.0 / (self.price_step * hits)
        return BookProfile(xi, rho_b, rho_a, phi, params, Provenance.SIMULATION, {"density_quantum": quantum})


@dataclass
class RunResult:
    series: PriceSeries
    profile: Optional[BookProfile]
    accumulator: Optional[ProfileAccumulator]
    state: SimState
    aborted: bool = False
    abort_reason: Optional[str] = None
    crisis_steps: int = 0
    injected_total: int = 0
    matched_total: int = 0
    balance_violations: int = 0

    def metadata(self, cfg: SimConfig) -> dict[str, Any]:
        return {
            "seed": cfg.seed,
            "n_steps": int(self.state.n_step),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "crisis_steps": self.crisis_steps,
            "injected_total": self.injected_total,
            "matched_total": self.matched_total,
            "balance_violations": self.balance_violations,
        }


def run(
    cfg: SimConfig,
    state: Optional[SimState] = None,
    *,
    burn_in: Optional[int] = None,
    record_profile: bool = True,
    record_fair: bool = True,
    check_balance: bool = False,
) -> RunResult:
    """Burn in, then run ``cfg.n_steps`` cycles recording prices every step.

    The profile is accumulated every ``cfg.sample_every`` steps.  A domain
    overflow aborts the run and returns the partial series.
    """
    state = initial_state(cfg) if state is None else state
    burn = cfg.burn_in if burn_in is None else burn_in
    if burn is None:
        burn = cfg.default_burn_in()
    acc = ProfileAccumulator(cfg.n_bins, cfg.price_step) if record_profile else None
    t, tp, fp = [], [], []
    aborted, reason = False, None
    injected_total = matched_total = violations = 0
    try:
        for _ in range(burn):
            step(state, cfg)
        state.crisis_steps = 0
        for i in range(cfg.n_steps):
            before = state.total() if check_balance else 0
            step(state, cfg)
            injected_total += state.injected
            matched_total += state.matched
            if check_balance and state.total() - before != state.injected - 2 * state.matched - state.executed:
                violations += 1
            t.append(state.time)
            tp.append((0.5 * state.mid_index2 - 0.5 * (cfg.n_bins - 1)) * cfg.price_step)
            if record_fair:
                try:
                    fp.append(fair_price(state, cfg))
                except DegenerateBookError:
                    fp.append(math.nan)
            if acc is not None and i % cfg.sample_every == 0:
                acc.add(state)
    except DomainOverflow as exc:
        aborted, reason = True, str(exc)
    series = PriceSeries(np.array(t), np.array(tp), np.array(fp) if record_fair else np.full(len(t), math.nan))
    profile = acc.profile(cfg.params) if acc is not None and acc.hits.any() else None
    return RunResult(
        series, profile, acc, state, aborted, reason, state.crisis_steps, injected_total, matched_total, violations
    )


def ensemble_seeds(seed: int, n: int) -> list[int]:
    """Independent child seeds derived from a master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def write_metadata(path: Union[str, Path], payload: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=float), encoding="utf-8")


@dataclass(frozen=True)
class ProfileComparison:
    """Per-bin z-scores of ensemble-averaged simulated profiles against a reference."""

    edges: np.ndarray
    z: dict[str, np.ndarray]
    max_abs_z: float

    def passed(self, threshold: float = 3.0) -> bool:
        return bool(self.max_abs_z < threshold)


def compare_profiles(
    members: Sequence[BookProfile],
    reference: BookProfile,
    xi_max: float,
    bin_width: float,
    fields: Sequence[str] = ("rho_latent_bid", "rho_latent_ask", "phi_revealed"),
) -> ProfileComparison:
    """Compare independent simulated profiles with a stationary reference.

    Positions present in every member are grouped into comparison bins of
    ``bin_width`` on ``[0, xi_max]``.  In each bin the member averages give a
    mean and a standard error; the reference is averaged over the same
    positions.  The standard error is floored at the density carried by a
    single particle, so tails the simulation cannot resolve do not produce
    spurious infinite scores.
    """
    if len(members) < 2:
        raise ParameterError("standard errors need at least two independent members")
    common = members[0].grid
    for m in members[1:]:
        common = np.intersect1d(common, m.grid)
    # origin excluded: the one-sided limit there is a convention, not a sample
    common = common[(common > 0) & (common <= xi_max * (1 + 1e-12))]
    edges = np.arange(0.0, xi_max + 0.5 * bin_width, bin_width)
    which = np.digitize(common, edges) - 1
    n = len(members)
    quanta = []
    for m in members:
        q = m.diagnostics.get("density_quantum")
        quanta.append(np.zeros(common.size) if q is None else np.asarray(q)[np.searchsorted(m.grid, common)])
    quantum = np.mean(quanta, axis=0)
    z: dict[str, np.ndarray] = {}
    worst = 0.0
    for name in fields:
        vals = np.array([getattr(m, name)[np.searchsorted(m.grid, common)] for m in members])
        ref = np.interp(common, reference.grid, getattr(reference, name))
        zs = []
        for b in range(edges.size - 1):
            sel = which == b
            if not sel.any():
                continue
            v = vals[:, sel].mean(axis=1)
            diff = v.mean() - ref[sel].mean()
            se = math.hypot(v.std(ddof=1) / math.sqrt(n), float(np.mean(quantum[sel])) / math.sqrt(n))
            zs.append(diff / se)
        arr = np.array(zs)
        z[name] = arr
        if arr.size:
            worst = max(worst, float(np.max(np.abs(arr))))
    return ProfileComparison(edges, z, worst)
