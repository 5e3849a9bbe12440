"""Averaged empirical book profiles and the four-parameter fit.

Snapshots are folded around the opposite best quote, averaged and fitted
with the stationary revealed density ``|phi_r|`` of the finite-difference
solver.  Offsets are in percent of the average price, volumes in shares.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import bvp
from .analytic import default_grid
from .exceptions import FitError, ParameterError
from .model import ModelParams

SNAPSHOT_COLUMNS = ("timestamp", "side", "price", "size")
TABLE_COLUMNS = ("price", "S", "V_d", "L", "k", "l_l", "l_r")


class Side(str, Enum):
    BID = "B"
    ASK = "A"


@dataclass(frozen=True)
class SnapshotRecord:
    timestamp: str
    side: Side
    price: float
    size: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "side", Side(self.side))
        if not (math.isfinite(self.price) and self.price > 0):
            raise ParameterError("price must be > 0")
        if not (math.isfinite(self.size) and self.size > 0):
            raise ParameterError("size must be > 0")


@dataclass(frozen=True)
class BinningConfig:
    width: float = 0.01  # percent of price
    max_offset: Optional[float] = None  # percent; None keeps every level
    tick_size: Optional[float] = None  # inferred from price gaps when None
    daily_volume: Optional[float] = None  # not recoverable from book snapshots

    def __post_init__(self) -> None:
        if not (self.width > 0):
            raise ParameterError("bin width must be > 0")


@dataclass
class EmpiricalBookProfile:
    """Folded average book: ``density[i]`` is shares per percent at offset ``grid[i]``."""

    grid: np.ndarray
    density: np.ndarray
    n_snapshots: int
    average_price: float
    average_spread: float  # ticks
    daily_volume: float = math.nan
    skipped: dict[str, int] = field(default_factory=dict)
    spread_dispersion: Optional[np.ndarray] = None  # per-bin std over snapshots

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        self.density = np.asarray(self.density, dtype=float)
        if self.grid.shape != self.density.shape or self.grid.ndim != 1:
            raise ParameterError("grid and density must be 1-d arrays of equal length")
        if self.grid.size and (self.grid[0] <= 0 or np.any(np.diff(self.grid) <= 0)):
            raise ParameterError("profile grid must start above 0 and increase")
        if np.any(self.density < 0):
            raise ParameterError("densities must be >= 0")

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("offset", "density"))
            for x, y in zip(self.grid, self.density):
                w.writerow((repr(float(x)), repr(float(y))))

    def scaled(self, factor: float) -> "EmpiricalBookProfile":
        return EmpiricalBookProfile(
            self.grid, self.density * factor, self.n_snapshots, self.average_price, self.average_spread, self.daily_volume, dict(self.skipped)
        )


# -- ingestion ---------------------------------------------------------------------


def read_snapshot_file(path: Union[str, Path]) -> tuple[dict[str, list[SnapshotRecord]], Counter]:
    """Parse one CSV; rows are grouped by timestamp.  Malformed rows are counted."""
    skipped: Counter = Counter()
    books: dict[str, list[SnapshotRecord]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != SNAPSHOT_COLUMNS:
            raise ParameterError(f"{path}: header must be {','.join(SNAPSHOT_COLUMNS)}")
        for row in reader:
            if not row:
                continue
            try:
                ts, side, price, size = (c.strip() for c in row)
                rec = SnapshotRecord(ts, Side(side.upper()), float(price), float(size))
            except (ValueError, ParameterError):
                skipped["malformed"] += 1
                continue
            books.setdefault(rec.timestamp, []).append(rec)
    return books, skipped


def _fold(records: list[SnapshotRecord]) -> Optional[tuple[np.ndarray, np.ndarray, float, float, np.ndarray]]:
    """Offsets from the opposite best for each side; None for unusable books."""
    bids = [(r.price, r.size) for r in records if r.side is Side.BID]
    asks = [(r.price, r.size) for r in records if r.side is Side.ASK]
    if not bids or not asks:
        return None
    bp, bs = np.array(bids).T
    ap, as_ = np.array(asks).T
    best_bid, best_ask = bp.max(), ap.min()
    if best_bid >= best_ask:
        return None
    offsets = np.concatenate([ap - best_bid, best_ask - bp])
    sizes = np.concatenate([as_, bs])
    prices = np.concatenate([ap, bp])
    return offsets, sizes, 0.5 * (best_bid + best_ask), best_ask - best_bid, prices


def ingest_snapshots(
    files: Sequence[Union[str, Path]],
    binning: Optional[BinningConfig] = None,
    workers: int = 1,
) -> EmpiricalBookProfile:
    """Fold, bin and average every snapshot found in ``files``.

    Offsets are divided by the sample-average mid-price and expressed in
    percent.  Bin ``i >= 1`` collects offsets within half a bin width of
    ``i * width``; the bid side is reflected onto positive offsets and the
    two sides are averaged.  Crossed books and books with an empty side are
    skipped and counted.
    """
    binning = binning or BinningConfig()
    if not files:
        raise ParameterError("no snapshot files given")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parsed = list(pool.map(read_snapshot_file, files))
    else:
        parsed = [read_snapshot_file(f) for f in files]
    skipped: Counter = Counter()
    folded = []
    for books, sk in parsed:
        skipped.update(sk)
        for ts in books:
            f = _fold(books[ts])
            if f is None:
                sides = {r.side for r in books[ts]}
                skipped["empty_side" if len(sides) < 2 else "crossed"] += 1
                continue
            folded.append(f)
    if not folded:
        raise ParameterError("no usable snapshot")
    avg_price = float(np.mean([f[2] for f in folded]))
    tick = binning.tick_size
    if tick is None:
        prices = np.unique(np.concatenate([f[4] for f in folded]))
        gaps = np.diff(prices)
        gaps = gaps[gaps > 1e-12 * avg_price]
        tick = float(gaps.min()) if gaps.size else math.nan
    spread = float(np.mean([f[3] for f in folded])) / tick if tick and math.isfinite(tick) else math.nan

    w = binning.width
    per_snapshot = []
    n_max = 1
    for offsets, sizes, _, _, _ in folded:
        pct = 100.0 * offsets / avg_price
        if binning.max_offset is not None:
            keep = pct <= binning.max_offset + 0.5 * w
            pct, sizes = pct[keep], sizes[keep]
        idx = np.maximum(1, np.rint(pct / w).astype(np.int64))
        per_snapshot.append((idx, sizes))
        if idx.size:
            n_max = max(n_max, int(idx.max()))
    hist = np.zeros((len(per_snapshot), n_max))
    for j, (idx, sizes) in enumerate(per_snapshot):
        np.add.at(hist[j], idx - 1, sizes)
    # two sides folded together, so each bin holds twice the one-sided volume
    density = hist / (2.0 * w)
    grid = w * np.arange(1, n_max + 1)
    return EmpiricalBookProfile(
        grid,
        density.mean(axis=0),
        len(folded),
        avg_price,
        spread,
        math.nan if binning.daily_volume is None else float(binning.daily_volume),
        dict(skipped),
        density.std(axis=0, ddof=1) if len(folded) > 1 else None,
    )


def write_synthetic_snapshots(
    path: Union[str, Path],
    params: ModelParams,
    n_snapshots: int,
    price: float = 100.0,
    tick_pct: float = 0.01,
    max_offset: float = 3.0,
    seed: int = 0,
) -> None:
    """Poisson snapshots sampled from the stationary ``|phi_r|`` of ``params``.

    ``params`` are in percent units (``k`` in 1/%, lengths in %).  Ask level
    ``j`` sits ``j`` ticks above the best bid; the bid side mirrors it.
    """
    rng = np.random.default_rng(seed)
    tick = tick_pct * price / 100.0
    j = np.arange(1, int(round(max_offset / tick_pct)) + 1)
    model = _ProfileModel(bvp.BvpConfig())
    lam = params.L_latent * model.shape(params.k * j * tick_pct, params.k_ll, params.k_lr) / params.k * tick_pct
    best_bid = price - 0.5 * tick
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_COLUMNS)
        for s in range(n_snapshots):
            ts = f"t{s:06d}"
            va = rng.poisson(lam)
            vb = rng.poisson(lam)
            va[0] = max(va[0], 1)
            vb[0] = max(vb[0], 1)
            for jj, v in zip(j, va):
                if v:
                    w.writerow((ts, "A", repr(round(float(best_bid + jj * tick), 10)), int(v)))
            best_ask = best_bid + tick
            for jj, v in zip(j, vb):
                if v:
                    w.writerow((ts, "B", repr(round(float(best_ask - jj * tick), 10)), int(v)))


# -- model and fit -----------------------------------------------------------------


class _ProfileModel:
    """``|phi_r| k / L`` as a smooth function of ``(x = k xi, zeta, eta)``.

    The solver grid in ``x`` is fixed so the model is smooth in the
    parameters; beyond ``x_max`` the revealed book is taken as empty.
    """

    def __init__(self, cfg: bvp.BvpConfig, x_max: float = 60.0) -> None:
        self.cfg = cfg
        self.x_max = x_max
        self.x = default_grid(ModelParams(1.0, 0.0, 1.0, 1.0), cfg.n_points, cfg.clustering, x_max)

    def shape(self, x: np.ndarray, zeta: float, eta: float) -> np.ndarray:
        _, _, phi, residual = bvp.solve_rescaled(self.x, zeta, eta, self.cfg.tolerance)
        spline = CubicSpline(self.x, phi)
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.x_max, -spline(np.minimum(x, self.x_max)), 0.0)
        return out


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 8
    k_ll_range: tuple[float, float] = (0.05, 1.5)
    ratio_range: tuple[float, float] = (0.05, 1.0)
    max_iter: int = 200
    x_max: float = 60.0
    weights: str = "uniform"  # "uniform", "relative" or "inverse_variance"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ParameterError("n_starts must be >= 1")
        if self.weights not in ("uniform", "relative", "inverse_variance"):
            raise ParameterError("weights must be 'uniform', 'relative' or 'inverse_variance'")


@dataclass
class FitResult:
    L_latent: float
    k: float
    l_latent: float
    l_revealed: float
    residual_rms: float
    covariance: list[list[float]]  # log(k), log(l_l), log(l_r)
    converged: bool = True
    n_iter: int = 0
    start: int = 0
    average_price: float = math.nan
    spread: float = math.nan
    daily_volume: float = math.nan

    @property
    def k_ll(self) -> float:
        return self.k * self.l_latent

    @property
    def k_lr(self) -> float:
        return self.k * self.l_revealed

    @property
    def params(self) -> ModelParams:
        return ModelParams.from_lengths(self.L_latent, self.k, self.l_latent, self.l_revealed)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["k_ll"] = self.k_ll
        d["k_lr"] = self.k_lr
        return d

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float), encoding="utf-8")

    def table_row(self) -> dict[str, float]:
        return {
            "price": self.average_price,
            "S": self.spread,
            "V_d": self.daily_volume,
            "L": self.L_latent,
            "k": self.k,
            "l_l": self.l_latent,
            "l_r": self.l_revealed,
        }

    def to_table_csv(self, path: Union[str, Path], name: Optional[str] = None) -> None:
        row = self.table_row()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow((("asset",) if name else ()) + TABLE_COLUMNS)
            w.writerow(((name,) if name else ()) + tuple(repr(float(row[c])) for c in TABLE_COLUMNS))


class _Objective:
    """Variable-projection residual: ``L`` is eliminated by linear least squares."""

    def __init__(self, x: np.ndarray, y: np.ndarray, w: np.ndarray, model: _ProfileModel) -> None:
        self.x, self.y, self.sw = x, y, np.sqrt(w)
        self.model = model

    def basis(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            k, l_l, l_r = np.exp(theta)
        if not all(math.isfinite(v) and v > 0 for v in (k, l_l, l_r)):
            raise FitError("parameters left the representable range")
        return self.model.shape(k * self.x, k * l_l, k * l_r) / k

    def amplitude(self, m: np.ndarray) -> float:
        a, b = self.sw * m, self.sw * self.y
        mm = float(a @ a)
        if mm <= 0:
            raise FitError("model profile vanishes on the data grid")
        return float(a @ b) / mm

    def residual(self, theta: np.ndarray) -> np.ndarray:
        m = self.basis(theta)
        return self.sw * (self.amplitude(m) * m - self.y)

    def jacobian(self, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
        cols = []
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            cols.append((self.residual(theta + e) - self.residual(theta - e)) / (2 * h))
        return np.column_stack(cols)


def _levenberg_marquardt(obj: _Objective, theta0: np.ndarray, max_iter: int) -> tuple[np.ndarray, float, int, bool, np.ndarray]:
    theta = theta0.copy()
    r = obj.residual(theta)
    cost = float(r @ r)
    scale = float((obj.sw * obj.y) @ (obj.sw * obj.y))
    lam = 1e-3
    converged = False
    it = 0
    J = obj.jacobian(theta)
    for it in range(1, max_iter + 1):
        g = J.T @ r
        A = J.T @ J
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-30), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            try:
                r_new = obj.residual(trial)
            except Exception:
                lam *= 10
                continue
            c_new = float(r_new @ r_new)
            if c_new < cost:
                accepted = True
                break
            lam *= 4
        if not accepted:
            # no damped step lowers the cost: stationary point at working precision
            converged = True
            break
        rel_drop = (cost - c_new) / max(cost, 1e-300)
        theta, r, cost = trial, r_new, c_new
        lam = max(lam / 3, 1e-12)
        if cost <= 1e-24 * scale or np.max(np.abs(step)) < 1e-12 or rel_drop < 1e-14:
            converged = True
            break
        J = obj.jacobian(theta)
    return theta, cost, it, converged, J


def _starts(profile: EmpiricalBookProfile, cfg: FitConfig) -> list[np.ndarray]:
    x, y = profile.grid, profile.density
    # |phi| ~ x/(e^x - 1) has mean abscissa 2 zeta(3)/zeta(2) ~ 1.46 in units of 1/k
    mean_x = float(np.sum(x * y) / np.sum(y))
    k0 = 1.4615 / mean_x
    n_z = max(1, (cfg.n_starts + 1) // 2)
    n_r = max(1, cfg.n_starts // n_z)
    zetas = np.geomspace(*cfg.k_ll_range, n_z)
    ratios = np.geomspace(*cfg.ratio_range, n_r) if n_r > 1 else np.array([math.sqrt(cfg.ratio_range[0] * cfg.ratio_range[1])])
    out = []
    for z in zetas:
        for r in ratios:
            l_l = z / k0
            out.append(np.log([k0, l_l, r * l_l]))
    return out[: cfg.n_starts]


def fit(
    profile: EmpiricalBookProfile,
    solver: Optional[bvp.BvpConfig] = None,
    cfg: Optional[FitConfig] = None,
) -> FitResult:
    """Least-squares fit of ``L |phi_r(xi; k, l_l, l_r)|`` to the profile.

    Damped Gauss-Newton (Levenberg-Marquardt) on ``log(k, l_l, l_r)`` from
    several starts; ``L`` is profiled out in closed form at every
    evaluation.  The best final residual wins.
    """
    cfg = cfg or FitConfig()
    solver = solver or bvp.BvpConfig()
    x, y = profile.grid, profile.density
    informative = np.count_nonzero(y > 0)
    if informative < 20:
        raise FitError(f"profile has {informative} informative bins; at least 20 are needed")
    if np.ptp(y) <= 1e-12 * np.max(np.abs(y)):
        raise FitError("flat profile; parameters are not identifiable")
    if cfg.weights == "inverse_variance" and profile.spread_dispersion is not None:
        var = profile.spread_dispersion**2 / max(profile.n_snapshots, 1)
        floor = np.median(var[var > 0]) if np.any(var > 0) else 1.0
        w = 1.0 / np.maximum(var, floor * 1e-3)
    elif cfg.weights == "relative":
        # maximum likelihood for multiplicative noise
        floor = 1e-3 * float(np.max(y))
        w = 1.0 / np.maximum(y, floor) ** 2
    else:
        w = np.ones_like(y)
    obj = _Objective(x, y, w, _ProfileModel(solver, cfg.x_max))

    def one(args: tuple[int, np.ndarray]):
        i, th0 = args
        try:
            return i, _levenberg_marquardt(obj, th0, cfg.max_iter)
        except Exception as exc:  # a failed start is skipped
            return i, exc

    starts = list(enumerate(_starts(profile, cfg)))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, starts))
    else:
        results = [one(s) for s in starts]
    good = [(i, r) for i, r in results if not isinstance(r, Exception)]
    if not good:
        raise FitError(f"no start converged: {[str(r) for _, r in results]}")
    best_i, (theta, cost, n_iter, converged, J) = min(good, key=lambda item: (item[1][1], item[0]))
    k, l_l, l_r = (float(v) for v in np.exp(theta))
    L = obj.amplitude(obj.basis(theta))
    n, p = y.size, theta.size
    sigma2 = cost / max(n - p, 1)
    try:
        cov = (sigma2 * np.linalg.inv(J.T @ J)).tolist()
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan).tolist()
    rms = math.sqrt(cost / float((np.sqrt(w) * y) @ (np.sqrt(w) * y)))
    return FitResult(
        L, k, l_l, l_r, rms, cov, bool(converged), int(n_iter), int(best_i),
        profile.average_price, profile.average_spread, profile.daily_volume,
    )


def stability_report(fit: FitResult, line: Any) -> dict[str, Any]:
    """Map coordinates, critical value, margin and flags for a fitted asset."""
    from .stability import locate_asset

    loc = locate_asset(fit, line)
    return {
        "k_ll": loc.k_ll,
        "k_lr": loc.k_lr,
        "ratio": loc.ratio,
        "zeta_c": loc.zeta_c,
        "margin": loc.margin,
        "relative_margin": loc.margin / loc.k_ll,
        "stable": loc.stable,
        "revealed_shorter_than_latent": loc.ratio < 1.0,
    }


# -- estimator facade --------------------------------------------------------------


class LatentBookRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``X`` holds price offsets, ``y`` the folded density.

    After ``fit`` the calibrated values are exposed as ``L_latent_``, ``k_``,
    ``l_latent_`` and ``l_revealed_``; ``predict`` returns ``L |phi_r|``.
    """

    def __init__(
        self, n_starts: int = 8, n_points: int = 2001, x_max: float = 60.0, max_iter: int = 200, weights: str = "uniform"
    ):
        self.n_starts = n_starts
        self.n_points = n_points
        self.x_max = x_max
        self.max_iter = max_iter
        self.weights = weights

    def _configs(self) -> tuple[bvp.BvpConfig, FitConfig]:
        cfg = FitConfig(n_starts=self.n_starts, x_max=self.x_max, max_iter=self.max_iter, weights=self.weights)
        return bvp.BvpConfig(n_points=self.n_points), cfg

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        offsets = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        order = np.argsort(offsets)
        profile = EmpiricalBookProfile(offsets[order], np.asarray(y, dtype=float)[order], 1, math.nan, math.nan)
        solver, cfg = self._configs()
        self.result_ = fit(profile, solver, cfg)
        self.L_latent_ = self.result_.L_latent
        self.k_ = self.result_.k
        self.l_latent_ = self.result_.l_latent
        self.l_revealed_ = self.result_.l_revealed
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, ensure_2d=False)
        offsets = np.asarray(X, dtype=float).reshape(X.shape[0], -1)[:, 0]
        model = _ProfileModel(self._configs()[0], self.x_max)
        k = self.k_
        return self.L_latent_ * model.shape(k * offsets, k * self.l_latent_, k * self.l_revealed_) / k
