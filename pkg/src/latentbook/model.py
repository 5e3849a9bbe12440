"""Model parameters, the conversion profile and derived scales.

All lengths are price offsets, all rates are per unit time and densities are
volume per unit price.  The canonical dimensionless variables used throughout
the package are ``x = k * xi``, ``s = omega * t`` and ``rho~ = k * rho / L``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .exceptions import ParameterError

ArrayLike = Union[float, np.ndarray]


class ConversionProfile(str, Enum):
    """Shape of the reveal probability as a function of ``k * xi``.

    Only the exponential member is implemented; the enum is kept open so that
    other decays can be added without touching call sites.
    """

    EXPONENTIAL = "exponential"


def gamma(y: ArrayLike, profile: ConversionProfile = ConversionProfile.EXPONENTIAL) -> ArrayLike:
    """Reveal probability: 1 for ``y <= 0`` and ``exp(-y)`` above."""
    if profile is not ConversionProfile.EXPONENTIAL:
        raise ParameterError(f"unsupported conversion profile {profile!r}")
    y_arr = np.asarray(y, dtype=float)
    out = np.exp(-np.maximum(y_arr, 0.0))
    if np.ndim(y) == 0:
        return float(out)
    return out


def gamma_slope_at_zero(profile: ConversionProfile = ConversionProfile.EXPONENTIAL) -> float:
    """Right derivative of the conversion profile at the origin."""
    if profile is not ConversionProfile.EXPONENTIAL:
        raise ParameterError(f"unsupported conversion profile {profile!r}")
    return -1.0


def g_factor(zeta: ArrayLike) -> ArrayLike:
    """Overlap amplitude ``2 z^2 (2+z)^2 / ((1+z)^2 (8+3z))`` of the equal-diffusivity book."""
    z = np.asarray(zeta, dtype=float)
    if np.any(z < 0):
        raise ParameterError("g_factor is defined for zeta >= 0")
    out = 2.0 * z**2 * (2.0 + z) ** 2 / ((1.0 + z) ** 2 * (8.0 + 3.0 * z))
    if np.ndim(zeta) == 0:
        return float(out)
    return out


def _check_positive(name: str, value: float, allow_zero: bool = False) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value}")
    if allow_zero:
        if value < 0:
            raise ParameterError(f"{name} must be >= 0, got {value}")
    elif value <= 0:
        raise ParameterError(f"{name} must be > 0, got {value}")
    return value


_JSON_KEYS = {"D_latent", "D_revealed", "omega", "k", "L_latent", "omega_unreveal"}


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the latent/revealed book.

    ``omega`` is the reveal rate; ``omega_unreveal`` defaults to the same
    value, which is the only case supported outside the zero revealed
    diffusivity closed form.
    """

    D_latent: float
    D_revealed: float
    omega: float
    k: float
    L_latent: float = 1.0
    omega_unreveal: Optional[float] = None
    profile: ConversionProfile = ConversionProfile.EXPONENTIAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "D_latent", _check_positive("D_latent", self.D_latent))
        object.__setattr__(self, "D_revealed", _check_positive("D_revealed", self.D_revealed, allow_zero=True))
        object.__setattr__(self, "omega", _check_positive("omega", self.omega))
        object.__setattr__(self, "k", _check_positive("k", self.k))
        object.__setattr__(self, "L_latent", _check_positive("L_latent", self.L_latent))
        unrev = self.omega if self.omega_unreveal is None else self.omega_unreveal
        object.__setattr__(self, "omega_unreveal", _check_positive("omega_unreveal", unrev))
        object.__setattr__(self, "profile", ConversionProfile(self.profile))

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_dimensionless(
        cls,
        k_ll: float,
        k_lr: float = 0.0,
        *,
        k: float = 1.0,
        omega: float = 1.0,
        L_latent: float = 1.0,
    ) -> "ModelParams":
        """Build parameters from the stability coordinates ``(k l_l, k l_r)``."""
        k_ll = _check_positive("k_ll", k_ll)
        k_lr = _check_positive("k_lr", k_lr, allow_zero=True)
        l_l, l_r = k_ll / k, k_lr / k
        return cls(D_latent=omega * l_l**2, D_revealed=omega * l_r**2, omega=omega, k=k, L_latent=L_latent)

    @classmethod
    def from_lengths(
        cls, L_latent: float, k: float, l_latent: float, l_revealed: float, omega: float = 1.0
    ) -> "ModelParams":
        """Build parameters from the calibrated quantities ``(L, k, l_l, l_r)``."""
        l_latent = _check_positive("l_latent", l_latent)
        l_revealed = _check_positive("l_revealed", l_revealed, allow_zero=True)
        return cls(
            D_latent=omega * l_latent**2,
            D_revealed=omega * l_revealed**2,
            omega=omega,
            k=k,
            L_latent=L_latent,
        )

    def replace(self, **changes: Any) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    # -- derived quantities ---------------------------------------------------

    @property
    def equal_rates(self) -> bool:
        return math.isclose(self.omega, self.omega_unreveal, rel_tol=1e-12)

    @property
    def l_latent(self) -> float:
        return math.sqrt(self.D_latent / self.omega)

    @property
    def l_revealed(self) -> float:
        return math.sqrt(self.D_revealed / self.omega)

    @property
    def k_ll(self) -> float:
        return self.k * self.l_latent

    @property
    def k_lr(self) -> float:
        return self.k * self.l_revealed

    @property
    def ratio(self) -> float:
        """``l_r / l_l``."""
        return self.l_revealed / self.l_latent

    @property
    def J(self) -> float:
        """Reveal flux scale ``L omega / k^2``."""
        return self.L_latent * self.omega / self.k**2

    @property
    def J_revealed(self) -> float:
        """Revealed diffusive flux scale ``D_r L``."""
        return self.D_revealed * self.L_latent

    @property
    def J_latent(self) -> float:
        """Latent diffusive flux ``D_l L`` feeding the far field."""
        return self.D_latent * self.L_latent

    @property
    def depth(self) -> float:
        """Characteristic extent ``max(1/k, l_l)`` of the revealed book."""
        return max(1.0 / self.k, self.l_latent)

    def require_equal_rates(self, what: str) -> None:
        if not self.equal_rates:
            raise ParameterError(
                f"{what} requires omega_unreveal == omega; unequal rates are only "
                "supported by the zero revealed diffusivity closed form"
            )

    # -- canonical nondimensionalisation --------------------------------------

    def to_x(self, xi: ArrayLike) -> ArrayLike:
        return self.k * np.asarray(xi, dtype=float) if np.ndim(xi) else self.k * float(xi)

    def from_x(self, x: ArrayLike) -> ArrayLike:
        return np.asarray(x, dtype=float) / self.k if np.ndim(x) else float(x) / self.k

    def to_s(self, t: ArrayLike) -> ArrayLike:
        return self.omega * np.asarray(t, dtype=float) if np.ndim(t) else self.omega * float(t)

    def rescale_density(self, rho: ArrayLike) -> ArrayLike:
        return self.k * np.asarray(rho, dtype=float) / self.L_latent

    def unscale_density(self, rho_tilde: ArrayLike) -> ArrayLike:
        return np.asarray(rho_tilde, dtype=float) * self.L_latent / self.k

    # -- JSON -----------------------------------------------------------------

    def to_dict(self) -> dict[str, float]:
        out = {
            "D_latent": self.D_latent,
            "D_revealed": self.D_revealed,
            "omega": self.omega,
            "k": self.k,
            "L_latent": self.L_latent,
        }
        if not self.equal_rates:
            out["omega_unreveal"] = self.omega_unreveal
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelParams":
        if not isinstance(data, dict):
            raise ParameterError("parameter document must be a JSON object")
        unknown = set(data) - _JSON_KEYS
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        missing = {"D_latent", "D_revealed", "omega", "k", "L_latent"} - set(data)
        if missing:
            raise ParameterError(f"missing parameter keys: {sorted(missing)}")
        for key, value in data.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(f"{key} must be numeric, got {value!r}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


@dataclass(frozen=True)
class DerivedScales:
    l_latent: float
    l_revealed: float
    J: float
    J_revealed: float
    zeta_c: Optional[float]
    omega_c: Optional[float]


def derived_scales(p: ModelParams, zeta_c: Optional[float] = None) -> DerivedScales:
    """Length and flux scales of ``p``.

    ``omega_c = D_l k^2 / zeta_c^2`` needs the critical ``k l_l`` for the
    current ``l_r / l_l``.  It is looked up from the closed forms when the
    ratio is 0 or 1; other ratios need ``zeta_c`` from a stability sweep.
    """
    if zeta_c is None:
        from .analytic import critical_zeta

        ratio = p.ratio
        if ratio == 0.0 or math.isclose(ratio, 1.0, rel_tol=1e-12):
            zeta_c = critical_zeta(0.0 if ratio == 0.0 else 1.0)
    omega_c = None if zeta_c is None else p.D_latent * p.k**2 / zeta_c**2
    return DerivedScales(
        l_latent=p.l_latent,
        l_revealed=p.l_revealed,
        J=p.J,
        J_revealed=p.J_revealed,
        zeta_c=zeta_c,
        omega_c=omega_c,
    )
