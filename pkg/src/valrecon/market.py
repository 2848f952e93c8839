"""Forward-market settlement with dual-price imbalance pricing.

Prices and quantities are plain floats (or numpy arrays, elementwise).
Energy is in MWh and prices in currency/MWh; unit consistency is up to the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateHourError


def hinge(x):
    """``[x]^+``. The subgradient convention at 0 is 0 (see :func:`hinge_grad`)."""
    return np.maximum(x, 0.0)


def hinge_grad(x):
    return (np.asarray(x) > 0.0).astype(float)


@dataclass(frozen=True)
class MarketHour:
    """Forward and regulation prices for one delivery hour.

    With ``one_sided=True`` at most one regulation price may differ from the
    forward price, as in a single-direction balancing system. The default
    allows both to differ, which constant-penalty settings (e.g. 25/29/13)
    need.
    """

    t: int
    pi_f: float
    pi_up: float
    pi_dw: float
    one_sided: bool = False

    def __post_init__(self):
        vals = (self.pi_f, self.pi_up, self.pi_dw)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigurationError(f"hour {self.t}: non-finite price {vals}")
        if self.pi_up < self.pi_f:
            raise ConfigurationError(
                f"hour {self.t}: up-regulation price {self.pi_up} below forward price {self.pi_f}"
            )
        if self.pi_dw > self.pi_f:
            raise ConfigurationError(
                f"hour {self.t}: down-regulation price {self.pi_dw} above forward price {self.pi_f}"
            )
        if self.one_sided and self.pi_up != self.pi_f and self.pi_dw != self.pi_f:
            raise ConfigurationError(
                f"hour {self.t}: both regulation prices differ from the forward price"
            )


@dataclass(frozen=True)
class Penalties:
    """Imbalance penalties: ``psi_plus`` for surplus, ``psi_minus`` for shortfall.

    Fields may be scalars or equal-length arrays (one entry per hour).
    """

    psi_plus: float
    psi_minus: float

    def __post_init__(self):
        pp = np.asarray(self.psi_plus, dtype=float)
        pm = np.asarray(self.psi_minus, dtype=float)
        if not (np.all(np.isfinite(pp)) and np.all(np.isfinite(pm))):
            raise ConfigurationError("penalties must be finite")
        if np.any(pp < 0) or np.any(pm < 0):
            raise ConfigurationError(
                f"penalties must be non-negative, got psi_plus={self.psi_plus}, psi_minus={self.psi_minus}"
            )

    def scaled(self, c: float) -> "Penalties":
        return Penalties(self.psi_plus * c, self.psi_minus * c)


def penalties_from_hour(hour: MarketHour) -> Penalties:
    return Penalties(hour.pi_f - hour.pi_dw, hour.pi_up - hour.pi_f)


def penalties_from_prices(pi_f, pi_up, pi_dw) -> Penalties:
    """Vectorised :func:`penalties_from_hour` over price arrays."""
    pi_f = np.asarray(pi_f, dtype=float)
    return Penalties(pi_f - np.asarray(pi_dw, dtype=float), np.asarray(pi_up, dtype=float) - pi_f)


def _check_quantities(offer, actual):
    if np.any(np.asarray(offer) < 0) or np.any(np.asarray(actual) < 0):
        raise ValueError("offer and actual generation must be non-negative")


def profit(offer, actual, hour: MarketHour):
    """Settlement profit: forward revenue minus up-regulation purchases plus
    down-regulation sales."""
    _check_quantities(offer, actual)
    return (
        hour.pi_f * offer
        - hour.pi_up * hinge(offer - actual)
        + hour.pi_dw * hinge(actual - offer)
    )


def profit_decomposed(offer, actual, hour: MarketHour):
    """Same value as :func:`profit`, written as oracle revenue minus imbalance cost."""
    return hour.pi_f * actual - imbalance_cost(offer, actual, penalties_from_hour(hour))


def imbalance_cost(offer, actual, penalties: Penalties):
    """Non-negative imbalance cost of offering ``offer`` when ``actual`` is produced.

    Works elementwise on arrays; ``penalties`` broadcasts against the quantities.
    """
    return penalties.psi_plus * hinge(actual - offer) + penalties.psi_minus * hinge(offer - actual)


def imbalance_cost_grad(offer, actual, penalties: Penalties):
    """Subgradient of :func:`imbalance_cost` with respect to the offer (0 at the kink)."""
    diff = np.asarray(offer, dtype=float) - actual
    return penalties.psi_minus * (diff > 0) - penalties.psi_plus * (diff < 0)


def nominal_level(penalties: Penalties):
    """Newsvendor-optimal quantile level ``psi_plus / (psi_plus + psi_minus)``.

    Raises:
        DegenerateHourError: if both penalties are zero (any offer is costless).
    """
    total = np.asarray(penalties.psi_plus, dtype=float) + penalties.psi_minus
    if np.any(total <= 0):
        raise DegenerateHourError("psi_plus + psi_minus = 0: nominal level undefined")
    level = penalties.psi_plus / total
    return float(level) if np.ndim(level) == 0 else level


def is_degenerate(penalties: Penalties):
    """Mask of hours with no imbalance incentive."""
    return (np.asarray(penalties.psi_plus) + np.asarray(penalties.psi_minus)) <= 0
