"""Weighted proportional cost allocation between a portfolio manager and its producers.

Vectors follow hierarchy order ``[aggregate, leaf_1, ..., leaf_m]`` and may
be batched as ``(T, m + 1)`` arrays with per-hour :class:`Penalties`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoherenceError, ConfigurationError, DataError
from .hierarchy import Hierarchy
from .market import Penalties, imbalance_cost, imbalance_cost_grad

GAMMA_MODES = ("ge", "pc")


@dataclass(frozen=True)
class AllocationPolicy:
    """Weight ``w`` on the aggregate-cost share and the share rule ``gamma_mode``.

    ``ge`` splits the aggregate cost by share of actual generation, ``pc`` by
    share of pseudo-offer cost.
    """

    w: float = 0.9
    gamma_mode: str = "ge"

    def __post_init__(self):
        if not (0.0 <= self.w <= 1.0):
            raise ConfigurationError(f"allocation weight must lie in [0, 1], got {self.w}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ConfigurationError(f"gamma_mode must be one of {GAMMA_MODES}, got {self.gamma_mode!r}")


@dataclass
class SettlementBreakdown:
    c_agg: np.ndarray
    c_sum: np.ndarray
    c_pseudo: np.ndarray
    gammas: np.ndarray
    pm_payoff: np.ndarray
    extra_profit: np.ndarray


def _col(p, like):
    """Broadcast a per-hour penalty against ``(T, m)`` cost arrays."""
    p = np.asarray(p, dtype=float)
    return p[..., None] if p.ndim and np.ndim(like) > 1 else p


def _split(v):
    v = np.asarray(v, dtype=float)
    return v[..., 0], v[..., 1:]


def _leaf_penalties(penalties, leaves):
    return Penalties(_col(penalties.psi_plus, leaves), _col(penalties.psi_minus, leaves))


def pseudo_costs(reconciled, actual, penalties: Penalties):
    """Cost of each reconciled leaf value if it were offered alone."""
    _, rl = _split(reconciled)
    _, yl = _split(actual)
    return imbalance_cost(rl, yl, _leaf_penalties(penalties, rl))


def aggregate_cost(reconciled, actual, penalties: Penalties):
    rs, _ = _split(reconciled)
    ys, _ = _split(actual)
    return imbalance_cost(rs, ys, penalties)


def _gammas_from(mode, y_leaf, c_pseudo):
    m = y_leaf.shape[-1]
    num = y_leaf if mode == "ge" else c_pseudo
    den = num.sum(axis=-1, keepdims=True)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 1.0 / m)


def gammas(mode, reconciled, actual, penalties: Penalties):
    """Aggregate-cost shares; 1/m each when the denominator is zero."""
    if mode not in GAMMA_MODES:
        raise ConfigurationError(f"unknown gamma mode {mode!r}")
    _, yl = _split(actual)
    if np.any(yl < 0):
        raise DataError("negative actual generation")
    return _gammas_from(mode, yl, pseudo_costs(reconciled, actual, penalties))


def _check_coherent(reconciled, tol=1e-6):
    v = np.asarray(reconciled, dtype=float)
    h = Hierarchy.two_level(v.shape[-1] - 1)
    if not np.all(h.is_coherent(v, tol)):
        raise CoherenceError("reconciled vector is not coherent")


def allocate(policy: AllocationPolicy, reconciled, actual, penalties: Penalties, base_offers=None):
    """Per-producer allocated costs ``(1-w) c_i + w gamma_i c_sum``.

    ``base_offers`` (the independent leaf offers) is only needed to fill in
    the extra profit; otherwise it is NaN.
    """
    _check_coherent(reconciled)
    c_p = pseudo_costs(reconciled, actual, penalties)
    c_s = aggregate_cost(reconciled, actual, penalties)
    g = gammas(policy.gamma_mode, reconciled, actual, penalties)
    w = policy.w
    c_ag = (1.0 - w) * c_p + w * g * np.asarray(c_s)[..., None]
    pm = (1.0 - w) * (c_p.sum(axis=-1) - c_s)
    if base_offers is None:
        R = np.full(np.shape(c_s), np.nan)
    else:
        rs, _ = _split(reconciled)
        R = extra_profit(base_offers, rs, actual, penalties)
    return SettlementBreakdown(c_ag, c_s, c_p, g, pm, R)


def allocated_costs(policy: AllocationPolicy, reconciled, actual, penalties: Penalties):
    """Just the allocated costs, without the coherence check (hot path)."""
    c_p = pseudo_costs(reconciled, actual, penalties)
    c_s = aggregate_cost(reconciled, actual, penalties)
    _, yl = _split(actual)
    g = _gammas_from(policy.gamma_mode, yl, c_p)
    return (1.0 - policy.w) * c_p + policy.w * g * np.asarray(c_s)[..., None]


def allocated_costs_grad(policy: AllocationPolicy, leaves, actual, penalties: Penalties):
    """Allocated costs for a batch of reconciled leaves and their Jacobian.

    Args:
        leaves: ``(T, m)`` reconciled bottom-level values (the aggregate is their sum).
        actual: ``(T, m + 1)`` realised values.

    Returns:
        ``(c_ag, J)`` with ``c_ag`` of shape ``(T, m)`` and ``J[t, i, j] =
        d c_ag[t, i] / d leaves[t, j]``. Hinge kinks take subgradient 0.
    """
    leaves = np.asarray(leaves, dtype=float)
    ys, yl = _split(actual)
    T, m = leaves.shape
    pen_l = _leaf_penalties(penalties, leaves)
    s = leaves.sum(axis=1)
    c_p = imbalance_cost(leaves, yl, pen_l)
    dc_p = imbalance_cost_grad(leaves, yl, pen_l)
    c_s = imbalance_cost(s, ys, penalties)
    dc_s = imbalance_cost_grad(s, ys, penalties)
    w = policy.w
    eye = np.eye(m)
    if policy.gamma_mode == "ge":
        g = _gammas_from("ge", yl, c_p)
        dg = np.zeros((T, m, m))
    else:
        tot = c_p.sum(axis=1, keepdims=True)
        pos = tot > 0
        safe = np.where(pos, tot, 1.0)
        g = np.where(pos, c_p / safe, 1.0 / m)
        # d(c_i / sum c) / d x_j = (delta_ij c_i' sum - c_i c_j') / sum^2
        dg = (eye[None] * dc_p[:, None, :] * safe[:, :, None]
              - c_p[:, :, None] * dc_p[:, None, :]) / (safe[:, :, None] ** 2)
        dg = np.where(pos[:, :, None], dg, 0.0)
    c_ag = (1.0 - w) * c_p + w * g * c_s[:, None]
    J = ((1.0 - w) * eye[None] * dc_p[:, None, :]
         + w * (g[:, :, None] * dc_s[:, None, None] + dg * c_s[:, None, None]))
    return c_ag, J


def extra_profit(base_offers, reconciled_sum, actual, penalties: Penalties):
    """Independent-offer costs minus the cost of the reconciled aggregate offer."""
    ys, yl = _split(actual)
    b = np.asarray(base_offers, dtype=float)
    c_ind = imbalance_cost(b, yl, _leaf_penalties(penalties, b)).sum(axis=-1)
    return c_ind - imbalance_cost(np.asarray(reconciled_sum, dtype=float), ys, penalties)


def unit_cost_condition(reconciled, actual, penalties: Penalties):
    """Per-hour unit-cost condition: 1.0 holds, 0.0 fails, NaN inapplicable
    (some leaf or the aggregate produced nothing)."""
    ys, yl = _split(actual)
    c_p = pseudo_costs(reconciled, actual, penalties)
    c_s = aggregate_cost(reconciled, actual, penalties)
    ok_dom = (yl > 0).all(axis=-1) & (ys > 0)
    ys_safe = np.where(ok_dom, ys, 1.0)
    yl_safe = np.where(ok_dom[..., None], yl, 1.0)
    with np.errstate(over="ignore"):
        holds = np.all(c_s[..., None] / ys_safe[..., None] <= c_p / yl_safe, axis=-1)
    return np.where(ok_dom, holds.astype(float), np.nan)


def check_unit_cost_condition(reconciled, actual, penalties: Penalties):
    """Whether the aggregate's cost per MWh is no larger than every producer's.

    Returns ``True``/``False``, or ``None`` when the condition is inapplicable
    because some producer (or the portfolio) generated nothing.
    """
    r = float(unit_cost_condition(reconciled, actual, penalties))
    return None if np.isnan(r) else bool(r)


def csv_header(m):
    return (["t", "w", "gamma_mode", "c_sum"]
            + [f"c_agg_{i}" for i in range(1, m + 1)]
            + [f"c_pseudo_{i}" for i in range(1, m + 1)]
            + [f"gamma_{i}" for i in range(1, m + 1)]
            + ["R", "R_pm"])


def csv_rows(breakdown: SettlementBreakdown, policy: AllocationPolicy, t):
    """One row per hour in the :func:`csv_header` layout."""
    c_agg = np.atleast_2d(breakdown.c_agg)
    c_p = np.atleast_2d(breakdown.c_pseudo)
    g = np.atleast_2d(breakdown.gammas)
    c_s = np.atleast_1d(breakdown.c_sum)
    R = np.atleast_1d(breakdown.extra_profit)
    pm = np.atleast_1d(breakdown.pm_payoff)
    for k, tk in enumerate(np.atleast_1d(t)):
        yield ([int(tk), repr(float(policy.w)), policy.gamma_mode, repr(float(c_s[k]))]
               + [repr(float(v)) for v in c_agg[k]]
               + [repr(float(v)) for v in c_p[k]]
               + [repr(float(v)) for v in g[k]]
               + [repr(float(R[k])), repr(float(pm[k]))])
