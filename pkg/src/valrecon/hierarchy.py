"""Structural matrix algebra for forecast hierarchies.

Series are always ordered ``[aggregates..., leaf_1, ..., leaf_m]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoherenceError
from .market import Penalties, imbalance_cost


class Hierarchy:
    """Hierarchy with ``m`` leaves and ``n - m`` aggregate series.

    Args:
        s_sum: binary ``(n - m, m)`` aggregation matrix. ``None`` gives the
            two-level hierarchy with a single all-ones aggregation row.
        m: leaf count, required when ``s_sum`` is ``None``.
    """

    def __init__(self, s_sum=None, m=None):
        if s_sum is None:
            if m is None or m < 1:
                raise ValueError("need m >= 1 for the two-level hierarchy")
            s_sum = np.ones((1, m), dtype=np.int64)
        s_sum = np.atleast_2d(np.asarray(s_sum))
        if not np.isin(s_sum, (0, 1)).all():
            raise ValueError("aggregation matrix must be binary")
        s_sum = s_sum.astype(np.int64)
        self.m = s_sum.shape[1]
        self.n = s_sum.shape[0] + self.m
        self.S = np.vstack([s_sum, np.eye(self.m, dtype=np.int64)])
        self.B = np.hstack([np.eye(self.n - self.m, dtype=np.int64), -s_sum])
        assert not (self.B @ self.S).any()
        self._Sf = self.S.astype(float)
        self._Bf = self.B.astype(float)

    @classmethod
    def two_level(cls, m):
        return cls(m=m)

    def __repr__(self):
        return f"Hierarchy(m={self.m}, n={self.n})"

    def aggregate(self, bottom):
        """``S @ bottom``; accepts a length-m vector or a ``(T, m)`` batch."""
        bottom = np.asarray(bottom, dtype=float)
        if bottom.shape[-1] != self.m:
            raise ValueError(f"expected {self.m} leaf values, got {bottom.shape[-1]}")
        return bottom @ self._Sf.T

    def coherence_residual(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} series, got {v.shape[-1]}")
        return v @ self._Bf.T

    def is_coherent(self, v, tol=1e-9):
        """True iff every component of ``B v`` is within ``tol * (1 + max|v|)``.

        For a ``(T, n)`` batch returns one flag per row.
        """
        if tol < 0:
            raise ValueError("tol must be non-negative")
        v = np.asarray(v, dtype=float)
        r = np.abs(self.coherence_residual(v))
        scale = 1.0 + np.max(np.abs(v), axis=-1)
        return np.all(r <= tol * scale[..., None], axis=-1) if v.ndim > 1 else bool(np.all(r <= tol * scale))

    def require_coherent(self, v, tol=1e-6):
        ok = self.is_coherent(v, tol)
        if not np.all(ok):
            bad = np.flatnonzero(~np.atleast_1d(ok))
            raise CoherenceError(f"incoherent series vector(s) at rows {bad[:10].tolist()}")

    def leaves(self, v):
        return np.asarray(v)[..., self.n - self.m:]


@dataclass(frozen=True)
class ForecastRecord:
    """One issue time: base forecasts, context features and realised values.

    ``base`` and ``actual`` are length-n vectors in hierarchy order; the base
    forecast is generally incoherent.
    """

    t: int
    base: np.ndarray
    context: np.ndarray
    actual: np.ndarray
    psi_plus: float = 0.0
    psi_minus: float = 0.0
    pi_f: float = 0.0


@dataclass
class RecordSet:
    """Column-stacked :class:`ForecastRecord` values for ``T`` issue times.

    ``base`` and ``actual`` are ``(T, n)``, ``context`` is ``(T, d)`` and the
    price fields are ``(T,)``.
    """

    t: np.ndarray
    base: np.ndarray
    context: np.ndarray
    actual: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    pi_f: np.ndarray

    def __post_init__(self):
        T = len(self.t)
        for name in ("base", "context", "actual", "psi_plus", "psi_minus", "pi_f"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {T}")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx):
        if np.ndim(idx) == 0 and not isinstance(idx, slice):
            return ForecastRecord(int(self.t[idx]), self.base[idx], self.context[idx], self.actual[idx],
                                  float(self.psi_plus[idx]), float(self.psi_minus[idx]), float(self.pi_f[idx]))
        return RecordSet(self.t[idx], self.base[idx], self.context[idx], self.actual[idx],
                         self.psi_plus[idx], self.psi_minus[idx], self.pi_f[idx])

    @property
    def m(self):
        return self.actual.shape[1] - 1

    @property
    def penalties(self):
        return Penalties(self.psi_plus, self.psi_minus)

    @property
    def degenerate(self):
        return (self.psi_plus + self.psi_minus) <= 0

    def independent_costs(self):
        """``(T, m)`` imbalance costs of offering the base leaf forecasts."""
        pen = Penalties(self.psi_plus[:, None], self.psi_minus[:, None])
        return imbalance_cost(self.base[:, 1:], self.actual[:, 1:], pen)
