"""Independent base forecasters: linear models on lagged values.

Two fitting routes are provided. Mean regression (least squares, or
full-batch gradient descent when a loss trace is wanted) produces
expected-value forecasts; pinball-loss subgradient descent produces quantile
forecasts, which are the newsvendor-optimal offers when the level is set to
the nominal level of the penalties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergenceError

DEFAULT_LAGS = (1, 2, 3, 24)


@dataclass(frozen=True)
class RegressionSpec:
    target: int = 0
    lags: tuple = DEFAULT_LAGS
    objective: str = "squared_error"
    level: float | None = None
    step: float = 0.5
    epochs: int = 2000
    batch_size: int | None = None

    def __post_init__(self):
        if self.lags is not None:
            lags = tuple(int(l) for l in self.lags)
            if not lags or min(lags) < 1:
                raise ValueError(f"lags must be nonempty and >= 1, got {self.lags}")
            object.__setattr__(self, "lags", lags)
        if self.objective not in ("squared_error", "pinball"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "pinball" and not (self.level is not None and 0 < self.level < 1):
            raise ValueError(f"pinball level must be in (0, 1), got {self.level}")
        if self.step <= 0 or self.epochs < 1:
            raise ValueError("step must be positive and epochs >= 1")


@dataclass
class FittedForecaster:
    """Affine model ``intercept + coef @ features`` on the raw feature scale."""

    coef: np.ndarray
    intercept: float
    spec: RegressionSpec
    capacity: float | None = None
    loss_trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if not (np.all(np.isfinite(self.coef)) and np.isfinite(self.intercept)):
            raise ValueError("non-finite forecaster weights")


def lagged_design(series, lags):
    """Rows ``[y[t - l] for l in lags]`` with target ``y[t]``, for ``t >= max(lags)``."""
    y = np.asarray(series, dtype=float)
    p = max(lags)
    if len(y) <= p:
        raise ValueError(f"series of length {len(y)} too short for max lag {p}")
    X = np.column_stack([y[p - l:len(y) - l] for l in lags])
    return X, y[p:]


def pinball_loss(pred, y, level):
    r = np.asarray(y, dtype=float) - pred
    return np.mean(np.maximum(level * r, (level - 1.0) * r))


def _standardize(X):
    mu = X.mean(axis=0) if X.shape[1] else np.zeros(0)
    sd = X.std(axis=0) if X.shape[1] else np.zeros(0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def _to_raw(w, b, mu, sd):
    coef = w / sd
    return coef, float(b - coef @ mu)


def fit_least_squares(X, y):
    """Least squares with intercept; rank deficiency falls back to a ridge
    damped by ``1e-6 * trace / dim`` of the centred Gram matrix."""
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    G = Xc.T @ Xc
    rhs = Xc.T @ (y - ym)
    p = G.shape[0]
    if p == 0:
        return np.zeros(0), float(ym)
    if np.linalg.matrix_rank(G) < p:
        tr = np.trace(G)
        G = G + (1e-6 * tr / p if tr > 0 else 1e-6) * np.eye(p)
    coef = np.linalg.solve(G, rhs)
    return coef, float(ym - coef @ xm)


def fit_least_squares_gd(X, y, step=0.5, epochs=500):
    """Full-batch gradient descent on the mean squared error.

    Returns ``(coef, intercept, loss_trace)``; the trace has one entry per
    epoch plus the initial loss.
    """
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    Z, mu, sd = _standardize(X)
    w = np.zeros(Z.shape[1])
    b = 0.0
    trace = [float(np.mean(y**2))]
    for _ in range(epochs):
        r = Z @ w + b - y
        w = w - step * (Z.T @ r) / len(y)
        b = b - step * r.mean()
        trace.append(float(np.mean((Z @ w + b - y) ** 2)))
    coef, intercept = _to_raw(w, b, mu, sd)
    return coef, intercept, trace


def fit_pinball(X, y, level, step=0.5, epochs=2000, batch_size=None, seed=0):
    """Subgradient descent on the pinball loss at ``level``.

    Features are standardised internally and the step is scaled by the target
    spread, with a ``1/sqrt(k)`` decay. The returned point is the better (in
    training loss) of the best iterate and the tail-averaged iterate.

    Raises:
        NonConvergenceError: when the loss has not improved on its starting
            value within the first 20% of epochs.
    """
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    n = len(y)
    Z, mu, sd = _standardize(X)
    w = np.zeros(Z.shape[1])
    b = 0.0
    scale = max(float(np.std(y)), float(np.mean(np.abs(y))), 1e-12)
    loss0 = pinball_loss(np.zeros(n), y, level)
    trace = [loss0]
    if loss0 <= 1e-15:
        return *_to_raw(w, b, mu, sd), trace
    rng = np.random.default_rng(seed)
    best = (loss0, w.copy(), b)
    tail_start = epochs // 2
    w_sum, b_sum, n_sum = np.zeros_like(w), 0.0, 0
    patience = max(1, epochs // 5)
    for k in range(epochs):
        idx = slice(None) if not batch_size or batch_size >= n else rng.choice(n, batch_size, replace=False)
        Zb, yb = Z[idx], y[idx]
        r = yb - (Zb @ w + b)
        # d/dpred of pinball: -level where r > 0, (1 - level) where r < 0, 0 at the kink
        g = np.where(r > 0, -level, np.where(r < 0, 1.0 - level, 0.0))
        eta = step * scale / np.sqrt(k + 1.0)
        w = w - eta * (Zb.T @ g) / len(yb)
        b = b - eta * g.mean()
        loss = pinball_loss(Z @ w + b, y, level)
        if not np.isfinite(loss):
            raise NonConvergenceError("pinball loss became non-finite", trace)
        trace.append(loss)
        if loss < best[0]:
            best = (loss, w.copy(), b)
        if k >= tail_start:
            w_sum += w
            b_sum += b
            n_sum += 1
        if k + 1 == patience and best[0] >= loss0:
            raise NonConvergenceError(
                f"pinball loss did not improve within {patience} epochs", trace
            )
    if n_sum:
        wa, ba = w_sum / n_sum, b_sum / n_sum
        la = pinball_loss(Z @ wa + ba, y, level)
        if la < best[0]:
            best = (la, wa, ba)
    return *_to_raw(best[1], best[2], mu, sd), trace


def fit_mean(series, spec: RegressionSpec, capacity=None, method="lstsq"):
    """Fit a mean-regression forecaster on lagged values of ``series``."""
    if spec.objective != "squared_error":
        raise ValueError("fit_mean needs a squared_error spec")
    if len(series) <= max(spec.lags) + 10:
        raise ValueError("series too short for the requested lags")
    X, y = lagged_design(series, spec.lags)
    if method == "lstsq":
        coef, intercept = fit_least_squares(X, y)
        trace = []
    elif method == "gd":
        coef, intercept, trace = fit_least_squares_gd(X, y, spec.step, spec.epochs)
    else:
        raise ValueError(f"unknown method {method!r}")
    return FittedForecaster(coef, intercept, spec, capacity, trace)


def fit_quantile(series, spec: RegressionSpec, level=None, capacity=None, seed=0):
    """Fit a quantile-regression forecaster at ``level`` (defaults to ``spec.level``)."""
    level = spec.level if level is None else level
    if not (level is not None and 0 < level < 1):
        raise ValueError(f"quantile level must be in (0, 1), got {level}")
    if len(series) <= max(spec.lags) + 10:
        raise ValueError("series too short for the requested lags")
    X, y = lagged_design(series, spec.lags)
    coef, intercept, trace = fit_pinball(X, y, level, spec.step, spec.epochs, spec.batch_size, seed)
    if spec.objective != "pinball" or spec.level != level:
        spec = RegressionSpec(spec.target, spec.lags, "pinball", level, spec.step, spec.epochs, spec.batch_size)
    return FittedForecaster(coef, intercept, spec, capacity, trace)


def predict(model: FittedForecaster, features):
    """Clamped linear score; ``features`` is one vector or a ``(T, p)`` matrix."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.coef.shape[0]:
        raise ValueError(f"expected {model.coef.shape[0]} features, got {x.shape[-1]}")
    score = x @ model.coef + model.intercept
    hi = np.inf if model.capacity is None else model.capacity
    out = np.clip(score, 0.0, hi)
    return float(out) if out.ndim == 0 else out


def predict_series(model: FittedForecaster, series):
    """Forecast ``series[t]`` for every ``t >= max(lags)``; earlier entries are NaN."""
    y = np.asarray(series, dtype=float)
    X, _ = lagged_design(y, model.spec.lags)
    out = np.full(len(y), np.nan)
    out[max(model.spec.lags):] = predict(model, X)
    return out
