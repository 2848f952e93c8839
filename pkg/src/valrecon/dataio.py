"""Data ingestion, synthetic series and experiment datasets.

CSV layouts (ISO-8601 UTC timestamps, hourly, lines starting with ``#`` are
comments)::

    generation:  timestamp,leaf_1,...,leaf_m[,aggregate][,filled]
    prices:      timestamp,spot,up_reg,down_reg
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import baseforecast as bf
from .errors import ConfigurationError, DataError
from .hierarchy import RecordSet
from .market import penalties_from_prices

HOUR = np.timedelta64(3600, "s")
MAX_GAP_HOURS = 3
DEFAULT_CAPACITIES = (1.7496, 2.9646, 3.3777, 2.5272)


@dataclass
class RawDataset:
    """Hourly generation and price series on a common, gap-free time axis."""

    timestamps: np.ndarray
    generation: np.ndarray
    pi_f: np.ndarray
    pi_up: np.ndarray
    pi_dw: np.ndarray
    capacities: np.ndarray | None = None
    filled: np.ndarray | None = None

    def __post_init__(self):
        T = len(self.timestamps)
        self.generation = np.atleast_2d(np.asarray(self.generation, dtype=float).T).T
        for name in ("generation", "pi_f", "pi_up", "pi_dw"):
            if len(getattr(self, name)) != T:
                raise DataError(f"{name} length differs from timestamps")
        if self.filled is None:
            self.filled = np.zeros(T, dtype=bool)

    @property
    def m(self):
        return self.generation.shape[1]

    @property
    def aggregate(self):
        return self.generation.sum(axis=1)

    @property
    def series(self):
        """``(T, m + 1)`` array in hierarchy order ``[aggregate, leaves]``."""
        return np.column_stack([self.aggregate, self.generation])

    @property
    def penalties(self):
        return penalties_from_prices(self.pi_f, self.pi_up, self.pi_dw)

    def leaf_capacities(self, end=None):
        """Nameplate capacities when known, else the largest output over the
        first ``end`` hours (pass the training window to avoid peeking)."""
        if self.capacities is not None:
            return np.asarray(self.capacities, dtype=float)
        cap = self.generation[:end].max(axis=0)
        return np.where(cap > 0, cap, 1.0)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def parse_timestamp(text):
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt.replace(microsecond=0), "s")


def format_timestamp(ts):
    return str(np.datetime64(ts, "s")) + "Z"


def _read_rows(path):
    """Yield ``(line_number, fields)`` skipping blank and comment lines."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _parse_table(path, required_prefix):
    rows = iter(_read_rows(path))
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if header[0] != "timestamp":
        raise DataError(f"{path}: first column must be 'timestamp'", 1)
    ts, vals, lines = [], [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataError(f"{path}: expected {len(header)} fields, got {len(row)}", lineno)
        try:
            ts.append(parse_timestamp(row[0]))
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: unparseable value ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in vals[-1]):
            raise DataError(f"{path}: non-finite value", lineno)
        lines.append(lineno)
    if not ts:
        raise DataError(f"{path}: no data rows")
    return header, np.array(ts), np.array(vals, dtype=float), np.array(lines)


def _fill_gaps(ts, vals, lines, path, max_gap=MAX_GAP_HOURS):
    """Put rows on a complete hourly grid, interpolating gaps of <= max_gap hours."""
    steps = np.diff(ts) // HOUR
    rem = np.diff(ts) % HOUR
    bad = np.flatnonzero((steps < 1) | (rem != np.timedelta64(0, "s")))
    if bad.size:
        raise DataError(f"{path}: timestamps not strictly increasing on the hour", int(lines[bad[0] + 1]))
    big = np.flatnonzero(steps - 1 > max_gap)
    if big.size:
        raise DataError(f"{path}: gap of {int(steps[big[0]]) - 1} hours exceeds {max_gap}", int(lines[big[0] + 1]))
    offs = np.concatenate([[0], np.cumsum(steps)]).astype(np.int64)
    grid = np.arange(offs[-1] + 1)
    filled = ~np.isin(grid, offs)
    out = np.column_stack([np.interp(grid, offs, vals[:, j]) for j in range(vals.shape[1])])
    return ts[0] + grid * HOUR, out, filled


def ingest_csv(generation_path, price_path, max_gap=MAX_GAP_HOURS, aggregate_rtol=1e-6,
               capacities=None, one_sided=False) -> RawDataset:
    """Read and validate the two CSV files into a :class:`RawDataset`.

    ``one_sided`` additionally requires that at most one regulation price
    differs from spot in every hour.

    Raises:
        DataError: schema mismatch, unparseable or negative values, aggregate
            not equal to the leaf sum, price ordering violations, long gaps or
            misaligned time axes. Messages carry the offending line number.
    """
    header, ts, vals, lines = _parse_table(generation_path, "leaf_")
    cols = header[1:]
    has_filled = cols[-1] == "filled"
    if has_filled:
        cols = cols[:-1]
    has_agg = cols[-1] == "aggregate"
    leaf_cols = cols[:-1] if has_agg else cols
    if not leaf_cols or leaf_cols != [f"leaf_{i}" for i in range(1, len(leaf_cols) + 1)]:
        raise DataError(f"{generation_path}: expected columns leaf_1..leaf_m[,aggregate], got {cols}", 1)
    m = len(leaf_cols)
    gen = vals[:, :m]
    neg = np.flatnonzero((gen < 0).any(axis=1))
    if neg.size:
        raise DataError(f"{generation_path}: negative generation", int(lines[neg[0]]))
    if has_agg:
        agg = vals[:, m]
        s = gen.sum(axis=1)
        off = np.flatnonzero(np.abs(agg - s) > aggregate_rtol * np.maximum(1.0, np.abs(s)))
        if off.size:
            raise DataError(f"{generation_path}: aggregate != sum of leaves", int(lines[off[0]]))

    pheader, pts, pvals, plines = _parse_table(price_path, "")
    if pheader != ["timestamp", "spot", "up_reg", "down_reg"]:
        raise DataError(f"{price_path}: expected columns timestamp,spot,up_reg,down_reg, got {pheader}", 1)
    spot, up, dw = pvals.T
    for cond, what in ((up < spot, "up_reg below spot"), (dw > spot, "down_reg above spot")):
        bad = np.flatnonzero(cond)
        if bad.size:
            raise DataError(f"{price_path}: {what}", int(plines[bad[0]]))
    if one_sided:
        bad = np.flatnonzero((up != spot) & (dw != spot))
        if bad.size:
            raise DataError(f"{price_path}: both regulation prices differ from spot", int(plines[bad[0]]))

    gts, gen, gfill = _fill_gaps(ts, gen, lines, generation_path, max_gap)
    if has_filled:
        prior = np.zeros(len(gts), dtype=bool)
        idx = ((ts - gts[0]) // HOUR).astype(int)
        prior[idx] = vals[:, -1] != 0
        gfill = gfill | prior
    pts, pv, pfill = _fill_gaps(pts, pvals, plines, price_path, max_gap)
    if len(gts) != len(pts) or np.any(gts != pts):
        raise DataError("generation and price files do not cover the same hours")
    return RawDataset(gts, gen, pv[:, 0], pv[:, 1], pv[:, 2], capacities, gfill | pfill)


def write_csv(raw: RawDataset, generation_path, price_path, comment=None):
    """Write ``raw`` in the ingestion layout (floats at full precision)."""
    m = raw.m
    with open(generation_path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        wr = csv.writer(fh, lineterminator="\n")
        extra = ["filled"] if raw.filled.any() else []
        wr.writerow(["timestamp"] + [f"leaf_{i}" for i in range(1, m + 1)] + ["aggregate"] + extra)
        for k in range(len(raw.timestamps)):
            row = [format_timestamp(raw.timestamps[k])] + [repr(float(v)) for v in raw.generation[k]]
            row.append(repr(float(raw.generation[k].sum())))
            if extra:
                row.append(str(int(raw.filled[k])))
            wr.writerow(row)
    with open(price_path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["timestamp", "spot", "up_reg", "down_reg"])
        for k in range(len(raw.timestamps)):
            wr.writerow([format_timestamp(raw.timestamps[k]), repr(float(raw.pi_f[k])),
                         repr(float(raw.pi_up[k])), repr(float(raw.pi_dw[k]))])


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Correlated, clipped vector-AR(1) wind output and market prices.

    Leaf ``i`` produces ``u_i * clip(mean_frac + diurnal * sin(2 pi h / 24)
    + spread * x_i, 0, 1)`` where ``x`` is a unit-variance VAR(1) with AR
    coefficients ``ar`` and innovation correlation ``correlation``.

    ``price_regime`` is ``fixed`` (constant ``pi_f``, ``psi_plus``,
    ``psi_minus``) or ``switching``: a three-state Markov chain (balanced /
    up-regulation / down-regulation) around a daily spot profile, with
    one-sided regulation prices.
    """

    m: int = 4
    capacities: tuple = DEFAULT_CAPACITIES
    ar: tuple | float = 0.95
    correlation: np.ndarray | float = 0.5
    mean_frac: float = 0.35
    spread: float = 0.3
    diurnal: float = 0.05
    price_regime: str = "fixed"
    pi_f: float = 25.0
    psi_plus: float = 12.0
    psi_minus: float = 4.0
    regime_persistence: float = 0.8
    up_mean: float = 8.0
    down_mean: float = 10.0
    horizon: int = 17000
    seed: int = 42
    start: str = "2007-01-01T00:00:00Z"

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("m must be >= 1")
        caps = np.atleast_1d(np.asarray(self.capacities, dtype=float))
        if caps.size != self.m:
            if self.m <= len(DEFAULT_CAPACITIES) and tuple(self.capacities) == DEFAULT_CAPACITIES:
                caps = np.asarray(DEFAULT_CAPACITIES[: self.m])
            else:
                raise ConfigurationError(f"need {self.m} capacities, got {caps.size}")
        if np.any(caps <= 0):
            raise ConfigurationError("capacities must be positive")
        self.capacities = tuple(float(c) for c in caps)
        ar = np.broadcast_to(np.asarray(self.ar, dtype=float), (self.m,))
        if np.any(np.abs(ar) >= 1):
            raise ConfigurationError("AR coefficients must lie in (-1, 1)")
        C = self.correlation_matrix()
        if not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() < -1e-10:
            raise ConfigurationError("correlation matrix must be symmetric positive semidefinite")
        if self.price_regime not in ("fixed", "switching"):
            raise ConfigurationError(f"unknown price regime {self.price_regime!r}")
        if self.psi_plus < 0 or self.psi_minus < 0:
            raise ConfigurationError("penalties must be non-negative")
        if self.horizon < 48:
            raise ConfigurationError("horizon must be at least 48 hours")

    def correlation_matrix(self):
        c = np.asarray(self.correlation, dtype=float)
        if c.ndim == 0:
            C = np.full((self.m, self.m), float(c))
            np.fill_diagonal(C, 1.0)
            return C
        if c.shape != (self.m, self.m):
            raise ConfigurationError(f"correlation matrix must be {self.m}x{self.m}")
        return c


def _psd_sqrt(C):
    vals, vecs = np.linalg.eigh(C)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def synthesize(spec: SyntheticSpec) -> RawDataset:
    """Deterministic synthetic dataset for ``spec`` (same seed, same arrays)."""
    rng = np.random.default_rng(spec.seed)
    m, T = spec.m, spec.horizon
    ar = np.broadcast_to(np.asarray(spec.ar, dtype=float), (m,))
    L = _psd_sqrt(spec.correlation_matrix())
    innov = rng.standard_normal((T, m)) @ L.T
    x = np.empty((T, m))
    x[0] = innov[0]
    scale = np.sqrt(1.0 - ar**2)
    for t in range(1, T):
        x[t] = ar * x[t - 1] + scale * innov[t]
    hours = np.arange(T)
    level = spec.mean_frac + spec.diurnal * np.sin(2 * np.pi * (hours % 24) / 24.0)
    caps = np.asarray(spec.capacities)
    gen = caps * np.clip(level[:, None] + spec.spread * x, 0.0, 1.0)

    if spec.price_regime == "fixed":
        pi_f = np.full(T, spec.pi_f)
        pi_up = pi_f + spec.psi_minus
        pi_dw = pi_f - spec.psi_plus
    else:
        prng = np.random.default_rng([spec.seed, 1])
        spot = spec.pi_f + 8.0 * np.sin(2 * np.pi * ((hours % 24) - 7) / 24.0)
        noise = np.empty(T)
        noise[0] = 0.0
        e = prng.normal(0.0, 2.0, T)
        for t in range(1, T):
            noise[t] = 0.9 * noise[t - 1] + e[t]
        pi_f = spot + noise
        p = spec.regime_persistence
        state = np.empty(T, dtype=int)
        state[0] = 0
        u = prng.random(T)
        pick = prng.integers(0, 3, T)
        for t in range(1, T):
            state[t] = state[t - 1] if u[t] < p else pick[t]
        up_amt = prng.exponential(spec.up_mean, T)
        dw_amt = prng.exponential(spec.down_mean, T)
        pi_up = np.where(state == 1, pi_f + up_amt, pi_f)
        pi_dw = np.where(state == 2, pi_f - dw_amt, pi_f)

    start = parse_timestamp(spec.start)
    ts = start + hours * HOUR
    return RawDataset(ts, gen, pi_f, pi_up, pi_dw, caps)


# ---------------------------------------------------------------------------
# experiment records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContextSpec:
    """Context features: generation of every series at ``t - l`` for each
    ``gen_lags`` entry, plus (when ``penalty_lags`` is set) both penalties at
    the issue hour and the ``penalty_lags`` hours before it."""

    gen_lags: tuple = (1, 2, 3)
    penalty_lags: int | None = None

    def dim(self, n):
        d = len(self.gen_lags) * n
        if self.penalty_lags is not None:
            d += 2 * (self.penalty_lags + 1)
        return d


@dataclass
class ExperimentDataset:
    records: RecordSet
    timestamps: np.ndarray
    n_train: int
    forecasters: list = field(default_factory=list)
    capacities: np.ndarray | None = None

    @property
    def train(self):
        return self.records[: self.n_train]

    @property
    def test(self):
        return self.records[self.n_train:]


def train_size(n):
    """Chronological 80/20 rule, floor on the training part."""
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    return int(math.floor(0.8 * n))


def split(dataset: ExperimentDataset):
    """``(train, test)`` record views."""
    return dataset.train, dataset.test


def first_usable(context: ContextSpec, base_lags, k):
    need = [max(base_lags)]
    if context.gen_lags:
        need.append(max(context.gen_lags))
    if context.penalty_lags is not None:
        need.append(k + context.penalty_lags)
    return max(need)


def build_records(raw: RawDataset, forecasters, context: ContextSpec = ContextSpec(), k=1,
                  n_train=None) -> ExperimentDataset:
    """One record per usable target hour ``tau``.

    Base forecasts come from ``forecasters`` (one per series, hierarchy
    order). Context features use only values at or before the issue hour
    ``tau - k``; leading hours without enough history are dropped.
    """
    if k < 1:
        raise ConfigurationError("lead time k must be >= 1")
    series = raw.series
    n = series.shape[1]
    if len(forecasters) != n:
        raise ConfigurationError(f"need {n} forecasters (aggregate + leaves), got {len(forecasters)}")
    base_lags = [l for f in forecasters for l in f.spec.lags]
    if min(base_lags) < k or (context.gen_lags and min(context.gen_lags) < k):
        raise ConfigurationError(f"lags below the lead time {k} would use future values")
    start = first_usable(context, base_lags, k)
    T = len(series)
    tau = np.arange(start, T)
    if len(tau) == 0:
        raise DataError("series too short for the requested lags")
    base = np.column_stack([bf.predict_series(f, series[:, j])[tau] for j, f in enumerate(forecasters)])
    feats = [series[tau - l] for l in context.gen_lags]
    pen = raw.penalties
    pp = np.broadcast_to(pen.psi_plus, (T,))
    pm = np.broadcast_to(pen.psi_minus, (T,))
    if context.penalty_lags is not None:
        issue = tau - k
        feats.append(np.column_stack([pp[issue - j] for j in range(context.penalty_lags, -1, -1)]))
        feats.append(np.column_stack([pm[issue - j] for j in range(context.penalty_lags, -1, -1)]))
    ctx = np.column_stack(feats) if feats else np.zeros((len(tau), 0))
    recs = RecordSet(tau, base, ctx, series[tau], pp[tau].astype(float), pm[tau].astype(float),
                     np.asarray(raw.pi_f, dtype=float)[tau])
    n_tr = train_size(len(recs)) if n_train is None else n_train
    return ExperimentDataset(recs, raw.timestamps[tau], n_tr, list(forecasters),
                             raw.leaf_capacities(start + n_tr))


def quantile_level(raw: RawDataset, end=None):
    """Nominal level from long-run mean penalties over ``[0, end)``."""
    pen = raw.penalties
    pp = np.broadcast_to(pen.psi_plus, (len(raw.timestamps),))[:end]
    pm = np.broadcast_to(pen.psi_minus, (len(raw.timestamps),))[:end]
    a, b = float(np.mean(pp)), float(np.mean(pm))
    if a + b <= 0:
        raise DataError("penalties are zero throughout the training window")
    return a / (a + b)


def prepare(raw: RawDataset, base="mean", lags=bf.DEFAULT_LAGS, context: ContextSpec = ContextSpec(),
            k=1, seed=0) -> ExperimentDataset:
    """Fit base forecasters on the training window only, then build records.

    ``base`` is ``mean`` (least squares) or ``quantile`` (pinball loss at the
    nominal level of the training-window mean penalties).
    """
    lags = tuple(lags)
    start = first_usable(context, lags, k)
    n_rec = len(raw.timestamps) - start
    n_tr = train_size(n_rec)
    end = start + n_tr
    series = raw.series
    caps = raw.leaf_capacities(end)
    caps_all = np.concatenate([[caps.sum()], caps])
    fitted = []
    level = quantile_level(raw, end) if base == "quantile" else None
    for j in range(series.shape[1]):
        y = series[:end, j]
        if base == "mean":
            spec = bf.RegressionSpec(target=j, lags=lags)
            fitted.append(bf.fit_mean(y, spec, capacity=caps_all[j]))
        elif base == "quantile":
            spec = bf.RegressionSpec(target=j, lags=lags, objective="pinball", level=level)
            fitted.append(bf.fit_quantile(y, spec, level, capacity=caps_all[j], seed=seed))
        else:
            raise ConfigurationError(f"unknown base forecast type {base!r}")
    return build_records(raw, fitted, context, k, n_tr)
