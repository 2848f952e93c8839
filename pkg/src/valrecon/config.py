"""Run configuration: a flat INI document with one level of sections.

Every key has a default, so an empty file (or none) is a valid run. The
resolved document is rendered canonically and hashed; the hash and seed go
into every output file.

Sections and keys::

    [run]        seed, out, jobs, case
    [data]       source (synthetic | csv), generation, prices, one_sided
    [synthetic]  m, capacities, ar, correlation, mean_frac, spread, diurnal,
                 price_regime, pi_f, psi_plus, psi_minus, horizon, start
    [forecast]   base (mean | quantile), lags, lead, gen_lags, penalty_lags
    [experiment] strategies, w_grid, seeds, w
    [train]      every TrainConfig field except seed and w
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields

from . import dataio
from .baseforecast import DEFAULT_LAGS
from .errors import ConfigurationError
from .evaluate import CASE1_STRATEGIES, W_GRID
from .reconcile import KINDS, TrainConfig

STRATEGIES = ("independent",) + KINDS
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("seed", "w")]


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _words(text):
    return tuple(v for v in text.replace(",", " ").split())


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


@dataclass
class RunConfig:
    seed: int = 42
    out: str | None = None
    jobs: int = 1
    case: str = "case1"
    source: str = "synthetic"
    generation: str | None = None
    prices: str | None = None
    one_sided: bool = False
    synthetic: dict = field(default_factory=dict)
    base: str = "mean"
    lags: tuple = DEFAULT_LAGS
    lead: int = 1
    gen_lags: tuple = (1, 2, 3)
    penalty_lags: int | None = None
    strategies: tuple = CASE1_STRATEGIES
    w_grid: tuple = W_GRID
    seeds: int = 10
    w: float = 0.9
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigurationError(f"data source must be synthetic or csv, got {self.source!r}")
        if self.source == "csv" and not (self.generation and self.prices):
            raise ConfigurationError("csv source needs both generation and prices paths")
        if self.base not in ("mean", "quantile"):
            raise ConfigurationError(f"base must be mean or quantile, got {self.base!r}")
        if self.case not in ("case1", "case2", "casestudy"):
            raise ConfigurationError(f"unknown case {self.case!r}")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigurationError(f"unknown strategies {bad}")
        if self.jobs < 1 or self.seeds < 1:
            raise ConfigurationError("jobs and seeds must be >= 1")
        if any(not 0.0 <= w <= 1.0 for w in self.w_grid + (self.w,)):
            raise ConfigurationError("allocation weights must lie in [0, 1]")
        unknown = set(self.train) - set(_TRAIN_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown [train] keys {sorted(unknown)}")
        # build once so bad values fail here, not mid-run
        self.synthetic_spec()
        self.train_config()

    def synthetic_spec(self) -> dataio.SyntheticSpec:
        return dataio.SyntheticSpec(seed=self.seed, **self.synthetic)

    def train_config(self, w=None, seed=None) -> TrainConfig:
        return TrainConfig(seed=self.seed if seed is None else seed,
                           w=self.w if w is None else w, **self.train)

    def context(self) -> dataio.ContextSpec:
        return dataio.ContextSpec(self.gen_lags, self.penalty_lags)

    def resolved(self) -> dict:
        """Every setting, module defaults included, as ``{section: {key: text}}``."""
        spec = self.synthetic_spec()
        tc = self.train_config()
        syn = {f.name: getattr(spec, f.name) for f in fields(spec) if f.name != "seed"}
        return {
            "run": {"seed": self.seed, "jobs": self.jobs, "case": self.case},
            "data": {"source": self.source, "generation": self.generation, "prices": self.prices,
                     "one_sided": self.one_sided},
            "synthetic": syn,
            "forecast": {"base": self.base, "lags": tuple(self.lags), "lead": self.lead,
                         "gen_lags": tuple(self.gen_lags), "penalty_lags": self.penalty_lags},
            "experiment": {"strategies": tuple(self.strategies), "w_grid": tuple(self.w_grid),
                           "seeds": self.seeds, "w": self.w},
            "train": {k: getattr(tc, k) for k in _TRAIN_KEYS},
        }

    def render(self) -> str:
        lines = []
        for sec, kv in self.resolved().items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {_fmt(v if not isinstance(v, list) else tuple(v))}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        """Short SHA-256 of the canonical resolved document. ``jobs`` and
        ``out`` are excluded: they do not change results."""
        text = self.render().replace(f"jobs = {self.jobs}\n", "")
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def provenance(self) -> str:
        return f"valrecon config_hash={self.hash()} seed={self.seed}"


def _synthetic_value(key, text):
    if key in ("capacities", "ar"):
        vals = _floats(text)
        return vals if len(vals) > 1 or key == "capacities" else vals[0]
    if key == "correlation":
        return float(text)
    if key in ("m", "horizon"):
        return int(text)
    if key in ("price_regime", "start"):
        return text
    return float(text)


def _train_value(key, text):
    default = getattr(TrainConfig(), key)
    if key == "hidden":
        return _ints(text)
    if key == "nu":
        vals = _floats(text)
        return vals[0] if len(vals) == 1 else vals
    if key == "clip_norm":
        return None if text.lower() == "none" else float(text)
    return type(default)(text)


def load(path=None, overrides=None) -> RunConfig:
    """Parse an INI file (or nothing) into a :class:`RunConfig`.

    ``overrides`` are keyword values applied last (e.g. from CLI flags).
    Unknown sections or keys are configuration errors.
    """
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    known = {"run", "data", "synthetic", "forecast", "experiment", "train"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigurationError(f"unknown config sections {sorted(extra)}")
    kw = {"synthetic": {}, "train": {}}
    try:
        for key, text in cp.items("run") if cp.has_section("run") else []:
            if key == "seed" or key == "jobs":
                kw[key] = int(text)
            elif key in ("out", "case"):
                kw[key] = text
            else:
                raise ConfigurationError(f"unknown [run] key {key!r}")
        for key, text in cp.items("data") if cp.has_section("data") else []:
            if key == "one_sided":
                kw[key] = cp.getboolean("data", key)
            elif key in ("source", "generation", "prices"):
                kw[key] = text
            else:
                raise ConfigurationError(f"unknown [data] key {key!r}")
        syn_keys = {f.name for f in fields(dataio.SyntheticSpec)} - {"seed"}
        for key, text in cp.items("synthetic") if cp.has_section("synthetic") else []:
            if key not in syn_keys:
                raise ConfigurationError(f"unknown [synthetic] key {key!r}")
            kw["synthetic"][key] = _synthetic_value(key, text)
        for key, text in cp.items("forecast") if cp.has_section("forecast") else []:
            if key == "base":
                kw[key] = text
            elif key in ("lags", "gen_lags"):
                kw[key] = _ints(text)
            elif key == "lead":
                kw[key] = int(text)
            elif key == "penalty_lags":
                kw[key] = None if text.lower() == "none" else int(text)
            else:
                raise ConfigurationError(f"unknown [forecast] key {key!r}")
        for key, text in cp.items("experiment") if cp.has_section("experiment") else []:
            if key == "strategies":
                kw[key] = _words(text)
            elif key == "w_grid":
                kw[key] = _floats(text)
            elif key == "seeds":
                kw[key] = int(text)
            elif key == "w":
                kw[key] = float(text)
            else:
                raise ConfigurationError(f"unknown [experiment] key {key!r}")
        for key, text in cp.items("train") if cp.has_section("train") else []:
            if key not in _TRAIN_KEYS:
                raise ConfigurationError(f"unknown [train] key {key!r}")
            kw["train"][key] = _train_value(key, text)
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            kw[k] = v
    try:
        return RunConfig(**kw)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
