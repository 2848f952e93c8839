"""Profit and accuracy metrics, and the strategy-by-weight sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationPolicy, allocate, unit_cost_condition
from .hierarchy import RecordSet
from .market import Penalties, imbalance_cost
from .reconcile import ReconModel, TrainConfig, reconcile, train

log = logging.getLogger(__name__)

W_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
CASE1_STRATEGIES = ("independent", "bottom_up", "quality_learned", "value_learned",
                    "quality_linear", "value_linear")
CASE2_STRATEGIES = ("independent", "bottom_up", "quality_learned", "value_learned")
# quality and BU models do not depend on w and are trained once per sweep
W_FREE = ("bottom_up", "quality_learned", "quality_linear")


def average_profit_independent(records: RecordSet):
    """Mean per-producer profit when each offers its own base forecast."""
    if len(records) == 0:
        raise ValueError("empty test set")
    y = records.actual[:, 1:]
    profit = records.pi_f[:, None] * y - records.independent_costs()
    return profit.mean(axis=0)


def aggregated_profits(records: RecordSet, model: ReconModel, policy: AllocationPolicy):
    """Per-record profits ``pi_f * y_i - c_ag_i`` and the settlement breakdown."""
    rec = reconcile(model, records.base, records.context)
    bd = allocate(policy, rec, records.actual, records.penalties, base_offers=records.base[:, 1:])
    return records.pi_f[:, None] * records.actual[:, 1:] - bd.c_agg, bd


def average_profit_aggregated(records: RecordSet, model: ReconModel, policy: AllocationPolicy):
    if len(records) == 0:
        raise ValueError("empty test set")
    profits, _ = aggregated_profits(records, model, policy)
    return profits.mean(axis=0)


def hierarchical_rmse(records: RecordSet, model: ReconModel):
    """RMSE over all records and all series of the reconciled forecasts."""
    rec = reconcile(model, records.base, records.context)
    return float(np.sqrt(np.mean((rec - records.actual) ** 2)))


def unit_cost_rate(records: RecordSet, model: ReconModel):
    """Fraction of hours where the unit-cost condition holds (inapplicable
    hours count as not holding)."""
    rec = reconcile(model, records.base, records.context)
    flags = unit_cost_condition(rec, records.actual, records.penalties)
    return float(np.nansum(flags) / len(flags))


def mean_unit_cost_condition(records: RecordSet, model: ReconModel):
    """The unit-cost condition on test-period averages of costs and generation."""
    rec = reconcile(model, records.base, records.context)
    pen = records.penalties
    c_s = imbalance_cost(rec[:, 0], records.actual[:, 0], pen).mean()
    c_p = imbalance_cost(rec[:, 1:], records.actual[:, 1:],
                         Penalties(records.psi_plus[:, None], records.psi_minus[:, None])).mean(axis=0)
    y = records.actual.mean(axis=0)
    return bool(np.all(c_s / y[0] <= c_p / y[1:]))


@dataclass
class StrategyResult:
    strategy: str
    w: float
    ap: np.ndarray
    ap_independent: np.ndarray
    rmse: float
    unit_cost_rate: float
    status: str = "ok"
    message: str = ""

    @property
    def ap_change(self):
        return self.ap - self.ap_independent

    @property
    def ap_change_pct(self):
        den = self.ap_independent
        ok = np.abs(den) >= 1e-9
        return np.where(ok, 100.0 * self.ap_change / np.where(ok, den, 1.0), np.nan)


@dataclass
class SweepReport:
    results: list
    w_grid: tuple
    strategies: tuple
    metadata: dict = field(default_factory=dict)

    def cell(self, strategy, w):
        for r in self.results:
            if r.strategy == strategy and r.w == w:
                return r
        raise KeyError((strategy, w))

    def complete(self):
        return all(self.cell(s, w) is not None for s in self.strategies for w in self.w_grid)


def _failed(strategy, w, m, ap_ind, exc):
    nan = np.full(m, np.nan)
    return StrategyResult(strategy, w, nan, ap_ind, float("nan"), float("nan"), "failed", str(exc))


def evaluate_model(strategy, w, model, test: RecordSet, ap_ind, gamma_mode="ge", status="ok"):
    policy = AllocationPolicy(w, gamma_mode)
    ap = average_profit_aggregated(test, model, policy)
    return StrategyResult(strategy, w, ap, ap_ind, hierarchical_rmse(test, model),
                          unit_cost_rate(test, model), status)


def _independent_result(test, w, ap_ind):
    bu = ReconModel("bottom_up", _hier(test))
    # independent offers are never reconciled; RMSE is that of the raw base forecasts
    rmse = float(np.sqrt(np.mean((test.base - test.actual) ** 2)))
    return StrategyResult("independent", w, ap_ind.copy(), ap_ind, rmse, unit_cost_rate(test, bu))


def _hier(records):
    from .hierarchy import Hierarchy
    return Hierarchy.two_level(records.m)


def _train_cell(args):
    strategy, w, train_set, test, config, capacity, ap_ind = args
    cfg = _with_w(config, w)
    try:
        model, report = train(strategy, train_set, cfg, capacity)
        status = report.status if report is not None else "ok"
        return evaluate_model(strategy, w, model, test, ap_ind, cfg.gamma_mode, status), model, report
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.warning("cell %s w=%s failed: %s", strategy, w, exc)
        return _failed(strategy, w, test.m, ap_ind, exc), None, None


def _with_w(config: TrainConfig, w):
    from dataclasses import replace
    return replace(config, w=float(w))


def run_sweep(dataset, strategies=CASE1_STRATEGIES, w_grid=W_GRID, config: TrainConfig | None = None,
              jobs=1, keep_models=False):
    """Train and evaluate every strategy at every weight.

    Strategies that do not depend on ``w`` are trained once; value-oriented
    strategies are retrained per weight because the allocation rule enters
    their loss. Failed cells are recorded with status ``failed``.
    """
    config = config or TrainConfig()
    train_set, test = dataset.train, dataset.test
    cap = dataset.capacities
    ap_ind = average_profit_independent(test)
    results, models, reports = [], {}, {}
    fixed = {}
    for s in strategies:
        if s in W_FREE:
            try:
                fixed[s] = train(s, train_set, config, cap)
            except Exception as exc:  # noqa: BLE001
                log.warning("%s failed: %s", s, exc)
                fixed[s] = exc
    jobs_list = [(s, w, train_set, test, config, cap, ap_ind)
                 for s in strategies if s not in W_FREE and s != "independent" for w in w_grid]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trained = list(ex.map(_train_cell, jobs_list))
    else:
        trained = [_train_cell(a) for a in jobs_list]
    trained = {(a[0], a[1]): out for a, out in zip(jobs_list, trained)}
    for s in strategies:
        for w in w_grid:
            if s == "independent":
                results.append(_independent_result(test, w, ap_ind))
            elif s in W_FREE:
                got = fixed[s]
                if isinstance(got, Exception):
                    results.append(_failed(s, w, test.m, ap_ind, got))
                    continue
                model, report = got
                results.append(evaluate_model(s, w, model, test, ap_ind, config.gamma_mode))
                models[(s, w)], reports[(s, w)] = model, report
            else:
                res, model, report = trained[(s, w)]
                results.append(res)
                models[(s, w)], reports[(s, w)] = model, report
    rep = SweepReport(results, tuple(w_grid), tuple(strategies))
    if keep_models:
        rep.metadata["models"] = models
        rep.metadata["reports"] = reports
    return rep
