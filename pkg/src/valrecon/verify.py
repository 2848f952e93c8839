"""Randomised property suites over the settlement, allocation and training code.

Each suite draws instances from a seeded generator, checks one property and
returns a :class:`SuiteResult` holding the first counterexample it met.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import allocation, neural
from . import reconcile as rc
from .hierarchy import Hierarchy, RecordSet
from .market import MarketHour, Penalties, nominal_level, profit, profit_decomposed

REL = 1e-9


@dataclass
class SuiteResult:
    name: str
    instances: int
    failures: int = 0
    counterexample: dict | None = None
    stat: float | None = None
    seconds: float = 0.0

    @property
    def ok(self):
        return self.failures == 0

    def line(self):
        extra = "" if self.stat is None else f" stat={self.stat:.3g}"
        return f"{'PASS' if self.ok else 'FAIL'} {self.name} n={self.instances} failures={self.failures}{extra}"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _record(res: SuiteResult, **case):
    res.failures += 1
    if res.counterexample is None:
        res.counterexample = {k: _jsonable(v) for k, v in case.items()}


def random_allocation_instance(rng, m_max=6):
    """Coherent reconciliation, actuals and penalties for one random hour.

    About one draw in ten puts a reconciled leaf exactly on its actual or a
    leaf output at zero, so kinks and empty producers get exercised.
    """
    m = int(rng.integers(1, m_max + 1))
    cap = rng.uniform(0.5, 4.0, m)
    y = rng.uniform(0, 1, m) * cap
    h = rng.uniform(0, 1, m) * cap
    if rng.random() < 0.1:
        j = rng.integers(m)
        h[j] = y[j]
    if rng.random() < 0.1:
        y[rng.integers(m)] = 0.0
    pen = Penalties(float(rng.uniform(0, 20)), float(rng.uniform(0, 20)))
    rec = np.concatenate([[h.sum()], h])
    actual = np.concatenate([[y.sum()], y])
    return rec, actual, pen


def suite_settlement(n, rng):
    res = SuiteResult("settlement_identity", n)
    for _ in range(n):
        pi_f = rng.uniform(1, 60)
        hour = MarketHour(0, pi_f, pi_f + rng.uniform(0, 30), pi_f - rng.uniform(0, pi_f))
        o, y = rng.uniform(0, 5, 2)
        a, b = profit(o, y, hour), profit_decomposed(o, y, hour)
        if abs(a - b) > REL * max(1.0, abs(a), abs(b)):
            _record(res, offer=o, actual=y, hour=[hour.pi_f, hour.pi_up, hour.pi_dw], eq1=a, eq2=b)
    return res


def suite_nominal_level(n, rng):
    res = SuiteResult("nominal_level_scale_invariance", n)
    for _ in range(n):
        pen = Penalties(rng.uniform(0, 20), rng.uniform(1e-3, 20))
        c = rng.uniform(1e-3, 1e3)
        a, b = nominal_level(pen), nominal_level(pen.scaled(c))
        if not (0.0 <= a <= 1.0) or abs(a - b) > REL:
            _record(res, psi=[pen.psi_plus, pen.psi_minus], scale=c, level=a, scaled_level=b)
    return res


def suite_subadditivity(n, rng):
    res = SuiteResult("aggregate_cost_subadditivity", n)
    for _ in range(n):
        rec, actual, pen = random_allocation_instance(rng)
        c_s = allocation.aggregate_cost(rec, actual, pen)
        c_p = allocation.pseudo_costs(rec, actual, pen)
        if c_s > c_p.sum() * (1 + REL) + 1e-12:
            _record(res, reconciled=rec, actual=actual, c_sum=c_s, pseudo=c_p)
    return res


def suite_pseudo_bound(n, rng, mode):
    """Allocated cost never exceeds pseudo cost (``pc`` always; ``ge`` where
    the unit-cost condition holds)."""
    res = SuiteResult(f"allocated_le_pseudo_{mode}", n)
    checked = 0
    for _ in range(n):
        rec, actual, pen = random_allocation_instance(rng)
        w = float(rng.uniform(0, 1))
        if mode == "ge" and allocation.check_unit_cost_condition(rec, actual, pen) is not True:
            continue
        checked += 1
        bd = allocation.allocate(allocation.AllocationPolicy(w, mode), rec, actual, pen)
        if np.any(bd.c_agg > bd.c_pseudo * (1 + REL) + 1e-12):
            _record(res, w=w, reconciled=rec, actual=actual, psi=[pen.psi_plus, pen.psi_minus],
                    allocated=bd.c_agg, pseudo=bd.c_pseudo)
    res.stat = float(checked)
    return res


def suite_sandwich(n, rng):
    res = SuiteResult("allocation_sandwich_efficiency", n)
    for k in range(n):
        rec, actual, pen = random_allocation_instance(rng)
        w = (0.0, 0.25, 0.5, 0.75, 1.0)[k % 5]
        mode = ("ge", "pc")[(k // 5) % 2]
        bd = allocation.allocate(allocation.AllocationPolicy(w, mode), rec, actual, pen)
        tot, c_s, c_p = bd.c_agg.sum(), float(bd.c_sum), bd.c_pseudo.sum()
        scale = max(1.0, c_p)
        bad = tot < c_s - REL * scale or tot > c_p + REL * scale
        if c_p - c_s > 1e-6 * scale:
            exact = abs(tot - c_s) <= REL * scale
            bad = bad or exact != (w == 1.0)
        if bad:
            _record(res, w=w, mode=mode, reconciled=rec, actual=actual, total=tot, c_sum=c_s, pseudo_total=c_p)
    return res


def suite_value_conservation(n, rng):
    """Producer profits plus the manager's payoff equal the pooled revenue
    minus the aggregate imbalance cost."""
    res = SuiteResult("value_conservation", n)
    for _ in range(n):
        rec, actual, pen = random_allocation_instance(rng)
        pi_f = float(rng.uniform(1, 60))
        bd = allocation.allocate(allocation.AllocationPolicy(float(rng.uniform(0, 1)), "ge"), rec, actual, pen)
        lhs = float(np.sum(pi_f * actual[1:] - bd.c_agg) + bd.pm_payoff)
        rhs = float(pi_f * actual[1:].sum() - bd.c_sum)
        if abs(lhs - rhs) > REL * max(1.0, abs(rhs)):
            _record(res, reconciled=rec, actual=actual, lhs=lhs, rhs=rhs)
    return res


def random_training_instance(rng, m_max=3, hidden_max=8):
    m = int(rng.integers(1, m_max + 1))
    H = int(rng.integers(2, hidden_max + 1))
    T = int(rng.integers(3, 12))
    d = int(rng.integers(0, 4))
    cap = rng.uniform(1, 3, m)
    leaves = rng.uniform(0, 1, (T, m)) * cap
    actual = np.column_stack([leaves.sum(axis=1), leaves])
    base = np.column_stack([rng.uniform(0, cap.sum(), T), rng.uniform(0, 1, (T, m)) * cap])
    recs = RecordSet(np.arange(T), base, rng.normal(size=(T, d)), actual,
                     rng.uniform(0, 15, T), rng.uniform(0, 15, T), np.full(T, 25.0))
    g = neural.init_mlp(m + 1 + d, m, (H,), capacity=cap, seed=int(rng.integers(2**31)))
    model = rc.ReconModel("value_learned", Hierarchy.two_level(m), g)
    policy = allocation.AllocationPolicy(float(rng.uniform(0, 1)), ("ge", "pc")[int(rng.integers(2))])
    return recs, model, policy, rng.uniform(0, 3, m)


def suite_gradient(n, rng, tol=1e-3, eps=1e-6):
    res = SuiteResult("lagrangian_gradient_check", n)
    worst = 0.0
    for _ in range(n):
        recs, model, policy, mu = random_training_instance(rng)
        floor = 1e-6
        analytic = rc.primal_grad(recs, model, mu, policy, floor).flat()

        def f(p):
            return rc.lagrangian(recs, rc.ReconModel(model.kind, model.hierarchy, p), mu, policy, floor)

        numeric = neural.finite_diff_grad(f, model.g, eps)
        err = neural.max_relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > tol:
            _record(res, m=recs.m, hidden=model.g.dims[1], w=policy.w, gamma_mode=policy.gamma_mode,
                    error=err, analytic=analytic, numeric=numeric)
    res.stat = worst
    return res


def suite_convexity(n, rng):
    """With generation shares, the batch Lagrangian is convex in the
    reconciled leaves: midpoint inequality on random pairs."""
    res = SuiteResult("lagrangian_convex_in_reconciled", n)
    for _ in range(n):
        recs, model, _, mu = random_training_instance(rng)
        policy = allocation.AllocationPolicy(float(rng.uniform(0, 1)), "ge")
        cap = model.g.capacity
        c_ind = recs.independent_costs()
        floor = 1e-6

        def L(h):
            c_ag = allocation.allocated_costs(policy, Hierarchy.two_level(recs.m).aggregate(h),
                                              recs.actual, recs.penalties)
            exc = np.mean(c_ind - c_ag, axis=0)
            return rc.lagrangian_from_excess(exc, mu, floor), exc

        h1 = rng.uniform(0, 1, (len(recs), recs.m)) * cap
        h2 = rng.uniform(0, 1, (len(recs), recs.m)) * cap
        (l1, e1), (l2, e2) = L(h1), L(h2)
        lm, em = L(0.5 * (h1 + h2))
        # the floored log is only convex where no excess sits on the floor
        if np.any(np.concatenate([e1, e2, em]) <= floor):
            continue
        if lm > 0.5 * (l1 + l2) + 1e-9 * max(1.0, abs(l1), abs(l2)):
            _record(res, w=policy.w, mid=lm, ends=[l1, l2])
    return res


def suite_dual_monotone(n, rng):
    res = SuiteResult("dual_monotone", n)
    for _ in range(n):
        recs, model, policy, _ = random_training_instance(rng)
        st = rc.DualState.initial(recs.m, rng.uniform(1e-3, 1))
        for _ in range(5):
            new = rc.dual_update(st, recs, model, policy)
            if np.any(new.mu < st.mu) or np.any(new.mu < 1.0):
                _record(res, before=st.mu, after=new.mu)
                break
            st = new
    return res


def suite_coherence(n, rng):
    res = SuiteResult("reconcile_coherent", n)
    for _ in range(n):
        recs, model, _, _ = random_training_instance(rng)
        for mdl in (model, rc.bottom_up(model.hierarchy)):
            out = rc.reconcile(mdl, recs.base, recs.context)
            if not np.all(mdl.hierarchy.is_coherent(out, 1e-6)):
                _record(res, kind=mdl.kind, output=out)
    return res


SUITES = {
    "settlement_identity": (suite_settlement, 10_000),
    "nominal_level": (suite_nominal_level, 10_000),
    "subadditivity": (suite_subadditivity, 10_000),
    "pseudo_bound_pc": (lambda n, rng: suite_pseudo_bound(n, rng, "pc"), 10_000),
    "pseudo_bound_ge": (lambda n, rng: suite_pseudo_bound(n, rng, "ge"), 10_000),
    "sandwich": (suite_sandwich, 10_000),
    "value_conservation": (suite_value_conservation, 10_000),
    "gradient": (suite_gradient, 50),
    "convexity": (suite_convexity, 2_000),
    "dual_monotone": (suite_dual_monotone, 200),
    "coherence": (suite_coherence, 500),
}


def run_all(seed=42, scale=1.0, names=None):
    """Run the suites (all, or ``names``) with instance counts times ``scale``."""
    out = []
    for name, (fn, count) in SUITES.items():
        if names and name not in names:
            continue
        rng = np.random.default_rng([seed, len(out)])
        t0 = time.perf_counter()
        res = fn(max(1, int(count * scale)), rng)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def dump_counterexamples(results, path):
    bad = {r.name: r.counterexample for r in results if not r.ok}
    with open(path, "w") as fh:
        json.dump(bad, fh, indent=1, sort_keys=True)
    return bad
