import math

import numpy as np
import pytest

from valrecon import dataio, neural
from valrecon import reconcile as rc
from valrecon.allocation import AllocationPolicy
from valrecon.errors import ConfigurationError
from valrecon.hierarchy import Hierarchy, RecordSet
from valrecon.market import Penalties, imbalance_cost

FAST = dict(epochs=400, quality_epochs=400, warm_epochs=400)


def interior_records(T=200, m=2, seed=0, noise=0.3, d=2):
    rng = np.random.default_rng(seed)
    cap = np.linspace(2.0, 3.0, m)
    y = rng.uniform(0.2, 0.8, (T, m)) * cap
    base = np.column_stack([y.sum(1) + rng.normal(0, noise, T),
                            np.clip(y + rng.normal(0, noise, (T, m)), 0, cap)])
    rs = RecordSet(np.arange(T), base, rng.normal(size=(T, d)), np.column_stack([y.sum(1), y]),
                   np.full(T, 12.0), np.full(T, 4.0), np.full(T, 25.0))
    return rs, cap


def test_bottom_up_example():
    bu = rc.bottom_up(Hierarchy.two_level(2))
    assert rc.reconcile(bu, [3.5, 1.0, 2.0], np.zeros(0)).tolist() == [3.0, 1.0, 2.0]


def test_zero_parameter_model_uses_half_capacity():
    g = neural.init_mlp(3, 2, (4,), capacity=np.array([2.0, 2.0]))
    g = g.with_flat(np.zeros_like(g.flat()))
    model = rc.ReconModel("value_learned", Hierarchy.two_level(2), g, use_context=False)
    assert rc.reconcile(model, [3.5, 1.0, 2.0], None).tolist() == [2.0, 1.0, 1.0]


def test_learned_output_coherent_and_dim_check():
    rs, cap = interior_records()
    model = rc.new_model("quality_learned", rs, rc.TrainConfig(), cap)
    out = rc.reconcile(model, rs.base, rs.context)
    assert np.all(model.hierarchy.is_coherent(out, 1e-6))
    with pytest.raises(ValueError):
        model.bottom(rs.base[:, :2], rs.context)


def test_linear_variants_start_at_bottom_up():
    rs, cap = interior_records()
    model = rc.new_model("value_linear", rs, rc.TrainConfig(), cap)
    assert np.array_equal(model.bottom(rs.base, rs.context), rs.base[:, 1:])


def test_quality_training_reduces_mse():
    rs, cap = interior_records()
    for kind in ("quality_learned", "quality_linear"):
        model, rep = rc.train_quality(rs, rc.TrainConfig(**FAST), kind, cap)
        assert rep.final_loss <= rep.initial_loss


def test_quality_linear_is_least_squares():
    rs, cap = interior_records(noise=0.05)
    model, _ = rc.train_quality(rs, rc.TrainConfig(), "quality_linear", cap * 10)
    A = np.column_stack([rs.base, np.ones(len(rs))])
    sol = np.linalg.lstsq(A, rs.actual[:, 1:], rcond=None)[0]
    assert np.allclose(model.bottom(rs.base, rs.context), A @ sol)


def test_quality_single_record_overfits():
    rs, cap = interior_records(T=1)
    model, rep = rc.train_quality(rs, rc.TrainConfig(batch_size=1), "quality_learned", cap)
    assert rep.final_loss < 1e-3 * max(rep.initial_loss, 1e-12) + 1e-6


def test_quality_matches_bottom_up_when_leaves_perfect():
    rs, cap = interior_records(noise=0.0)
    bu = rc.bottom_up(Hierarchy.two_level(rs.m))
    model, _ = rc.train_quality(rs, rc.TrainConfig(), "quality_learned", cap)
    bu_rmse = math.sqrt(rc.hierarchy_mse(bu, rs))
    learned = math.sqrt(rc.hierarchy_mse(model, rs))
    assert learned <= bu_rmse + 1e-3, f"learned {learned:.4g} vs bottom-up {bu_rmse:.4g}"


def test_quality_rejects_empty_and_wrong_kind():
    rs, cap = interior_records()
    with pytest.raises(ConfigurationError):
        rc.train_quality(rs[:0], rc.TrainConfig())
    with pytest.raises(ConfigurationError):
        rc.train_quality(rs, rc.TrainConfig(), "value_learned")


def test_nash_objective_examples():
    assert rc.nash_objective_from_excess(np.ones(3), 1e-6) == 0.0
    e = 0.37
    assert rc.nash_objective_from_excess(np.array([e, e]), 1e-6) == pytest.approx(-2 * math.log(e))
    v = rc.nash_objective_from_excess(np.array([-1.0, 0.0]), 1e-6)
    assert math.isfinite(v) and v == pytest.approx(-2 * math.log(1e-6))


def test_lagrangian_examples():
    exc = np.array([-0.5, 0.2])
    nash = rc.nash_objective_from_excess(exc, 1e-6)
    assert rc.lagrangian_from_excess(exc, np.zeros(2), 1e-6) == nash
    assert rc.lagrangian_from_excess(exc, np.ones(2), 1e-6) == pytest.approx(nash + 0.5)
    ok = np.array([0.3, 0.2])
    assert rc.lagrangian_from_excess(ok, np.array([5.0, 5.0]), 1e-6) == rc.nash_objective_from_excess(ok, 1e-6)


def test_batch_lagrangian_against_longhand():
    rs, cap = interior_records(T=30, m=3)
    model = rc.new_model("value_learned", rs, rc.TrainConfig(), cap)
    pol = AllocationPolicy(0.7, "ge")
    mu = np.array([0.5, 1.0, 2.0])
    h = model.bottom(rs.base, rs.context)
    exc = np.zeros(3)
    for t in range(len(rs)):
        pen = Penalties(rs.psi_plus[t], rs.psi_minus[t])
        y = rs.actual[t, 1:]
        c_p = imbalance_cost(h[t], y, pen)
        c_s = imbalance_cost(h[t].sum(), y.sum(), pen)
        c_ag = (1 - pol.w) * c_p + pol.w * (y / y.sum()) * c_s
        exc += (imbalance_cost(rs.base[t, 1:], y, pen) - c_ag) / len(rs)
    expect = sum(-math.log(max(e, 1e-6)) for e in exc) + sum(m * max(-e, 0) for m, e in zip(mu, exc))
    assert rc.lagrangian(rs, model, mu, pol, 1e-6) == pytest.approx(expect, rel=1e-12)


def test_dual_update_examples():
    rs, cap = interior_records(T=20)
    model = rc.new_model("value_learned", rs, rc.TrainConfig(), cap)
    pol = AllocationPolicy(0.9)
    st = rc.DualState.initial(2, [1.0, 1.0])
    same = rc.dual_update(st, rs, model, pol, excess=np.array([0.1, 0.0]))
    assert same.mu.tolist() == [1.0, 1.0]
    up = rc.dual_update(st, rs, model, pol, excess=np.array([-0.3, 0.2]))
    assert up.mu == pytest.approx([1.3, 1.0])
    proj = rc.dual_update(st, rs, model, pol, excess=np.array([0.5, 2.0]), mode="projected")
    assert proj.mu == pytest.approx([0.995, 0.98]) or proj.mu.tolist() == [0.5, 0.0]


def test_zero_mu_floor_gives_zero_gradient():
    rs, cap = interior_records(T=10)
    rs = RecordSet(rs.t, np.column_stack([rs.actual[:, 0], rs.actual[:, 1:]]), rs.context, rs.actual,
                   rs.psi_plus, rs.psi_minus, rs.pi_f)
    # perfect base forecasts: every excess is <= 0, the barrier sits on its floor
    model = rc.new_model("value_learned", rs, rc.TrainConfig(), cap)
    g = rc.primal_grad(rs, model, np.zeros(2), AllocationPolicy(0.9), 1e-6)
    assert not g.flat().any()


def test_single_record_linear_closed_form_gradient():
    pen = Penalties(12.0, 4.0)
    base = np.array([[1.0, 1.2]])
    actual = np.array([[1.5, 1.5]])
    rs = RecordSet(np.arange(1), base, np.zeros((1, 0)), actual, np.array([12.0]), np.array([4.0]),
                   np.array([25.0]))
    W = np.array([[0.1, 0.9]])
    b = np.array([0.05])
    g = neural.MlpParams([W], [b], "identity", "clip", np.array([3.0]))
    model = rc.ReconModel("value_linear", Hierarchy.two_level(1), g, use_context=False)
    h = float((W @ base[0] + b)[0])
    c_ind = float(imbalance_cost(1.2, 1.5, pen))
    c_h = float(imbalance_cost(h, 1.5, pen))
    exc = c_ind - c_h
    assert exc > 0 and h < 1.5
    # dL/dh = (1 / exc) * dc/dh and dc/dh = -psi_plus below the actual
    dl_dh = (1.0 / exc) * (-12.0)
    grads = rc.primal_grad(rs, model, np.array([2.0]), AllocationPolicy(0.9), 1e-6)
    assert np.allclose(grads.weights[0], dl_dh * base)
    assert np.allclose(grads.biases[0], [dl_dh])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for k in range(10):
        rs, cap = interior_records(T=8, m=int(rng.integers(1, 4)), seed=k, d=2)
        cfg = rc.TrainConfig(hidden=(int(rng.integers(2, 9)),), seed=k)
        model = rc.new_model("value_learned", rs, cfg, cap)
        pol = AllocationPolicy(float(rng.uniform(0, 1)), ("ge", "pc")[k % 2])
        mu = rng.uniform(0, 3, rs.m)
        a = rc.primal_grad(rs, model, mu, pol, 1e-6).flat()
        n = neural.finite_diff_grad(
            lambda p: rc.lagrangian(rs, rc.ReconModel(model.kind, model.hierarchy, p), mu, pol, 1e-6),
            model.g, 1e-6)
        assert neural.max_relative_error(a, n) <= 1e-3


def test_lagrangian_convex_in_reconciled_values():
    rs, cap = interior_records(T=12, m=3)
    c_ind = rs.independent_costs()
    pol = AllocationPolicy(0.8, "ge")
    mu = np.array([1.0, 2.0, 0.5])
    rng = np.random.default_rng(0)
    from valrecon.allocation import allocated_costs

    def L(h):
        c = allocated_costs(pol, Hierarchy.two_level(3).aggregate(h), rs.actual, rs.penalties)
        e = np.mean(c_ind - c, axis=0)
        return rc.lagrangian_from_excess(e, mu, 1e-6), e

    checked = 0
    for _ in range(300):
        h1, h2 = np.clip(rs.base[:, 1:] + rng.uniform(-0.1, 0.1, (2, 12, 3)), 0, None)
        (a, e1), (b, e2), (mid, em) = L(h1), L(h2), L((h1 + h2) / 2)
        if min(e1.min(), e2.min(), em.min()) <= 1e-6:
            continue
        checked += 1
        assert mid <= (a + b) / 2 + 1e-9
    assert checked > 20


def m1_dataset():
    raw = dataio.synthesize(dataio.SyntheticSpec(m=1, horizon=3000, seed=3))
    return dataio.prepare(raw, "mean")


def test_single_producer_moves_towards_quantile_offer():
    ds = m1_dataset()
    tr = ds.train
    model, st, rep = rc.train_value(tr, rc.TrainConfig(epochs=1500), "value_learned", ds.capacities)
    assert rep.status == "ok"
    assert np.all(rep.final_excess >= -rep.tol)
    h = model.bottom(tr.base, tr.context)[:, 0]
    y = tr.actual[:, 1]
    base_cover = np.mean(y <= tr.base[:, 1])
    cover = np.mean(y <= h)
    assert abs(cover - 0.75) < abs(base_cover - 0.75)


def test_value_training_report_and_dual_monotone():
    ds = m1_dataset()
    cfg = rc.TrainConfig(epochs=200, w=0.5)
    model, st, rep = rc.train_value(ds.train, cfg, "value_linear", ds.capacities)
    mu = np.array([r[-1:] for r in rep.rows])
    assert np.all(np.diff(mu, axis=0) >= 0) and np.all(mu >= 1.0)
    assert len(rep.rows) == 200 and len(rep.rows[0]) == len(rep.header(1))


def test_constraint_failure_is_a_status_not_an_exception():
    rs, cap = interior_records(T=300, noise=0.0)
    # near-perfect base forecasts leave no room for any saving
    rs.base[:, 1:] += 1e-4
    model, st, rep = rc.train_value(rs, rc.TrainConfig(**FAST, lam=0.05), "value_learned", cap)
    assert rep.status == "constraint-failure"
    assert np.any(rep.final_excess < -rep.tol)


def test_value_training_preconditions():
    rs, cap = interior_records(T=50)
    with pytest.raises(ConfigurationError):
        rc.train_value(rs, rc.TrainConfig(batch_size=64), "value_learned", cap)
    with pytest.raises(ConfigurationError):
        rc.train_value(rs, rc.TrainConfig(batch_size=8), "quality_learned", cap)
    flat = RecordSet(rs.t, rs.base, rs.context, rs.actual, np.zeros(50), np.zeros(50), rs.pi_f)
    with pytest.raises(ConfigurationError):
        rc.train_value(flat, rc.TrainConfig(batch_size=8), "value_learned", cap)


def test_degenerate_hours_excluded():
    rs, cap = interior_records(T=300)
    rs.psi_plus[::3] = 0.0
    rs.psi_minus[::3] = 0.0
    _, _, rep = rc.train_value(rs, rc.TrainConfig(**FAST, batch_size=64), "value_linear", cap)
    assert np.all(np.isfinite(rep.final_excess))


def test_config_validation():
    for bad in (dict(lam=0), dict(nu=-1), dict(eps_rel=0), dict(batch_size=0), dict(dual_mode="x"),
                dict(w=2.0), dict(warm_start="x")):
        with pytest.raises(ConfigurationError):
            rc.TrainConfig(**bad)


def test_training_is_deterministic():
    rs, cap = interior_records(T=300)
    a = rc.train_value(rs, rc.TrainConfig(**FAST, batch_size=64), "value_learned", cap)[0]
    b = rc.train_value(rs, rc.TrainConfig(**FAST, batch_size=64), "value_learned", cap)[0]
    assert np.array_equal(a.g.flat(), b.g.flat())
