import numpy as np
import pytest

from valrecon import neural
from valrecon.errors import TrainingDivergenceError


def zero_net(cap, in_dim=3, hidden=(4,)):
    p = neural.init_mlp(in_dim, len(cap), hidden, capacity=np.asarray(cap, dtype=float))
    for a in p.arrays():
        a[...] = 0.0
    return p


def test_zero_network_outputs_half_capacity():
    p = zero_net([2.0, 4.0])
    assert neural.forward(p, np.ones(3)).tolist() == [1.0, 2.0]


def test_linear_layer_recovers_linear_map():
    W = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    p = neural.MlpParams([W], [np.zeros(2)], "identity", "identity")
    x = np.array([[3.0, 1.0, 2.0], [5.0, 4.0, 1.0]])
    assert neural.forward(p, x).tolist() == [[1.0, 2.0], [4.0, 1.0]]


@pytest.mark.parametrize("output", ["sigmoid", "clip"])
def test_outputs_bounded(output):
    rng = np.random.default_rng(0)
    cap = np.array([1.5, 3.0])
    p = neural.init_mlp(4, 2, (8,), output=output, capacity=cap, seed=3)
    p = p.with_flat(rng.normal(scale=20, size=p.flat().size))
    h = neural.forward(p, rng.normal(scale=10, size=(500, 4)))
    assert np.all(h >= 0) and np.all(h <= cap)


def test_forward_deterministic_and_dim_check():
    p = neural.init_mlp(3, 2, capacity=np.ones(2), seed=1)
    x = np.arange(3.0)
    assert np.array_equal(neural.forward(p, x), neural.forward(p, x))
    with pytest.raises(ValueError):
        neural.forward(p, np.ones(4))


def test_zero_output_grad_gives_zero_gradient():
    p = neural.init_mlp(3, 2, capacity=np.ones(2), seed=1)
    g = neural.backward(p, np.ones(3), np.zeros(2))
    assert not g.flat().any()


def test_scalar_network_hand_derivative():
    # h = u * sigmoid(v * tanh(a x + b) + c); loss = h
    a, b, v, c, u, x = 0.7, -0.2, 1.3, 0.1, 2.0, 0.5
    p = neural.MlpParams([np.array([[a]]), np.array([[v]])], [np.array([b]), np.array([c])],
                         "tanh", "sigmoid", np.array([u]))
    z1 = a * x + b
    t = np.tanh(z1)
    s = 1 / (1 + np.exp(-(v * t + c)))
    dz2 = u * s * (1 - s)
    expected = [dz2 * v * (1 - t**2) * x, dz2 * v * (1 - t**2), dz2 * t, dz2]
    g = neural.backward(p, np.array([x]), np.array([1.0])).flat()
    assert np.allclose(g, expected, rtol=1e-12)


def test_gradient_check_random_nets():
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(50):
        in_dim, out_dim = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
        p = neural.init_mlp(in_dim, out_dim, hidden, "tanh", "sigmoid", rng.uniform(1, 3, out_dim), seed=k)
        x = rng.normal(size=(4, in_dim))
        target = rng.uniform(0, 1, (4, out_dim))
        err = neural.finite_diff_check(p, x, lambda h: float(np.sum((h - target) ** 2)),
                                       lambda h: 2 * (h - target))
        worst = max(worst, err)
    assert worst <= 1e-4


def test_quadratic_linear_net_exact():
    p = neural.MlpParams([np.array([[0.3, -0.2]])], [np.array([0.1])], "identity", "identity")
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    err = neural.finite_diff_check(p, x, lambda h: float(np.sum(h**2)), lambda h: 2 * h)
    assert err <= 1e-7


def test_zero_net_constant_loss():
    p = zero_net([1.0])
    assert neural.finite_diff_check(p, np.ones(3), lambda h: 1.0, lambda h: np.zeros_like(h)) == 0.0


def test_finite_diff_eps_range():
    p = zero_net([1.0])
    with pytest.raises(ValueError):
        neural.finite_diff_check(p, np.ones(3), lambda h: 0.0, lambda h: h * 0, eps=1e-2)


def test_sgd_step():
    p = zero_net([1.0])
    g = neural.GradientBundle([np.ones_like(W) for W in p.weights], [np.ones_like(b) for b in p.biases])
    assert np.array_equal(neural.sgd_step(p, g.scaled(0.0), 0.1).flat(), p.flat())
    assert np.array_equal(neural.sgd_step(p, g, 1.0).flat(), -g.flat())
    two = neural.sgd_step(neural.sgd_step(p, g, 0.05), g, 0.05)
    assert np.allclose(two.flat(), -0.1 * g.flat())
    bad = neural.GradientBundle([W * np.nan for W in g.weights], g.biases)
    with pytest.raises(TrainingDivergenceError):
        neural.sgd_step(p, bad, 0.1, epoch=7)


def test_model_file_round_trip(tmp_path):
    p = neural.init_mlp(5, 3, (6,), capacity=np.array([1.1, 2.2, 3.3]), seed=9,
                        x_mean=np.arange(5.0), x_std=np.full(5, 1 / 3))
    path = tmp_path / "m.txt"
    neural.save(p, path, {"kind": "value_learned"})
    q = neural.load(path)
    assert np.array_equal(q.flat(), p.flat())
    assert np.array_equal(q.x_std, p.x_std) and q.seed == 9 and q.output == "sigmoid"
    x = np.random.default_rng(0).normal(size=(7, 5))
    assert np.array_equal(neural.forward(q, x), neural.forward(p, x))
