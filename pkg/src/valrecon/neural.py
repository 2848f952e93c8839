"""Small feed-forward network with hand-written backpropagation.

The network maps a standardised input vector to ``m`` bounded outputs. Batches
are rows: ``x`` of shape ``(T, in_dim)`` gives ``h`` of shape ``(T, m)``.
Weight matrices are stored ``(fan_out, fan_in)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergenceError

_ACT = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}
OUTPUTS = ("sigmoid", "clip", "identity")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class MlpParams:
    """Layer weights plus the fixed input scaler and output bound.

    ``output`` selects the bounding transform applied to the last affine
    layer: ``sigmoid`` gives ``capacity * sigmoid(a)``, ``clip`` gives
    ``clip(a, 0, capacity)`` and ``identity`` leaves ``a`` unchanged.
    """

    weights: list
    biases: list
    activation: str = "tanh"
    output: str = "sigmoid"
    capacity: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.activation not in _ACT:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output transform {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {l}: weight/bias mismatch")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {W.shape[1]} != {self.weights[l - 1].shape[0]}")
        if self.output != "identity":
            if self.capacity is None:
                raise ValueError(f"output {self.output!r} needs capacities")
            self.capacity = np.asarray(self.capacity, dtype=float)
            if self.capacity.shape != (self.out_dim,):
                raise ValueError("one capacity per output")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def dims(self):
        return [self.in_dim] + [W.shape[0] for W in self.weights]

    def copy(self):
        return copy.deepcopy(self)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_flat(self, vec):
        p = self.copy()
        i = 0
        for a in p.arrays():
            a[...] = np.asarray(vec[i:i + a.size]).reshape(a.shape)
            i += a.size
        return p


@dataclass
class GradientBundle:
    weights: list
    biases: list

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def norm(self):
        return float(np.sqrt(sum(np.sum(a * a) for a in self.weights + self.biases)))

    def scaled(self, c):
        return GradientBundle([c * a for a in self.weights], [c * a for a in self.biases])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


def init_mlp(in_dim, out_dim, hidden=(32,), activation="tanh", output="sigmoid",
             capacity=None, seed=0, x_mean=None, x_std=None):
    """Glorot-uniform initialisation, biases zero."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, out_dim]
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(Ws, bs, activation, output, capacity, x_mean, x_std, seed)


def _prep(params, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.in_dim:
        raise ValueError(f"expected input width {params.in_dim}, got {X.shape[1]}")
    if params.x_mean is not None:
        X = (X - params.x_mean) / params.x_std
    return X, single


def _forward(params, X):
    act, _ = _ACT[params.activation]
    acts = [X]
    pre = []
    a = X
    L = len(params.weights)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = act(z) if l < L - 1 else z
        acts.append(a)
    z = pre[-1]
    if params.output == "sigmoid":
        h = params.capacity * _sigmoid(z)
    elif params.output == "clip":
        h = np.clip(z, 0.0, params.capacity)
    else:
        h = z
    return h, (acts, pre)


def forward(params: MlpParams, x):
    """Reconciled bottom-level values for one input vector or a batch."""
    X, single = _prep(params, x)
    h, _ = _forward(params, X)
    return h[0] if single else h


def backward(params: MlpParams, x, output_grad) -> GradientBundle:
    """Gradient of a loss w.r.t. the layer parameters, given ``dLoss/dh``.

    For a batch, ``output_grad`` has one row per input row and the returned
    gradients are summed over rows.
    """
    X, single = _prep(params, x)
    dh = np.asarray(output_grad, dtype=float)
    dh = dh[None, :] if dh.ndim == 1 else dh
    h, (acts, pre) = _forward(params, X)
    z = pre[-1]
    if params.output == "sigmoid":
        s = h / params.capacity
        dz = dh * params.capacity * s * (1.0 - s)
    elif params.output == "clip":
        dz = dh * ((z > 0) & (z < params.capacity))
    else:
        dz = dh
    _, dact = _ACT[params.activation]
    L = len(params.weights)
    gW = [None] * L
    gb = [None] * L
    for l in range(L - 1, -1, -1):
        gW[l] = dz.T @ acts[l]
        gb[l] = dz.sum(axis=0)
        if l:
            da = dz @ params.weights[l]
            dz = da * dact(pre[l - 1], acts[l])
    return GradientBundle(gW, gb)


def sgd_step(params: MlpParams, grads: GradientBundle, step, epoch=None) -> MlpParams:
    """``params - step * grads``, as a new object."""
    if step <= 0:
        raise ValueError("step must be positive")
    if not grads.is_finite():
        raise TrainingDivergenceError("non-finite gradient", epoch=epoch)
    p = params.copy()
    for l in range(len(p.weights)):
        if grads.weights[l].shape != p.weights[l].shape or grads.biases[l].shape != p.biases[l].shape:
            raise ValueError(f"layer {l}: gradient shape mismatch")
        p.weights[l] -= step * grads.weights[l]
        p.biases[l] -= step * grads.biases[l]
    return p


def finite_diff_grad(f, params: MlpParams, eps=1e-6):
    """Central-difference gradient of the scalar ``f(params)`` over all parameters."""
    theta = params.flat()
    g = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += eps
        tm = theta.copy()
        tm[i] -= eps
        g[i] = (f(params.with_flat(tp)) - f(params.with_flat(tm))) / (2 * eps)
    return g


def max_relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / (np.abs(a) + np.abs(n) + 1e-12))) if a.size else 0.0


def finite_diff_check(params: MlpParams, x, loss, loss_grad, eps=1e-6):
    """Compare :func:`backward` against central differences.

    Args:
        loss: scalar function of the network output ``h``.
        loss_grad: its gradient ``dLoss/dh`` (same shape as ``h``).

    Returns:
        max over parameters of ``|analytic - cd| / (|analytic| + |cd| + 1e-12)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    h = forward(params, x)
    analytic = backward(params, x, loss_grad(h)).flat()
    numeric = finite_diff_grad(lambda p: loss(forward(p, x)), params, eps)
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# text model file
# ---------------------------------------------------------------------------

_MAGIC = "# valrecon-mlp v1"


def _fmt(a):
    return " ".join(repr(float(v)) for v in np.ravel(a))


def dumps(params: MlpParams, header: dict | None = None) -> str:
    lines = [_MAGIC]
    for k, v in (header or {}).items():
        lines.append(f"# {k}={v}")
    lines += [
        f"activation {params.activation}",
        f"output {params.output}",
        f"seed {params.seed}",
        "dims " + " ".join(str(d) for d in params.dims),
        "capacity " + ("none" if params.capacity is None else _fmt(params.capacity)),
        "x_mean " + ("none" if params.x_mean is None else _fmt(params.x_mean)),
        "x_std " + ("none" if params.x_std is None else _fmt(params.x_std)),
    ]
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W {l} {W.shape[0]} {W.shape[1]}")
        lines += [_fmt(row) for row in W]
        lines.append(f"b {l} {b.shape[0]}")
        lines.append(_fmt(b))
    return "\n".join(lines) + "\n"


def loads(text: str) -> MlpParams:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    it = iter(rows)
    kv = {}
    for _ in range(7):
        key, _, rest = next(it).partition(" ")
        kv[key] = rest

    def vec(s):
        return None if s == "none" else np.array([float(v) for v in s.split()])

    dims = [int(d) for d in kv["dims"].split()]
    Ws, bs = [], []
    for l in range(len(dims) - 1):
        tag, li, r, c = next(it).split()
        assert tag == "W" and int(li) == l
        Ws.append(np.array([[float(v) for v in next(it).split()] for _ in range(int(r))]).reshape(int(r), int(c)))
        tag, li, r = next(it).split()
        assert tag == "b" and int(li) == l
        bs.append(np.array([float(v) for v in next(it).split()]).reshape(int(r)))
    return MlpParams(Ws, bs, kv["activation"], kv["output"], vec(kv["capacity"]),
                     vec(kv["x_mean"]), vec(kv["x_std"]), int(kv["seed"]))


def save(params: MlpParams, path, header: dict | None = None):
    with open(path, "w") as fh:
        fh.write(dumps(params, header))


def load(path) -> MlpParams:
    with open(path) as fh:
        return loads(fh.read())
