"""Reconciliation strategies and their training.

Every strategy produces coherent forecasts as ``S @ h`` where ``h`` are
reconciled bottom-level values:

* ``bottom_up`` keeps the base leaf forecasts.
* ``quality_learned`` / ``quality_linear`` fit ``h`` to minimise squared
  error over the whole hierarchy.
* ``value_learned`` / ``value_linear`` maximise the Nash product of each
  producer's average cost saving over independent offering, subject to every
  saving being non-negative, with the primal-dual loop in :func:`train_value`.

Learned variants use an MLP on ``[base, context]``; linear variants use an
affine map of the base forecasts only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .allocation import AllocationPolicy, allocated_costs, allocated_costs_grad
from .errors import ConfigurationError, TrainingDivergenceError
from .hierarchy import Hierarchy, RecordSet

log = logging.getLogger(__name__)

KINDS = ("bottom_up", "quality_learned", "quality_linear", "value_learned", "value_linear")


@dataclass
class ReconModel:
    kind: str
    hierarchy: Hierarchy
    g: neural.MlpParams | None = None
    use_context: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.kind != "bottom_up" and self.g is None:
            raise ConfigurationError(f"{self.kind} needs a combination function")

    def inputs(self, base, context):
        base = np.asarray(base, dtype=float)
        if not self.use_context:
            return base
        return np.concatenate([base, np.asarray(context, dtype=float)], axis=-1)

    def bottom(self, base, context):
        """Reconciled leaf values ``h`` (one row per record for batches)."""
        base = np.asarray(base, dtype=float)
        if base.shape[-1] != self.hierarchy.n:
            raise ValueError(f"expected {self.hierarchy.n} base forecasts, got {base.shape[-1]}")
        if self.kind == "bottom_up":
            return self.hierarchy.leaves(base).copy()
        return neural.forward(self.g, self.inputs(base, context))


def reconcile(model: ReconModel, base, context):
    """Coherent reconciled forecast(s) for one record or a batch."""
    return model.hierarchy.aggregate(model.bottom(base, context))


def bottom_up(hierarchy: Hierarchy) -> ReconModel:
    return ReconModel("bottom_up", hierarchy, None, False)


@dataclass
class TrainConfig:
    """Step sizes and schedule for the reconciliation trainers.

    ``lam`` is the primal SGD step for the MLP, ``linear_lam`` the one for
    the affine variant (its raw, unscaled inputs need a smaller step), and ``nu`` the dual step (scalar or one per
    producer). One epoch is one sampled batch. ``eps_rel`` sets the barrier
    floor relative to the mean training-set independent cost. ``dual_mode``
    ``monotone`` is the update as published (mu never decreases);
    ``projected`` is conventional projected dual ascent.
    """

    lam: float = 1e-3
    linear_lam: float = 1e-4
    nu: float | tuple = 0.01
    epochs: int = 3000
    batch_size: int = 256
    w: float = 0.9
    gamma_mode: str = "ge"
    eps_rel: float = 1e-6
    seed: int = 42
    hidden: tuple = (32,)
    activation: str = "tanh"
    clip_norm: float | None = None
    dual_mode: str = "monotone"
    quality_lam: float = 0.05
    quality_epochs: int = 3000
    warm_start: str = "bottom_up"
    warm_lam: float = 0.3
    warm_epochs: int = 5000

    def __post_init__(self):
        nus = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if self.lam <= 0 or self.linear_lam <= 0 or self.quality_lam <= 0 or np.any(nus <= 0) or self.eps_rel <= 0:
            raise ConfigurationError("step sizes and eps_rel must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.warm_start not in ("bottom_up", "none"):
            raise ConfigurationError(f"unknown warm_start {self.warm_start!r}")
        if self.dual_mode not in ("monotone", "projected"):
            raise ConfigurationError(f"unknown dual_mode {self.dual_mode!r}")
        AllocationPolicy(self.w, self.gamma_mode)

    @property
    def policy(self):
        return AllocationPolicy(self.w, self.gamma_mode)

    def nu_vector(self, m):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        return np.full(m, nu[0]) if nu.size == 1 else nu.copy()


@dataclass
class DualState:
    mu: np.ndarray
    nu: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, m, nu):
        return cls(np.ones(m), np.broadcast_to(np.asarray(nu, dtype=float), (m,)).copy())


@dataclass
class TrainingReport:
    status: str
    rows: list
    final_excess: np.ndarray
    eps: float
    tol: float
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    def header(self, m):
        return (["epoch", "L_batch"] + [f"avg_excess_{i}" for i in range(1, m + 1)]
                + [f"mu_{i}" for i in range(1, m + 1)])


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def _scaler(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


def capacities_from(records: RecordSet):
    """Per-leaf upper bounds for reconciled values: the largest value seen in
    the training actuals or base forecasts."""
    leaves = np.concatenate([records.actual[:, 1:], records.base[:, 1:]])
    cap = leaves.max(axis=0)
    return np.where(cap > 0, cap, 1.0)


def new_model(kind, records: RecordSet, config: TrainConfig, capacity=None) -> ReconModel:
    """Untrained model of the given kind, with input scaling fitted to ``records``."""
    m = records.m
    hier = Hierarchy.two_level(m)
    cap = capacities_from(records) if capacity is None else np.asarray(capacity, dtype=float)
    if kind == "bottom_up":
        return bottom_up(hier)
    if kind.endswith("_linear"):
        n = hier.n
        W = np.hstack([np.zeros((m, n - m)), np.eye(m)])
        g = neural.MlpParams([W], [np.zeros(m)], "identity", "clip", cap, seed=config.seed)
        return ReconModel(kind, hier, g, use_context=False)
    X = np.concatenate([records.base, records.context], axis=1)
    mu, sd = _scaler(X)
    g = neural.init_mlp(X.shape[1], m, config.hidden, config.activation, "sigmoid", cap,
                        config.seed, mu, sd)
    return ReconModel(kind, hier, g, use_context=True)


def warm_start_bottom_up(model: ReconModel, records: RecordSet, config: TrainConfig):
    """Pull a learned ``g`` towards reproducing the base leaf forecasts.

    Linear variants already start exactly at bottom-up and are returned as is.
    """
    if model.kind == "bottom_up" or model.kind.endswith("_linear") or config.warm_start == "none":
        return model
    rng = np.random.default_rng(config.seed + 1)
    T = len(records)
    bs = min(config.batch_size, T)
    for epoch in range(1, config.warm_epochs + 1):
        batch = records[rng.choice(T, bs, replace=False)]
        X = model.inputs(batch.base, batch.context)
        resid = neural.forward(model.g, X) - batch.base[:, 1:]
        model.g = neural.sgd_step(model.g, neural.backward(model.g, X, 2.0 * resid / bs),
                                  config.warm_lam, epoch)
    return model


# ---------------------------------------------------------------------------
# quality-oriented training
# ---------------------------------------------------------------------------

def hierarchy_mse(model: ReconModel, records: RecordSet):
    rec = reconcile(model, records.base, records.context)
    return float(np.mean((rec - records.actual) ** 2))


def _quality_grad(model, batch):
    X = model.inputs(batch.base, batch.context)
    h = neural.forward(model.g, X)
    S = model.hierarchy._Sf
    resid = h @ S.T - batch.actual
    loss = float(np.sum(resid**2) / len(batch))
    dh = 2.0 * resid @ S / len(batch)
    return loss, neural.backward(model.g, X, dh)


def lstsq_affine(X, Y):
    """Least-squares ``W, b`` with ``Y ~ X @ W.T + b``."""
    A = np.column_stack([X, np.ones(len(X))])
    sol, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return sol[:-1].T.copy(), sol[-1].copy()


def train_quality(records: RecordSet, config: TrainConfig, kind="quality_learned", capacity=None):
    """Fit ``g`` by minimising total squared error over all series.

    The linear variant is solved in closed form (least squares of each actual
    leaf on the base forecasts); the learned variant uses minibatch SGD.

    Returns:
        ``(model, report)``.
    """
    if len(records) == 0:
        raise ConfigurationError("empty training set")
    model = new_model(kind, records, config, capacity)
    init_loss = hierarchy_mse(model, records)
    model = warm_start_bottom_up(model, records, config)
    rows = []
    if kind == "quality_linear":
        W, b = lstsq_affine(records.base, records.actual[:, 1:])
        model.g.weights[0] = W
        model.g.biases[0] = b
    elif kind == "quality_learned":
        rng = np.random.default_rng(config.seed)
        T = len(records)
        bs = min(config.batch_size, T)
        for epoch in range(1, config.quality_epochs + 1):
            batch = records[rng.choice(T, bs, replace=False)]
            loss, grads = _quality_grad(model, batch)
            if not np.isfinite(loss):
                raise TrainingDivergenceError("non-finite squared-error loss", epoch, rows)
            grads = _clip(grads, config.clip_norm)
            model.g = neural.sgd_step(model.g, grads, config.quality_lam, epoch)
            rows.append((epoch, loss))
    else:
        raise ConfigurationError(f"train_quality cannot fit {kind!r}")
    final_loss = hierarchy_mse(model, records)
    report = TrainingReport("ok", rows, np.zeros(records.m), 0.0, 0.0, init_loss, final_loss)
    return model, report


# ---------------------------------------------------------------------------
# value-oriented training
# ---------------------------------------------------------------------------

def barrier_floor(records: RecordSet, eps_rel):
    mean_cost = float(np.mean(records.independent_costs()))
    return eps_rel * (mean_cost if mean_cost > 0 else 1.0)


def average_excess(records: RecordSet, model: ReconModel, policy: AllocationPolicy, c_ind=None):
    """Batch mean of (independent cost - allocated cost), per producer."""
    rec = reconcile(model, records.base, records.context)
    c_ag = allocated_costs(policy, rec, records.actual, records.penalties)
    c_ind = records.independent_costs() if c_ind is None else c_ind
    return np.mean(c_ind - c_ag, axis=0)


def nash_objective_from_excess(excess, eps):
    return float(-np.sum(np.log(np.maximum(excess, eps))))


def nash_objective(records: RecordSet, model: ReconModel, policy: AllocationPolicy, eps):
    """Negative log Nash product of average savings, floored at ``eps``."""
    return nash_objective_from_excess(average_excess(records, model, policy), eps)


def lagrangian_from_excess(excess, mu, eps):
    mu = np.asarray(mu.mu if isinstance(mu, DualState) else mu, dtype=float)
    return nash_objective_from_excess(excess, eps) + float(mu @ np.maximum(-excess, 0.0))


def lagrangian(records: RecordSet, model: ReconModel, mu, policy: AllocationPolicy, eps):
    """Batch Lagrangian: Nash objective plus ``mu_i * [mean violation_i]^+``."""
    return lagrangian_from_excess(average_excess(records, model, policy), mu, eps)


def _lagrangian_and_grad(records, model, mu, policy, eps, c_ind):
    X = model.inputs(records.base, records.context)
    h = neural.forward(model.g, X)
    c_ag, J = allocated_costs_grad(policy, h, records.actual, records.penalties)
    excess = np.mean(c_ind - c_ag, axis=0)
    L = lagrangian_from_excess(excess, mu, eps)
    # dL/d excess_i; the floored barrier contributes nothing below eps
    safe = np.where(excess > eps, excess, 1.0)
    d_exc = np.where(excess > eps, -1.0 / safe, 0.0) - mu * (excess < 0)
    # excess_i = mean_t(c_ind - c_ag) so dL/dc_ag[t, i] = -d_exc_i / T
    dh = np.einsum("i,tij->tj", -d_exc / len(records), J)
    return L, excess, neural.backward(model.g, X, dh)


def primal_grad(records: RecordSet, model: ReconModel, mu, policy: AllocationPolicy, eps):
    """Analytic gradient of :func:`lagrangian` with respect to the parameters of ``g``."""
    mu = np.asarray(mu.mu if isinstance(mu, DualState) else mu, dtype=float)
    _, _, grads = _lagrangian_and_grad(records, model, mu, policy, eps, records.independent_costs())
    if not grads.is_finite():
        raise TrainingDivergenceError("non-finite Lagrangian gradient")
    return grads


def dual_update(state: DualState, records: RecordSet, model: ReconModel, policy: AllocationPolicy,
                excess=None, mode="monotone"):
    """Raise each ``mu_i`` by ``nu_i`` times its average constraint violation.

    ``excess`` may be passed when already computed for this batch.
    """
    if excess is None:
        excess = average_excess(records, model, policy)
    viol = -np.asarray(excess)
    if mode == "monotone":
        mu = state.mu + state.nu * np.maximum(viol, 0.0)
    else:
        mu = np.maximum(state.mu + state.nu * viol, 0.0)
    return DualState(mu, state.nu, state.history + [viol.copy()])


def _clip(grads, clip_norm):
    if clip_norm is None:
        return grads
    nrm = grads.norm()
    return grads.scaled(clip_norm / nrm) if nrm > clip_norm else grads


def train_value(records: RecordSet, config: TrainConfig, kind="value_learned", capacity=None):
    """Primal-dual training of the value-oriented reconciliation.

    Each epoch samples a batch, reconciles it with the current parameters,
    takes one SGD step on the batch Lagrangian with the current duals, then
    raises the duals by the batch's constraint violations. Hours with zero
    imbalance incentive are excluded.

    Returns:
        ``(model, dual_state, report)``. ``report.status`` is ``"ok"`` when
        every producer's average saving on the full training set is at least
        ``-tol`` (``tol = 1e-6 * mean independent cost``), else
        ``"constraint-failure"``.
    """
    if kind not in ("value_learned", "value_linear"):
        raise ConfigurationError(f"train_value cannot fit {kind!r}")
    train = records[~records.degenerate]
    T = len(train)
    if T == 0:
        raise ConfigurationError("no non-degenerate training records")
    bs = config.batch_size
    if bs > T:
        raise ConfigurationError(f"batch size {bs} exceeds {T} training records")
    policy = config.policy
    m = train.m
    model = warm_start_bottom_up(new_model(kind, train, config, capacity), train, config)
    c_ind_all = train.independent_costs()
    mean_cost = float(np.mean(c_ind_all))
    # perfect base forecasts cost nothing; fall back to absolute floors
    scale = mean_cost if mean_cost > 0 else 1.0
    eps = config.eps_rel * scale
    tol = 1e-6 * scale
    state = DualState.initial(m, config.nu_vector(m))
    rng = np.random.default_rng(config.seed)
    step = config.linear_lam if kind == "value_linear" else config.lam
    rows = []
    for epoch in range(1, config.epochs + 1):
        idx = rng.choice(T, bs, replace=False)
        batch = train[idx]
        L, excess, grads = _lagrangian_and_grad(batch, model, state.mu, policy, eps, c_ind_all[idx])
        if not np.isfinite(L):
            raise TrainingDivergenceError("non-finite Lagrangian", epoch, rows)
        grads = _clip(grads, config.clip_norm)
        model.g = neural.sgd_step(model.g, grads, step, epoch)
        state = dual_update(state, batch, model, policy, excess=excess, mode=config.dual_mode)
        rows.append((epoch, L, *excess, *state.mu))
    final = average_excess(train, model, policy, c_ind_all)
    status = "ok" if np.all(final >= -tol) else "constraint-failure"
    if status != "ok":
        log.warning("bargaining constraints violated on training data: %s", final)
    report = TrainingReport(status, rows, final, eps, tol,
                            rows[0][1] if rows else float("nan"),
                            lagrangian_from_excess(final, state.mu, eps))
    return model, state, report


def train(kind, records: RecordSet, config: TrainConfig, capacity=None):
    """Dispatch to the right trainer; returns ``(model, report_or_None)``."""
    if kind == "bottom_up":
        return bottom_up(Hierarchy.two_level(records.m)), None
    if kind.startswith("quality"):
        return train_quality(records, config, kind, capacity)
    model, _, report = train_value(records, config, kind, capacity)
    return model, report
