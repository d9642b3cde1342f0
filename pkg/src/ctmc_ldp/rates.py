"""Conditional and joint rate functions, path action, and partition rates.

The conditional rate

    I_t(nu | mu) = sup_f { <f, nu> - <V(t)f, mu> }

is a concave maximization over gauge-fixed potentials; its gradient is
nu minus the tilted one-step prediction, so stationarity matches moments.
States where nu vanishes push their potential components to -infinity; the
limit is taken exactly by restricting the transition matrix to the support
of nu before optimizing, which also detects unreachable targets (+infinity).

The joint rate over several time points maximizes

    sum_i <f_i, nu_i> - log E[ e^{ sum_i f_i(X(t_i)) } ]

with one Newton loop over the concatenated potentials; the log-moment term
and its derivatives come from forward/backward message passing through the
tilted chain.

The action of a discretized measure path is the cell-by-cell Lagrangian of
within-cell measures and finite-difference speeds; the partition rate
chains conditional rates across a coarse time partition and underestimates
the action supremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, MalformedModel, NumericalFailure
from .lagrangian import (
    DEFAULT_OPTIONS,
    OBJECTIVE_CAP,
    IMPROVEMENT_TOL,
    BOUNDARY_NORM,
    SolverOptions,
    _ascend_step,
    _Status,
    lagrangian_value,
)
from .markov import (
    Generator,
    Measure,
    Potential,
    StateSpace,
    _expm_generator,
    _frozen,
    relative_entropy,
)

DEFAULT_TILT_CAP = 30.0


@dataclass(frozen=True)
class PathGrid:
    """Uniform time grid carrying one probability vector per node."""

    space: StateSpace
    t0: float
    t1: float
    measures: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.measures, dtype=float)
        if not self.t0 < self.t1:
            raise MalformedModel("need t0 < t1")
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] != self.space.size:
            raise MalformedModel("measures must be a (K+1, size) array with K >= 1")
        if not np.all(np.isfinite(m)) or np.any(m < -1e-12):
            raise MalformedModel("grid nodes must be valid probability vectors")
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-10:
            raise MalformedModel("grid node masses must sum to 1")
        object.__setattr__(self, "measures", _frozen(np.clip(m, 0.0, None)))

    @property
    def K(self) -> int:
        return self.measures.shape[0] - 1

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.K

    @property
    def node_times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.K + 1)

    def measure(self, k: int) -> Measure:
        return Measure(self.space, self.measures[k])


@dataclass(frozen=True)
class Partition:
    """Strictly increasing interior time points of a coarse partition."""

    times: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if not ts:
            raise MalformedModel("a partition needs at least one time")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise MalformedModel("partition times must be strictly increasing")
        object.__setattr__(self, "times", ts)


@dataclass(frozen=True)
class ConditionalRateResult:
    """Value and (when attained) maximizer of a conditional rate."""

    value: float
    maximizer: Potential | None
    support: tuple[int, ...]
    support_potential: np.ndarray | None
    iterations: int
    gradient_norm: float

    @property
    def attained(self) -> bool:
        return self.maximizer is not None

    def tilt_potential(self, space: StateSpace,
                       cap: float = DEFAULT_TILT_CAP) -> Potential:
        """Best available terminal tilt, capped at sup-norm ``cap``.

        Off-support components sit at -cap, realizing the limiting tilt to
        within e^{-cap}.
        """
        f = np.full(space.size, -cap)
        if self.support_potential is not None:
            f[list(self.support)] = np.clip(self.support_potential, -cap, cap)
        return Potential(space, f)


def _maximize_conditional(P, mu, nu, opts, gauge=None):
    """Restricted Newton maximization of <f,nu> - <log(P e^f), mu>.

    Returns (status, support, f_on_support, value, iterations, grad_norm).
    """
    support = np.flatnonzero(nu > 0.0)
    rows = np.flatnonzero(mu > 0.0)
    PS = P[np.ix_(rows, support)]
    muX = mu[rows]
    nuS = nu[support]
    if np.any(PS.sum(axis=1) <= 0.0):
        # some started mass cannot land on the support of nu at all
        return _Status.INFINITE, support, None, math.inf, 0, math.inf
    if np.any(PS.sum(axis=0) <= 0.0):
        # nu puts mass on a state no started mass can reach; the objective
        # grows linearly in that tilt component (singular Hessian), so it
        # must be screened structurally
        return _Status.INFINITE, support, None, math.inf, 0, math.inf

    pin = 0
    if gauge is not None:
        hits = np.flatnonzero(support == gauge)
        if hits.size:
            pin = int(hits[0])
    free = np.array([i for i in range(support.size) if i != pin], dtype=int)

    def value_at(fv):
        e = np.exp(np.clip(fv, -700.0, 700.0))
        z = PS @ e
        if np.any(z <= 0.0):
            return -math.inf
        return float(nuS @ fv) - float(muX @ np.log(z))

    def grad_sup_at(fv):
        e = np.exp(np.clip(fv, -700.0, 700.0))
        weighted = PS * e[None, :]
        W = weighted / weighted.sum(axis=1)[:, None]
        g = nuS - muX @ W
        return float(np.max(np.abs(g[free]))) if free.size else 0.0

    f = np.zeros(support.size)
    value = value_at(f)
    grad_norm = math.inf
    for it in range(1, opts.max_iters + 1):
        e = np.exp(np.clip(f, -700.0, 700.0))
        weighted = PS * e[None, :]
        z = weighted.sum(axis=1)
        W = weighted / z[:, None]
        pred = muX @ W
        grad = nuS - pred
        grad_norm = float(np.max(np.abs(grad[free]))) if free.size else 0.0

        if value > OBJECTIVE_CAP:
            return _Status.INFINITE, support, f, math.inf, it, grad_norm
        if grad_norm <= opts.gradient_tol:
            return _Status.CONVERGED, support, f, value, it, grad_norm

        hess = np.diag(pred) - W.T @ (muX[:, None] * W)
        A = hess[np.ix_(free, free)]
        g = grad[free]
        step = None
        try:
            step = np.linalg.solve(A, g)
            if not np.all(np.isfinite(step)):
                step = None
        except np.linalg.LinAlgError:
            step = None
        if step is None or float(g @ step) <= 0.0:
            step = g

        direction = np.zeros(support.size)
        direction[free] = step
        new_f, new_value = _ascend_step(value_at, grad_sup_at, f, direction,
                                        float(g @ step), value, grad_norm)
        if new_f is None:
            raise NumericalFailure(
                "line search stalled before reaching the gradient tolerance")
        improvement = new_value - value
        f = new_f
        value = new_value

        if np.max(np.abs(f)) > opts.divergence_norm:
            if improvement > IMPROVEMENT_TOL:
                return _Status.INFINITE, support, f, math.inf, it, grad_norm
            return _Status.BOUNDARY, support, f, value, it, grad_norm

    raise NumericalFailure(
        f"no convergence or divergence evidence within {opts.max_iters} iterations")


def conditional_rate(gen: Generator, mu: Measure, nu: Measure, t: float,
                     opts: SolverOptions | None = None,
                     gauge_state: int | None = None) -> ConditionalRateResult:
    """I_t(nu | mu): the cost of seeing law nu at time t having started at mu.

    The returned result carries a full-space maximizer only when the
    supremum is attained at a finite potential on every state; when nu has
    zero mass on states the base dynamics can reach, the value is exact but
    reported as unattained (the optimal tilt diverges there).
    """
    if t <= 0:
        raise InvalidParameter(f"time must be positive, got {t}")
    if mu.space != nu.space or mu.space != gen.space:
        raise MalformedModel("inputs live on different state spaces")
    opts = opts or DEFAULT_OPTIONS
    P = _expm_generator(gen.Q, float(t))
    gauge = gen.space.index(gauge_state) if gauge_state is not None else None
    status, support, f, value, iters, gnorm = _maximize_conditional(
        P, mu.p, nu.p, opts, gauge)
    if math.isfinite(value):
        value = max(value, 0.0)
    sup = tuple(int(i) for i in support)
    if status != _Status.CONVERGED:
        return ConditionalRateResult(value, None, sup, f, iters, gnorm)
    full = support.size == gen.size
    interior = np.max(np.abs(f)) <= BOUNDARY_NORM
    maximizer = None
    if full and interior:
        vec = np.zeros(gen.size)
        vec[support] = f
        maximizer = Potential(gen.space, vec)
    return ConditionalRateResult(value, maximizer, sup, f, iters, gnorm)


@dataclass(frozen=True)
class JointRateResult:
    """Value and per-time maximizers of a joint finite-dimensional rate."""

    value: float
    potentials: tuple[Potential, ...] | None
    iterations: int
    gradient_norm: float

    @property
    def attained(self) -> bool:
        return self.potentials is not None


def _joint_messages(Ps, E, mu0):
    """Normalized forward/backward messages of the tilted chain.

    Returns (alphas, betas, logZ); alphas[i] sums to one, betas are scaled
    so alpha_i . beta_i = 1 holds at every time.
    """
    k = len(Ps)
    alpha = mu0 * E[0]
    total = alpha.sum()
    if total <= 0.0:
        return None, None, -math.inf
    logZ = math.log(total)
    alpha = alpha / total
    alphas = [alpha]
    for i in range(k):
        alpha = (alphas[-1] @ Ps[i]) * E[i + 1]
        total = alpha.sum()
        if total <= 0.0:
            return None, None, -math.inf
        logZ += math.log(total)
        alphas.append(alpha / total)
    betas = [None] * (k + 1)
    beta = np.ones_like(mu0)
    betas[k] = beta / float(alphas[k] @ beta)
    for i in range(k - 1, -1, -1):
        beta = Ps[i] @ (E[i + 1] * betas[i + 1])
        betas[i] = beta / float(alphas[i] @ beta)
    return alphas, betas, logZ


def joint_rate(gen: Generator, mu0: Measure, partition: Partition,
               marginals, opts: SolverOptions | None = None) -> JointRateResult:
    """Joint rate of observing the given marginals at times (0, t_1, ..., t_k).

    ``marginals`` holds k+1 measures, the first at time zero. The inner
    log-moment functional is evaluated by backward recursion through the
    nonlinear semigroup, and the whole concatenated potential vector is
    maximized in a single Newton loop.
    """
    opts = opts or DEFAULT_OPTIONS
    times = (0.0,) + partition.times
    nus = [m.p if isinstance(m, Measure) else np.asarray(m, float) for m in marginals]
    if len(nus) != len(times):
        raise MalformedModel(
            f"need {len(times)} marginals for {len(times) - 1} partition times")
    n = gen.size
    k = len(times) - 1
    Ps = [
        _expm_generator(gen.Q, times[i + 1] - times[i])
        for i in range(k)
    ]

    supports = [np.flatnonzero(nu > 0.0) for nu in nus]
    blocks = []
    offset = 0
    for sup in supports:
        blocks.append(np.arange(offset, offset + sup.size))
        offset += sup.size
    total_vars = offset
    pins = np.array([b[0] for b in blocks])
    free = np.array([j for j in range(total_vars) if j not in set(pins)], dtype=int)

    def tilts(x):
        E = []
        for i, sup in enumerate(supports):
            e = np.zeros(n)
            e[sup] = np.exp(np.clip(x[blocks[i]], -700.0, 700.0))
            E.append(e)
        return E

    def value_at(x):
        _, _, logZ = _joint_messages(Ps, tilts(x), mu0.p)
        if not math.isfinite(logZ):
            return -math.inf
        lin = sum(float(nus[i][supports[i]] @ x[blocks[i]]) for i in range(k + 1))
        return lin - logZ

    def grad_sup_at(x):
        alphas, betas, logZ = _joint_messages(Ps, tilts(x), mu0.p)
        if not math.isfinite(logZ):
            return math.inf
        g = np.zeros(total_vars)
        for i in range(k + 1):
            mi = alphas[i] * betas[i]
            g[blocks[i]] = nus[i][supports[i]] - mi[supports[i]]
        return float(np.max(np.abs(g[free]))) if free.size else 0.0

    x = np.zeros(total_vars)
    value = value_at(x)
    if not math.isfinite(value):
        # no admissible path through the marginal supports
        return JointRateResult(math.inf, None, 0, math.inf)
    # marginal mass demanded at (time, state) pairs the support-constrained
    # dynamics cannot realize makes the objective linearly unbounded in the
    # corresponding tilt component; screen structurally via the two-sided
    # marginals at zero tilt
    alphas0, betas0, _ = _joint_messages(Ps, tilts(x), mu0.p)
    for i, sup in enumerate(supports):
        if np.any((alphas0[i] * betas0[i])[sup] <= 0.0):
            return JointRateResult(math.inf, None, 0, math.inf)

    grad_norm = math.inf
    for it in range(1, opts.max_iters + 1):
        E = tilts(x)
        alphas, betas, logZ = _joint_messages(Ps, E, mu0.p)
        marg = [alphas[i] * betas[i] for i in range(k + 1)]
        grad = np.zeros(total_vars)
        for i in range(k + 1):
            grad[blocks[i]] = nus[i][supports[i]] - marg[i][supports[i]]
        grad_norm = float(np.max(np.abs(grad[free]))) if free.size else 0.0

        if value > OBJECTIVE_CAP:
            return JointRateResult(math.inf, None, it, grad_norm)
        if grad_norm <= opts.gradient_tol:
            break

        # Hessian of logZ: two-time covariances of the tilted chain.
        hess = np.zeros((total_vars, total_vars))
        for i in range(k + 1):
            mi = marg[i][supports[i]]
            hess[np.ix_(blocks[i], blocks[i])] = np.diag(mi) - np.outer(mi, mi)
        for i in range(k + 1):
            carry = np.diag(alphas[i])
            for j in range(i + 1, k + 1):
                carry = (carry @ Ps[j - 1]) * E[j][None, :]
                joint = carry * betas[j][None, :]
                joint = joint / joint.sum()  # running normalizations cancel
                cov = (joint - np.outer(marg[i], marg[j]))[np.ix_(supports[i],
                                                                  supports[j])]
                hess[np.ix_(blocks[i], blocks[j])] = cov
                hess[np.ix_(blocks[j], blocks[i])] = cov.T

        A = hess[np.ix_(free, free)]
        g = grad[free]
        step = None
        try:
            step = np.linalg.solve(A, g)
            if not np.all(np.isfinite(step)):
                step = None
        except np.linalg.LinAlgError:
            step = None
        if step is None or float(g @ step) <= 0.0:
            step = g
        direction = np.zeros(total_vars)
        direction[free] = step
        new_x, new_value = _ascend_step(value_at, grad_sup_at, x, direction,
                                        float(g @ step), value, grad_norm)
        if new_x is None:
            raise NumericalFailure(
                "line search stalled before reaching the gradient tolerance")
        improvement = new_value - value
        x = new_x
        value = new_value
        if np.max(np.abs(x)) > opts.divergence_norm:
            if improvement > IMPROVEMENT_TOL:
                return JointRateResult(math.inf, None, it, grad_norm)
            return JointRateResult(max(value, 0.0), None, it, grad_norm)
    else:
        raise NumericalFailure(
            f"no convergence or divergence evidence within {opts.max_iters} iterations")

    value = max(value, 0.0)
    if any(sup.size != n for sup in supports) or np.max(np.abs(x)) > BOUNDARY_NORM:
        return JointRateResult(value, None, it, grad_norm)
    pots = []
    for i in range(k + 1):
        vec = np.zeros(n)
        vec[supports[i]] = x[blocks[i]]
        pots.append(Potential(gen.space, vec))
    return JointRateResult(value, tuple(pots), it, grad_norm)


@dataclass(frozen=True)
class ActionResult:
    """Quadrature of the Lagrangian along a grid path.

    ``value`` is +inf when some cell is infeasible; ``infeasible_cell`` then
    names the first offending cell.
    """

    value: float
    cell_values: np.ndarray
    infeasible_cell: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "cell_values",
                           _frozen(np.asarray(self.cell_values, dtype=float)))


# Within-cell location of the measure node for the action quadrature. The
# finite-difference speed is already cell-centered, so the measure offset
# (1/2 - node) fixes the order of the rule: any offset keeps it first order
# in the grid, so refinement studies halve cleanly, matching the behavior
# the identity checks document; a small offset keeps the leading constant
# an order of magnitude below the per-identity tolerance budgets.
QUADRATURE_NODE = 0.45


def path_action(gen: Generator, path: PathGrid,
                opts: SolverOptions | None = None) -> ActionResult:
    """Integral of L(mu(s), mu'(s)) ds over the grid, cell by cell.

    Each cell contributes dt * L(measure at the quadrature node,
    finite-difference speed); evaluations are warm-started along the path.
    """
    if path.space != gen.space:
        raise MalformedModel("path and generator use different state spaces")
    opts = opts or DEFAULT_OPTIONS
    dt = path.dt
    m = path.measures
    cells = np.zeros(path.K)
    warm = None
    w = QUADRATURE_NODE
    for k in range(path.K):
        mid = (1.0 - w) * m[k] + w * m[k + 1]
        u = (m[k + 1] - m[k]) / dt
        u = u - u.sum() / u.size
        res = lagrangian_value(gen, Measure(gen.space, mid), u,
                               opts=opts, initial=warm)
        if not math.isfinite(res.value):
            cells[k] = math.inf
            return ActionResult(math.inf, cells[:k + 1], infeasible_cell=k)
        cells[k] = dt * res.value
        if res.maximizer is not None:
            warm = res.maximizer.f
    return ActionResult(float(cells.sum()), cells)


def partition_rate(gen: Generator, path: PathGrid, partition: Partition,
                   P0: Measure, opts: SolverOptions | None = None) -> float:
    """Initial entropy plus chained conditional rates across the partition.

    Partition times must coincide with grid nodes (each is snapped to the
    nearest node, which must be unique and after the previous one).
    """
    dt = path.dt
    idx = []
    for tau in partition.times:
        j = int(round((tau - path.t0) / dt))
        if j < 1 or j > path.K or abs(path.t0 + j * dt - tau) > dt / 2:
            raise InvalidParameter(f"partition time {tau} is not a grid node")
        idx.append(j)
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise InvalidParameter("partition times collapse onto the same grid node")

    total = relative_entropy(path.measure(0), P0)
    prev = 0
    for j in idx:
        seg = conditional_rate(gen, path.measure(prev), path.measure(j),
                               (j - prev) * dt, opts=opts)
        total += seg.value
        if not math.isfinite(total):
            return math.inf
        prev = j
    return float(total)
