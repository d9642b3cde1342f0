"""Monte Carlo verification of exponential decay rates.

Simulates independent copies of the jump process (never touching the
matrix-exponential machinery, so the comparison against computed rates is a
genuinely independent route), builds empirical measure trajectories, and
estimates the decay of rare-event probabilities for events of the form
"the empirical measure of n copies lies within an l1 ball at time t".

Seeding contract: every unit of work (one copy for trajectories, one
Bernoulli batch for decay estimation) draws from its own stream derived as
``SeedSequence(seed, spawn_key=(unit_index,))``. Results are merged by unit
index, so they are bitwise reproducible and independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InsufficientSampling, InvalidParameter, MalformedModel
from .lagrangian import SolverOptions
from .markov import Generator, Measure, sample_jump_path
from .rates import PathGrid, conditional_rate


class BallEvent(NamedTuple):
    """Empirical measure within l1 distance ``radius`` of ``target`` at ``time``."""

    target: Measure
    time: float
    radius: float


def _unit_rng(seed: int, unit: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(unit,)))


def empirical_trajectory(gen: Generator, mu0: Measure, n: int,
                         t1: float, K: int, seed: int,
                         t0: float = 0.0) -> PathGrid:
    """Empirical measure of n independent copies at K+1 uniform grid nodes.

    Copy i draws its initial state and full jump path from stream i; the
    result is deterministic given the seed.
    """
    if n < 1:
        raise InvalidParameter(f"need at least one copy, got {n}")
    if not t0 < t1:
        raise InvalidParameter("need t0 < t1")
    nodes = t0 + (t1 - t0) / K * np.arange(K + 1)
    counts = np.zeros((K + 1, gen.size))
    for i in range(n):
        rng = _unit_rng(seed, i)
        x0 = int(rng.choice(gen.size, p=mu0.p))
        path = sample_jump_path(gen, x0, t1, rng)
        visited = path.states_at(nodes)
        counts[np.arange(K + 1), visited] += 1.0
    return PathGrid(gen.space, t0, t1, counts / n)


def _states_at_horizon(states, horizon, exit_rates, cum_jump, rng):
    """Advance a batch of copies to the horizon by exponential clocks."""
    states = states.copy()
    clock = np.zeros(states.size)
    alive = exit_rates[states] > 0.0
    while True:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            return states
        rates = exit_rates[states[idx]]
        clock[idx] += rng.exponential(1.0, size=idx.size) / rates
        crossed = clock[idx] >= horizon
        alive[idx[crossed]] = False
        jumping = idx[~crossed]
        if jumping.size:
            u = rng.random(jumping.size)
            rows = cum_jump[states[jumping]]
            nxt = np.minimum((u[:, None] >= rows).sum(axis=1),
                             exit_rates.size - 1)
            states[jumping] = nxt
            alive[jumping] = exit_rates[nxt] > 0.0


@dataclass(frozen=True)
class DecayEstimate:
    """Fitted exponential decay of a rare-event probability in n."""

    n_values: tuple[int, ...]
    log_probs: tuple[float, ...]
    slope: float
    stderr: float
    hits: tuple[int, ...]
    reps: int
    seed: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise MalformedModel("n values must be strictly increasing")
        if any(lp > 0 for lp in self.log_probs):
            raise MalformedModel("log probabilities must be nonpositive")

    def to_dict(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "log_probs": list(self.log_probs),
            "slope": self.slope,
            "stderr": self.stderr,
            "hits": list(self.hits),
            "reps": self.reps,
            "seed": self.seed,
        }


def _wilson_log_sigma(hits: int, reps: int, z: float = 1.959964) -> float:
    """Half-width of the Wilson interval for log p, in standard errors."""
    phat = hits / reps
    denom = 1.0 + z * z / reps
    center = (phat + z * z / (2 * reps)) / denom
    half = z * math.sqrt(phat * (1 - phat) / reps + z * z / (4 * reps * reps)) / denom
    lo = max(center - half, 1e-300)
    hi = min(center + half, 1.0)
    return (math.log(hi) - math.log(lo)) / (2 * z)


def estimate_event_decay(gen: Generator, mu0: Measure, event: BallEvent,
                         n_values, reps: int, seed: int) -> DecayEstimate:
    """Estimate the decay rate -(1/n) log P[empirical measure in the ball].

    For each n the probability is estimated over ``reps`` independent
    batches of n copies; the slope of -log(p_hat) against n is fitted by
    least squares weighted with Wilson-interval error bars.

    Raises
    ------
    InsufficientSampling
        if some n records zero hits; the exception carries the partial
        per-n results.
    """
    if reps < 100:
        raise InvalidParameter(f"need at least 100 batches, got {reps}")
    n_values = tuple(int(v) for v in n_values)
    if len(n_values) < 2:
        raise InvalidParameter("need at least two copy counts to fit a slope")
    if any(v < 1 for v in n_values) or any(
            b <= a for a, b in zip(n_values, n_values[1:])):
        raise InvalidParameter("n values must be positive and strictly increasing")
    target = event.target.p
    horizon = float(event.time)
    if horizon <= 0:
        raise InvalidParameter("event time must be positive")

    exit_rates = gen.exit_rates
    cum_jump = np.cumsum(gen.jump_probabilities(), axis=1)
    hits = []
    for i_n, n in enumerate(n_values):
        count = 0
        for rep in range(reps):
            rng = _unit_rng(seed, i_n * reps + rep)
            x0 = rng.choice(gen.size, size=n, p=mu0.p)
            states = _states_at_horizon(x0, horizon, exit_rates, cum_jump, rng)
            emp = np.bincount(states, minlength=gen.size) / n
            if np.abs(emp - target).sum() < event.radius:
                count += 1
        hits.append(count)
        if count == 0:
            partial = {
                "n_values": n_values[:i_n + 1],
                "hits": tuple(hits),
                "log_probs": tuple(
                    math.log(h / reps) for h in hits[:-1]),
            }
            raise InsufficientSampling(
                f"zero hits out of {reps} batches at n={n}; "
                "the event is too rare for naive sampling at this budget",
                partial=partial)

    log_probs = [math.log(h / reps) for h in hits]
    sigmas = np.array([_wilson_log_sigma(h, reps) for h in hits])
    x = np.array(n_values, dtype=float)
    y = -np.array(log_probs)
    w = 1.0 / sigmas**2
    xbar = float((w * x).sum() / w.sum())
    ybar = float((w * y).sum() / w.sum())
    sxx = float((w * (x - xbar) ** 2).sum())
    slope = float((w * (x - xbar) * (y - ybar)).sum() / sxx)
    stderr = math.sqrt(1.0 / sxx)
    return DecayEstimate(n_values, tuple(log_probs), slope, stderr,
                         tuple(hits), reps, seed)


def ball_infimum_rate(gen: Generator, mu0: Measure, nu: Measure, t: float,
                      delta: float,
                      opts: SolverOptions | None = None) -> float:
    """Upper bound for the infimum of I_t(.|mu0) over the l1 ball around nu.

    The rate is convex and vanishes at the evolved law, so evaluating it at
    the projection of nu onto the ball boundary along the segment toward
    the evolved law bounds the ball infimum from above (and is exact when
    the minimizer lies on that segment).
    """
    if delta <= 0:
        raise InvalidParameter("ball radius must be positive")
    from .markov import evolve_law

    center = evolve_law(gen, mu0, t).p
    dist = float(np.abs(center - nu.p).sum())
    if dist <= delta:
        return 0.0
    lam = delta / dist
    boundary = Measure(gen.space, nu.p + lam * (center - nu.p))
    return conditional_rate(gen, mu0, boundary, t, opts=opts).value
