"""The nonlinear operator stack built on top of the linear semigroup.

For a jump generator Q the Hamiltonian acts as
``Hf(x) = sum_y Q[x,y] (e^{f(y)-f(x)} - 1)``, the exponential tilt of the
generator by g multiplies each rate by ``e^{g(y)-g(x)}``, and the
pre-Lagrangian ``Lg = A^g g - Hg`` is the entropy-production cost of running
the g-tilted dynamics. The nonlinear semigroup ``V(t)f = log(e^{tQ} e^f)``
has H as its generator and is approximated by iterating the nonlinear
resolvent ``R(lam)f = log((I - lam*Q)^{-1} e^f)``.

All evaluations go through log-sum-exp so potentials with norms up to a few
hundred stay in range.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateModel, InvalidParameter, InvalidTime
from .markov import Generator, Potential, _expm_generator, resolvent_matrix


def _log_matrix_apply(P: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Entrywise log of P @ exp(f), computed stably."""
    weights = np.clip(P, 0.0, None)
    return logsumexp(np.broadcast_to(f, P.shape), axis=1, b=weights)


def _hamiltonian_raw(Qoff: np.ndarray, exit_rates: np.ndarray,
                     f: np.ndarray) -> np.ndarray:
    diff = f[None, :] - f[:, None]
    return (Qoff * np.exp(diff)).sum(axis=1) - exit_rates


def apply_hamiltonian(gen: Generator, f: Potential) -> Potential:
    """Hf(x) = sum_{y != x} Q[x,y] (e^{f(y)-f(x)} - 1).

    Equivalently e^{-f} Q e^{f}; the local-rate form used here is invariant
    under constant shifts of f.
    """
    h = _hamiltonian_raw(gen.off_diagonal, gen.exit_rates, f.f)
    return Potential(gen.space, h)


def tilted_generator(gen: Generator, g: Potential) -> Generator:
    """The generator with each rate multiplied by e^{g(y)-g(x)}."""
    diff = g.f[None, :] - g.f[:, None]
    Qt = gen.off_diagonal * np.exp(diff)
    np.fill_diagonal(Qt, -Qt.sum(axis=1))
    return Generator(gen.space, Qt)


def pre_lagrangian(gen: Generator, g: Potential) -> Potential:
    """Lg = A^g g - Hg, pointwise nonnegative.

    Per state, Lg(x) = sum_y Q[x,y] (e^d * d - e^d + 1) with d = g(y)-g(x);
    each summand is u log u - u + 1 >= 0 evaluated at u = e^d.
    """
    d = g.f[None, :] - g.f[:, None]
    ed = np.exp(d)
    cost = (gen.off_diagonal * (ed * d - ed + 1.0)).sum(axis=1)
    return Potential(gen.space, cost)


def v_apply(gen: Generator, f: Potential, t: float) -> Potential:
    """The nonlinear semigroup V(t)f = log E[e^{f(X(t))} | X(0) = x]."""
    if t < 0:
        raise InvalidTime(f"time must be nonnegative, got {t}")
    P = _expm_generator(gen.Q, float(t))
    return Potential(gen.space, _log_matrix_apply(P, f.f))


def nonlinear_resolvent(gen: Generator, f: Potential, lam: float) -> Potential:
    """R(lam)f = log((I - lam*Q)^{-1} e^f)."""
    if lam <= 0:
        raise InvalidParameter(f"resolvent parameter must be positive, got {lam}")
    J = resolvent_matrix(gen, lam)
    return Potential(gen.space, _log_matrix_apply(J, f.f))


def resolvent_iterate(gen: Generator, f: Potential, t: float, n: int) -> Potential:
    """Apply R(1/n) exactly floor(n*t) times; converges to V(t)f as n grows."""
    if n < 1:
        raise InvalidParameter(f"n must be a positive integer, got {n}")
    if t < 0:
        raise InvalidTime(f"time must be nonnegative, got {t}")
    steps = int(math.floor(n * t + 1e-9))
    J = resolvent_matrix(gen, 1.0 / n)
    g = f.f
    for _ in range(steps):
        g = _log_matrix_apply(J, g)
    return Potential(gen.space, g)


def barrel_radius(gen: Generator) -> float:
    """Sup-norm radius within which the Hamiltonian is bounded by one.

    Equals 0.5 * log(1/r + 1) for r the maximal total exit rate: for any g
    with ||g|| below this radius, ||Hg|| <= 1.
    """
    r = gen.max_exit_rate
    if r <= 0:
        raise DegenerateModel("all exit rates are zero")
    return 0.5 * math.log1p(1.0 / r)
