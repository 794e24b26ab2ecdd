"""Independent ground-truth computations for the game pipeline.

Everything here is deliberately separate from the LP machinery: per-policy
growth rates via log-space power iteration on the exponentiated-cost matrix,
brute-force minimization over all pure policies, Cesaro limit matrices from
the communicating-class structure, and the ergodic game payoff evaluated
through invariant measures.  The LP solutions are verified against these.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GuardError, ModelError
from .extreal import NEG_INF, weighted_sum
from .model import KernelMatrix, MdpModel, PurePolicy, StationaryPolicy, apply_policy

ENUMERATION_GUARD = 10**6
RATE_TOL = 1e-10
MAX_POWER_ITERS = 100_000
RATE_WINDOW = 32


class DegenerateChainError(RuntimeError):
    """A numerically degenerate recurrent class (singular invariant system)."""


@dataclass(frozen=True)
class GrowthRates:
    """Per-state growth rates of E[exp(cumulative cost)] under one policy."""

    lam: np.ndarray
    lambda_max: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class PayoffVector:
    """Per-state ergodic payoffs of the game chain; -inf marks an absolute
    continuity failure at a state with positive Cesaro weight."""

    phi: np.ndarray
    phi_max: float


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    argmin: PurePolicy
    per_state: np.ndarray
    converged: bool


def kl_divergence(qrow, prow) -> float:
    """Kullback-Leibler divergence sum_j q_j log(q_j / p_j).

    Terms with q_j = 0 contribute 0; any q_j > 0 where p_j = 0 gives +inf.
    """
    q = np.asarray(qrow, dtype=float)
    p = np.asarray(prow, dtype=float)
    mask = q > 0.0
    if np.any(p[mask] == 0.0):
        return math.inf
    return float(np.sum(q[mask] * np.log(q[mask] / p[mask])))


def tilde_cost(model: MdpModel, i: int, qrow, u: int) -> float:
    """KL-penalized running reward c(i,u) - D(q(.|i) || p(.|i,u)).

    Returns -inf when the chosen row is not absolutely continuous with
    respect to p(.|i,u).  Rows with mass outside the union support are not
    in the maximizer's strategy class and are rejected outright.
    """
    q = np.asarray(qrow, dtype=float)
    if np.any(q[~model.support[i]] > 0.0):
        raise ModelError(f"row at state {i} has mass outside the union support")
    div = kl_divergence(q, model.kernel[u, i])
    if math.isinf(div):
        return NEG_INF
    return float(model.cost[i, u]) - div


def _log_matvec(logm: np.ndarray, ln: np.ndarray) -> np.ndarray:
    """One multiplication step in log space, batched: (P,s,s) x (P,s)."""
    t = logm + ln[:, None, :]
    mx = t.max(axis=2)
    return mx + np.log(np.exp(t - mx[..., None]).sum(axis=2))


def _batched_log_rates(logm: np.ndarray, rate_tol: float, max_iters: int,
                       window: int):
    """Growth-rate estimates for a batch of chains by log-space power iteration.

    Keeps iterates normalized (running max subtracted) so all arithmetic stays
    O(1), and damps with the average of two consecutive iterates so period-2
    structure cannot make the per-step estimate oscillate.  The estimate is
    the damped per-step increment averaged over a sliding window; an element
    converges when successive estimates differ by less than rate_tol.
    """
    p, s, _ = logm.shape
    ln = np.zeros((p, s))
    d_prev = None
    buf = np.zeros((window, p, s))
    buf_count = 0
    est_prev = None
    out = np.zeros((p, s))
    iters = np.zeros(p, dtype=int)
    done = np.zeros(p, dtype=bool)
    log2 = math.log(2.0)
    for step in range(1, max_iters + 1):
        lnew = _log_matvec(logm, ln)
        off = lnew.max(axis=1)
        lnew_norm = lnew - off[:, None]
        damped = np.logaddexp(lnew_norm, ln - off[:, None]) - log2
        if d_prev is not None:
            inc = damped - d_prev + off[:, None]
            buf[buf_count % window] = inc
            buf_count += 1
            if buf_count >= window:
                est = buf.mean(axis=0)
                if est_prev is not None:
                    newly = ~done & (np.abs(est - est_prev).max(axis=1) < rate_tol)
                    out[newly] = est[newly]
                    iters[newly] = step
                    done |= newly
                    if done.all():
                        return out, iters, done
                est_prev = est
        d_prev = damped
        ln = lnew_norm
    est = buf.mean(axis=0) if buf_count >= window else np.zeros((p, s))
    out[~done] = est[~done]
    iters[~done] = max_iters
    return out, iters, done


def growth_rate(model: MdpModel, policy: StationaryPolicy, *,
                rate_tol: float = RATE_TOL, max_iters: int = MAX_POWER_ITERS,
                window: int = RATE_WINDOW) -> GrowthRates:
    """Per-state growth rates lim (1/n) log E_i[exp(sum of costs)] under a
    stationary policy, via power iteration on M(i,j) = exp(c_v(i)) p_v(j|i)."""
    p_v, c_v = apply_policy(model, policy)
    with np.errstate(divide="ignore"):
        logm = c_v[:, None] + np.log(p_v)
    est, iters, conv = _batched_log_rates(logm[None], rate_tol, max_iters, window)
    lam = est[0]
    return GrowthRates(lam=lam, lambda_max=float(lam.max()),
                       iterations=int(iters[0]), converged=bool(conv[0]))


def brute_force_lambda_star(model: MdpModel, *, rate_tol: float = RATE_TOL,
                            max_iters: int = MAX_POWER_ITERS) -> BruteForceResult:
    """Exact minimum of max_i (growth rate) over all pure policies.

    Enumerates the |U|^s pure policies (guarded), runs the batched power
    iteration jointly, and breaks value ties by lexicographic policy order.
    """
    s, m = model.num_states, model.num_actions
    count = m**s
    if count > ENUMERATION_GUARD:
        raise GuardError(
            f"pure-policy enumeration of {count} policies exceeds guard "
            f"{ENUMERATION_GUARD}"
        )
    choices = np.array(list(itertools.product(range(m), repeat=s)), dtype=int)
    p_v = model.kernel[choices, np.arange(s)[None, :], :]
    c_v = model.cost[np.arange(s)[None, :], choices]
    with np.errstate(divide="ignore"):
        logm = c_v[:, :, None] + np.log(p_v)
    est, _, conv = _batched_log_rates(logm, rate_tol, max_iters, RATE_WINDOW)
    values = est.max(axis=1)
    best = 0
    for k in range(1, len(values)):
        if values[k] < values[best]:
            best = k
    return BruteForceResult(
        value=float(values[best]),
        argmin=PurePolicy(tuple(int(u) for u in choices[best])),
        per_state=est[best],
        converged=bool(conv.all()),
    )


def _communicating_classes(p: np.ndarray):
    """(classes, recurrent_flags) from the support graph of a stochastic matrix."""
    s = p.shape[0]
    reach = np.eye(s, dtype=bool) | (p > 0.0)
    for _ in range(max(1, math.ceil(math.log2(max(s, 2))))):
        reach = reach @ reach
    comm = reach & reach.T
    seen = np.zeros(s, dtype=bool)
    classes = []
    for i in range(s):
        if seen[i]:
            continue
        members = tuple(int(j) for j in np.flatnonzero(comm[i]))
        seen[list(members)] = True
        classes.append(members)
    recurrent = []
    for members in classes:
        inside = np.zeros(s, dtype=bool)
        inside[list(members)] = True
        leaks = p[list(members)][:, ~inside].sum()
        recurrent.append(leaks == 0.0)
    return classes, recurrent


def cesaro_limit(kernel, tol: float = 1e-9) -> np.ndarray:
    """Cesaro limit Q = lim (1/N) sum_k P^k of a row-stochastic matrix.

    Solves each recurrent class's invariant distribution exactly and fills
    absorption probabilities from transient states; the result satisfies
    QP = PQ = QQ = Q within tol.
    """
    p = np.asarray(kernel, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("kernel must be square")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-10):
        raise ValueError("kernel must be row-stochastic")
    s = p.shape[0]
    classes, recurrent = _communicating_classes(p)
    rec_classes = [c for c, r in zip(classes, recurrent) if r]
    transient = sorted(set(range(s)) - {i for c, r in zip(classes, recurrent) if r for i in c})

    pis = []
    for members in rec_classes:
        idx = list(members)
        sub = p[np.ix_(idx, idx)]
        mat = sub.T - np.eye(len(idx))
        mat[-1, :] = 1.0
        rhs = np.zeros(len(idx))
        rhs[-1] = 1.0
        try:
            pi = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateChainError(
                f"singular invariant system on recurrent class {members}"
            ) from exc
        if pi.min() < -1e-10:
            raise DegenerateChainError(
                f"invariant distribution on class {members} came out negative"
            )
        pis.append(np.clip(pi, 0.0, None) / pi.sum())

    q = np.zeros((s, s))
    for members, pi in zip(rec_classes, pis):
        for i in members:
            q[i, list(members)] = pi
    if transient:
        tt = p[np.ix_(transient, transient)]
        mat = np.eye(len(transient)) - tt
        for members, pi in zip(rec_classes, pis):
            rhs = p[np.ix_(transient, list(members))].sum(axis=1)
            try:
                absorb = np.linalg.solve(mat, rhs)
            except np.linalg.LinAlgError as exc:
                raise DegenerateChainError(
                    f"singular absorption system for transient states {transient}"
                ) from exc
            q[np.ix_(transient, list(members))] += np.outer(absorb, pi)

    for name, resid in (("QP", q @ p - q), ("PQ", p @ q - q), ("QQ", q @ q - q)):
        err = float(np.abs(resid).max())
        if err > tol:
            raise DegenerateChainError(f"Cesaro limit failed {name} = Q check: {err:.3e}")
    return q


def game_payoff(model: MdpModel, q: KernelMatrix, v: StationaryPolicy) -> PayoffVector:
    """Per-state ergodic payoff Phi = Q ctilde_v for the game chain driven by q.

    States with zero Cesaro weight contribute nothing even if their reward is
    -inf; a -inf reward at a positively weighted state makes that start -inf.
    """
    rows = q.entries
    ces = cesaro_limit(rows)
    s = model.num_states
    ctil = np.empty(s)
    for i in range(s):
        per_action = [tilde_cost(model, i, rows[i], u) for u in range(model.num_actions)]
        ctil[i] = weighted_sum(v.rows[i], per_action)
    phi = np.array([weighted_sum(ces[i], ctil) for i in range(s)])
    return PayoffVector(phi=phi, phi_max=float(phi.max()))
