"""Mass-balance data reconciliation.

Finds the flow vector minimizing the sigma-weighted sum of squared
deviations from the observations, subject to exact balance at every
transformer node and nonnegativity. Equality constraints are handled
through the KKT linear system; nonnegativity through an active-set outer
loop (clamp the most negative flow, re-solve, verify multipliers).

Also provides the perfect-blend split of a product market: local
production p and imports i mix proportionally into consumption c and
exports e, giving the four flows pc, pe, ic, ie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import Infeasible, NegativeQuantity, UnbalancedInputs, UnresolvedTarget
from .flow_model import (
    TOL_ABS,
    TOL_REL,
    Flow,
    FlowGraph,
    FlowKey,
    Observation,
    resolve_target,
)

# Weak prior pulling observation-free flows toward zero, so that problems
# left open by the balance constraints still have a defined minimizer.
PRIOR_SIGMA = 1e6  # m3 WFE

DEFAULT_SIGMA_REL = 0.10


@dataclass(frozen=True)
class ReconcileProblem:
    """Template graph (structure only), observations, and the relative
    sigma applied when an observation reports no uncertainty."""

    template: FlowGraph
    observations: Sequence[Observation]
    default_sigma_rel: float = DEFAULT_SIGMA_REL

    def __post_init__(self):
        if not self.default_sigma_rel > 0:
            raise ValueError("default_sigma_rel must be > 0")


@dataclass(frozen=True)
class ObservationFit:
    target_kind: str
    target_key: str
    observed: float
    reconciled: float
    residual: float
    sigma: float
    source: str = ""


@dataclass(frozen=True)
class ReconcileResult:
    graph: FlowGraph
    residuals: tuple[ObservationFit, ...]
    objective: float
    underdetermined: tuple[FlowKey, ...] = ()


def _observation_sigma(obs: Observation, default_sigma_rel: float) -> float:
    if obs.sigma is not None:
        return obs.sigma
    return max(default_sigma_rel * obs.value, TOL_ABS)


def _assemble(problem: ReconcileProblem):
    """Observation matrix, values, sigmas, and balance constraint matrix.

    Unknowns are the template flows ordered lexicographically by
    (from, to, product); FlowGraph.build already canonicalizes that order.
    """
    flows = problem.template.flows
    n = len(flows)
    index = {f.key: j for j, f in enumerate(flows)}

    rows = []
    values = []
    sigmas = []
    for obs in problem.observations:
        if not math.isfinite(obs.value):
            raise Infeasible(f"observation {obs.target_key!r} has no usable value")
        if obs.value < 0:
            raise Infeasible(
                f"observation {obs.target_key!r} forces a negative flow "
                f"(value {obs.value})"
            )
        keys = resolve_target(problem.template, obs.target_kind, obs.target_key)
        if not keys:
            raise UnresolvedTarget(
                f"observation target {obs.target_kind}:{obs.target_key} matches "
                f"no flow in the template"
            )
        row = np.zeros(n)
        for key in keys:
            row[index[key]] += 1.0
        rows.append(row)
        values.append(obs.value)
        sigmas.append(_observation_sigma(obs, problem.default_sigma_rel))

    M = np.vstack(rows) if rows else np.zeros((0, n))
    v = np.array(values, dtype=float)
    sig = np.array(sigmas, dtype=float)

    transformers = [
        node.id for node in problem.template.nodes if node.kind == "transformer"
    ]
    A = np.zeros((len(transformers), n))
    for i, node_id in enumerate(transformers):
        for f in problem.template.inbound(node_id):
            A[i, index[f.key]] += 1.0
        for f in problem.template.outbound(node_id):
            A[i, index[f.key]] -= 1.0
    return M, v, sig, A


def _solve_working_set(H, g, A, active):
    """Minimize x'Hx - 2g'x subject to Ax = 0 and x_j = 0 for active j.

    Solved through the KKT linear system by least squares, so redundant
    constraint rows (a balance row whose flows are all clamped, say) stay
    harmless; ties resolve to the minimum-norm solution, deterministically.
    """
    n = H.shape[0]
    bounds = np.zeros((len(active), n))
    for i, j in enumerate(sorted(active)):
        bounds[i, j] = 1.0
    A_eq = np.vstack([A, bounds])
    m = A_eq.shape[0]
    kkt = np.block([[H, A_eq.T], [A_eq, np.zeros((m, m))]])
    rhs = np.concatenate([g, np.zeros(m)])
    solution, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return solution[:n]


def _bound_multipliers(H, g, A, x, active, free):
    """Multipliers of the active bounds, from stationarity on free coords.

    At the working-set optimum, grad + A' lam vanishes on free coordinates;
    its value on a clamped coordinate is that bound's multiplier. Negative
    means the bound blocks descent and should be released.
    """
    grad = 2.0 * (H @ x - g)
    if A.shape[0] and free:
        lam, *_ = np.linalg.lstsq(A[:, free].T, -grad[free], rcond=None)
        mu = grad + A.T @ lam
    else:
        mu = grad
    return {j: mu[j] for j in active}


def reconcile(problem: ReconcileProblem) -> ReconcileResult:
    """Weighted least-squares reconciliation of the template's flows.

    Deterministic: identical inputs give bit-identical outputs. Raises
    Infeasible when an observation forces a negative flow or the active-set
    loop cannot converge; a flow untouched by every observation is returned
    in the underdetermined warning set, not treated as an error.
    """
    if not problem.observations:
        raise Infeasible("at least one observation is required")
    flows = problem.template.flows
    n = len(flows)
    if n == 0:
        raise Infeasible("template graph has no flows")

    M, v, sig, A = _assemble(problem)

    # Normalize weights to a unit maximum: the argmin is unchanged and the
    # KKT matrix keeps O(1) entries next to the unit balance rows.
    w = 1.0 / sig**2
    wmax = w.max()
    w_norm = w / wmax
    prior_norm = 1.0 / (PRIOR_SIGMA**2 * wmax)

    covered = np.any(M != 0.0, axis=0)
    H = (M.T * w_norm) @ M
    for j in range(n):
        if not covered[j]:
            H[j, j] += prior_norm
    g = (M.T * w_norm) @ v

    scale = max(1.0, float(np.abs(v).max())) if v.size else 1.0
    clamp_tol = 1e-9 * scale
    mu_tol = 1e-9 * max(1.0, float(np.abs(g).max()))

    active: list[int] = []
    seen_sets: set[frozenset] = set()
    x = np.zeros(n)
    max_iter = 4 * n + 16
    converged = False
    for _ in range(max_iter):
        x = _solve_working_set(H, g, A, active)
        free = [j for j in range(n) if j not in active]

        negative = [j for j in free if x[j] < -clamp_tol]
        if negative:
            worst = min(negative, key=lambda j: (x[j], j))
            active.append(worst)
            continue

        if active:
            mu = _bound_multipliers(H, g, A, x, active, free)
            releasable = [j for j in active if mu[j] < -mu_tol]
            if releasable:
                worst = min(releasable, key=lambda j: (mu[j], j))
                candidate = frozenset(set(active) - {worst})
                if candidate not in seen_sets:
                    seen_sets.add(candidate)
                    active.remove(worst)
                    continue
        converged = True
        break
    if not converged:
        raise Infeasible("active-set iteration failed to converge")

    x = np.maximum(x, 0.0)
    for j in active:
        x[j] = 0.0

    reconciled_flows = [
        Flow(f.id, f.from_node, f.to_node, f.product, float(x[j]))
        for j, f in enumerate(flows)
    ]
    graph = problem.template.with_flows(reconciled_flows)

    fits = []
    objective = 0.0
    for k, obs in enumerate(problem.observations):
        reconciled = float(M[k] @ x)
        residual = reconciled - obs.value
        objective += (residual / sig[k]) ** 2
        fits.append(
            ObservationFit(
                obs.target_kind,
                obs.target_key,
                obs.value,
                reconciled,
                residual,
                float(sig[k]),
                obs.source,
            )
        )

    underdetermined = tuple(f.key for j, f in enumerate(flows) if not covered[j])
    return ReconcileResult(graph, tuple(fits), objective, underdetermined)


def residuals_csv(result: ReconcileResult) -> str:
    lines = ["target_key,observed,reconciled,residual,sigma"]
    for fit in result.residuals:
        lines.append(
            f"{fit.target_key},{fit.observed:.3f},{fit.reconciled:.3f},"
            f"{fit.residual:.3f},{fit.sigma:.3f}"
        )
    return "\n".join(lines) + "\n"


def perfect_blend(
    p: float,
    i: float,
    c: float,
    e: float,
    tol_rel: float = TOL_REL,
    tol_abs: float = TOL_ABS,
) -> tuple[float, float, float, float]:
    """Split supply s = p + i into (pc, pe, ic, ie) proportionally.

    Production p and imports i are assumed perfectly blended in the
    market, so consumption c and exports e each draw from them in the
    ratio p:i. Inputs must already balance: |c + e - s| within tolerance.
    """
    for name, value in (("p", p), ("i", i), ("c", c), ("e", e)):
        if value < 0:
            raise NegativeQuantity(f"{name} = {value}")
    s = p + i
    if abs((c + e) - s) > tol_abs + tol_rel * max(s, c + e):
        raise UnbalancedInputs(
            f"supply {s} vs consumption+exports {c + e} beyond tolerance"
        )
    if s == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return (p * c / s, p * e / s, i * c / s, i * e / s)
