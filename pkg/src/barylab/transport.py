"""Exact Kantorovich transport: cost matrices, c-transforms, dual solves.

The cost convention throughout is c(x, y) = d(x, y)^2 / 2, and the reported
squared distance is the value of the dual program under that cost; the
distance itself is its square root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import eye as speye
from scipy.sparse import kron, vstack

from .spaces import DiscreteSpace, Measure, SecondOrderLaw

FEAS_TOL = 1e-9
GAP_TOL = 1e-9
TIE_TOL = 1e-12


class SolverError(RuntimeError):
    """The LP backend failed to produce an optimal transport solution."""


@dataclass(frozen=True, eq=False)
class CostMatrix:
    space: DiscreteSpace
    entries: np.ndarray


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """Dual pair (phi, psi) with phi = psi^c.

    ``phi`` integrates against the source/target measure rho, ``psi``
    against the other marginal; feasibility means
    phi(x) + psi(y) <= c(x, y) everywhere, up to ``FEAS_TOL``.
    """

    phi: np.ndarray
    psi: np.ndarray
    normalization_tag: str = "none"

    def __post_init__(self):
        if self.normalization_tag not in ("none", "zero_mean_phi", "centered_at_base"):
            raise ValueError(f"unknown normalization tag {self.normalization_tag!r}")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    coupling: np.ndarray
    source: Measure
    target: Measure
    total_cost: float


@dataclass(frozen=True, eq=False)
class W2Result:
    """Outcome of an exact quadratic-cost transport solve.

    ``value`` is the optimal cost under c = d^2/2 (the squared transport
    distance in this normalization); ``w2 = sqrt(value)``.
    """

    value: float
    w2: float
    plan: TransportPlan
    potentials: PotentialPair
    gap: float


def cost_matrix(space: DiscreteSpace) -> CostMatrix:
    """Half squared distance matrix, cached on the space."""
    cache = space.cache()
    if "cost" not in cache:
        entries = 0.5 * space.dist ** 2
        entries.setflags(write=False)
        cache["cost"] = CostMatrix(space, entries)
    return cache["cost"]


def c_transform(space: DiscreteSpace, psi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hard c-transform: phi(x) = min_y [c(x,y) - psi(y)].

    Returns (phi, argmin, ties): one minimizing index per point with
    lowest-index tie-breaking, and a flag marking points where the minimum
    is attained at two or more candidates within ``TIE_TOL``.
    """
    psi = np.asarray(psi, dtype=float)
    c = cost_matrix(space).entries
    scores = c - psi[None, :]
    phi = scores.min(axis=1)
    arg = scores.argmin(axis=1)
    ties = (scores <= phi[:, None] + TIE_TOL).sum(axis=1) > 1
    return phi, arg, ties


def _marginal_constraints(n_mu: int, n_rho: int):
    ones_mu = np.ones((1, n_mu))
    ones_rho = np.ones((1, n_rho))
    rows = kron(speye(n_mu), ones_rho, format="csr")   # row sums -> mu
    cols = kron(ones_mu, speye(n_rho), format="csr")   # column sums -> rho
    return vstack([rows, cols], format="csr")


def solve_w2(mu: Measure, rho: Measure) -> W2Result:
    """Exact quadratic-cost transport between two measures on one space.

    The primal coupling comes from an exact LP solve; dual potentials are
    read off the LP's equality multipliers and tightened by a double
    c-transform pass so the dual constraint holds to machine accuracy.
    ``phi`` is normalized to have rho-mean zero.
    """
    if mu.space is not rho.space:
        raise ValueError("mu and rho must live on the same space")
    space = mu.space
    n = space.point_count
    c = cost_matrix(space).entries
    a_eq = _marginal_constraints(n, n)
    b_eq = np.concatenate([mu.weights, rho.weights])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs-ds")
    if not res.success:
        raise SolverError(f"transport LP failed: {res.message}")
    coupling = res.x.reshape(n, n)
    value = float(np.sum(coupling * c))

    psi_raw = np.asarray(res.eqlin.marginals[:n], dtype=float)   # mu side
    phi, _, _ = c_transform(space, psi_raw)
    psi, _, _ = c_transform(space, phi)
    shift = float(np.dot(rho.weights, phi))
    phi = phi - shift
    psi = psi + shift
    potentials = PotentialPair(phi, psi, "zero_mean_phi")
    dual_value = float(np.dot(rho.weights, phi) + np.dot(mu.weights, psi))
    gap = value - dual_value
    if gap > 1e-7 or gap < -1e-7:
        raise SolverError(f"duality gap {gap:.3e} out of tolerance")
    plan = TransportPlan(coupling, mu, rho, value)
    return W2Result(value, float(np.sqrt(max(value, 0.0))), plan, potentials, gap)


def w2_distance(mu: Measure, rho: Measure) -> float:
    return solve_w2(mu, rho).w2


def check_potential_feasibility(space: DiscreteSpace, pair: PotentialPair,
                                tol: float = FEAS_TOL) -> float:
    """Largest violation of phi(x) + psi(y) <= c(x, y); <= tol means feasible."""
    c = cost_matrix(space).entries
    return float((pair.phi[:, None] + pair.psi[None, :] - c).max())


def duality_gap(mu: Measure, rho: Measure, potentials: PotentialPair,
                value: float | None = None) -> float:
    """Optimal value minus the dual objective of a feasible pair.

    Nonnegative up to solver tolerance; zero exactly at dual optimality.
    """
    viol = check_potential_feasibility(mu.space, potentials)
    if viol > FEAS_TOL:
        raise ValueError(f"potentials infeasible by {viol:.3e}")
    if value is None:
        value = solve_w2(mu, rho).value
    dual = float(np.dot(rho.weights, potentials.phi)
                 + np.dot(mu.weights, potentials.psi))
    return value - dual


def solve_discrete_ot(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Generic exact transport LP for arbitrary (rectangular) cost arrays.

    Returns (value, coupling).  Used for first-order distances between
    second-order laws, where the ground cost is itself a transport distance.
    """
    n, m = cost.shape
    a_eq = _marginal_constraints(n, m)
    b_eq = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs-ds")
    if not res.success:
        raise SolverError(f"transport LP failed: {res.message}")
    coupling = res.x.reshape(n, m)
    return float(np.sum(coupling * cost)), coupling


def ground_distance_matrix(atoms_p, atoms_q) -> np.ndarray:
    """Pairwise transport distances between two lists of measures."""
    out = np.empty((len(atoms_p), len(atoms_q)))
    for i, p in enumerate(atoms_p):
        for j, q in enumerate(atoms_q):
            out[i, j] = solve_w2(p, q).w2
    return out


def w1_between_laws(p: SecondOrderLaw, q: SecondOrderLaw,
                    ground: np.ndarray | None = None) -> float:
    """First-order transport distance between two finite laws of measures.

    The ground metric is the quadratic transport distance between atoms; a
    precomputed ground matrix can be passed to avoid repeated solves.
    """
    if p.space is not q.space:
        raise ValueError("laws must share one space")
    if ground is None:
        ground = ground_distance_matrix(p.atoms, q.atoms)
    value, _ = solve_discrete_ot(ground, p.weights, q.weights)
    return value


def interpolation_map(space: DiscreteSpace, psi0, psi1, s: float):
    """Transform of the linear dual interpolation psi_s = psi0 + s (psi1 - psi0).

    Returns a dict with the map ``T_s`` (argmin indices, lowest index on
    ties), the transformed potential ``phi_s`` and the tie flags.
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError("s must lie in [0, 1]")
    psi0 = np.asarray(psi0, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    psi_s = psi0 + s * (psi1 - psi0)
    phi_s, arg, ties = c_transform(space, psi_s)
    return {"T_s": arg, "phi_s": phi_s, "psi_s": psi_s, "tie_flags": ties}


def plan_to_json(result: W2Result) -> dict:
    """Plan/potential dump: sparse coupling triplets plus dual data."""
    ii, jj = np.nonzero(result.plan.coupling)
    return {
        "value": result.value,
        "w2": result.w2,
        "coupling": [[int(i), int(j), float(result.plan.coupling[i, j])]
                     for i, j in zip(ii, jj)],
        "phi": [float(x) for x in result.potentials.phi],
        "psi": [float(x) for x in result.potentials.psi],
        "gap": result.gap,
    }


def save_plan(result: W2Result, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_json(result), fh)
