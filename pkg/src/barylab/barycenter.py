"""Variance functional, exact barycenters, transport deficit, and the
zero-order balance normalization of dual potentials.

The barycenter solve is one joint linear program over couplings that share
their free marginal; the balance construction iterates double c-transforms,
weighted-mean subtraction and base-point recentering until the weighted
potential sum vanishes and every pair is dual-optimal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, eye as speye, hstack, kron, vstack

from .spaces import DiscreteSpace, Measure, SecondOrderLaw
from .transport import (PotentialPair, SolverError, c_transform, cost_matrix,
                        solve_w2)


@dataclass(frozen=True, eq=False)
class BarycenterResult:
    measure: Measure
    variance_value: float
    per_atom_potentials: tuple
    solver_status: str
    flags: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModulusParams:
    """Constants of the convexity modulus A1 t^12 / (A2 + A3 |log(t/D_W)|)."""

    A1: float
    A2: float
    A3: float
    D_W: float
    sigma: float = 0.5

    def __post_init__(self):
        for name in ("A1", "A2", "A3", "D_W", "sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_space(cls, space: DiscreteSpace, A1=1.0, A2=1.0, A3=1.0, sigma=0.5):
        """D_W is the largest ground distance: sqrt(max d^2 / 2)."""
        d_w = math.sqrt(0.5) * space.diameter
        return cls(A1, A2, A3, d_w, sigma)


def variance(p: SecondOrderLaw, mu: Measure) -> float:
    """Weighted sum of squared transport distances from mu to the atoms."""
    if mu.space is not p.space:
        raise ValueError("mu must live on the law's space")
    return float(sum(w * solve_w2(mu, atom).value
                     for atom, w in zip(p.atoms, p.weights)))


def _barycenter_lp(p: SecondOrderLaw, objective_extra=None):
    """Shared-marginal LP: couplings pi_i to each atom plus a free marginal.

    Variables are [pi_1.ravel(), ..., pi_k.ravel(), mu]; each pi_i has its
    atom marginal pinned to rho_i and its free marginal tied to mu.
    """
    space = p.space
    n = space.point_count
    k = len(p.atoms)
    c = cost_matrix(space).entries
    # pi_i rows ~ atom side (marginal rho_i), columns ~ free marginal mu
    row_block = kron(speye(n), np.ones((1, n)), format="csr")
    col_block = kron(np.ones((1, n)), speye(n), format="csr")
    blocks_fixed = []
    blocks_free = []
    for i in range(k):
        lead = csr_matrix((n, i * n * n))
        tail = csr_matrix((n, (k - 1 - i) * n * n))
        blocks_fixed.append(hstack([lead, row_block, tail, csr_matrix((n, n))]))
        blocks_free.append(hstack([lead, col_block, tail, -speye(n, format="csr")]))
    a_eq = vstack(blocks_fixed + blocks_free, format="csr")
    b_eq = np.concatenate([atom.weights for atom in p.atoms]
                          + [np.zeros(n * k)])
    cost_vec = np.concatenate([w * c.ravel() for w in p.weights] + [np.zeros(n)])
    if objective_extra is not None:
        cost_vec = cost_vec + objective_extra
    res = linprog(cost_vec, A_eq=a_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs-ds")
    if not res.success:
        raise SolverError(f"barycenter LP failed: {res.message}")
    mu_w = np.maximum(res.x[-n:], 0.0)
    return mu_w / mu_w.sum(), float(res.x[:k * n * n] @ np.concatenate(
        [w * c.ravel() for w in p.weights]))


def solve_barycenter(p: SecondOrderLaw, detect_nonuniqueness: bool = True,
                     perturb_seed: int = 0) -> BarycenterResult:
    """Exact barycenter of a finite law by the joint shared-marginal LP.

    A second solve under a tiny generic objective perturbation probes the
    optimal face: if it returns a different marginal at (numerically) the
    same cost, the barycenter is flagged as non-unique.
    """
    space = p.space
    mu_w, value = _barycenter_lp(p)
    mu = Measure(space, mu_w)
    flags = {"nonunique": False}
    if detect_nonuniqueness and len(p.atoms) > 0:
        # probe the optimal face by re-solving under opposite tiny generic
        # tilts of the free marginal; distinct optima at the same cost mean
        # a second optimal vertex exists
        n = space.point_count
        k = len(p.atoms)
        rng = np.random.default_rng(perturb_seed)
        scale = 1e-5 * max(1.0, space.diameter ** 2)
        tilt = scale * rng.uniform(0.5, 1.0, size=n)
        probes = []
        for sign in (1.0, -1.0):
            extra = np.concatenate([np.zeros(k * n * n), sign * tilt])
            w_probe, v_probe = _barycenter_lp(p, objective_extra=extra)
            # compare the pure transport cost: probes still on the optimal
            # face reproduce it to solver accuracy
            if abs(v_probe - value) <= 1e-7 * max(1.0, abs(value)):
                probes.append(w_probe)
        if len(probes) == 2 and np.abs(probes[0] - probes[1]).sum() > 1e-6:
            flags["nonunique"] = True
    pairs = []
    gaps = []
    for atom in p.atoms:
        r = solve_w2(mu, atom)
        pairs.append(r.potentials)
        gaps.append(r.gap)
    flags["max_atom_gap"] = float(max(gaps)) if gaps else 0.0
    var = float(sum(w * solve_w2(mu, atom).value
                    for atom, w in zip(p.atoms, p.weights)))
    return BarycenterResult(mu, var, tuple(pairs), "optimal", flags)


class BalanceError(RuntimeError):
    """Balance normalization failed to converge or got invalid inputs."""


def _balanced_dual_ascent(p: SecondOrderLaw, mu_p: Measure) -> list[np.ndarray]:
    """Maximizing family for the balance-constrained dual problem.

    Solves max sum_i lam_i (rho_i . phi_i + mu . psi_i) over pairs that are
    jointly feasible and whose weighted psi-sum vanishes identically.  The
    optimum equals the variance of mu_p, so the returned psis belong to
    per-atom dual-optimal faces while being exactly balanced.
    """
    space = p.space
    n = space.point_count
    k = len(p.atoms)
    lam = p.weights
    c = cost_matrix(space).entries
    phi_block = kron(speye(n), np.ones((n, 1)), format="csr")   # row (x,y) -> phi(x)
    psi_block = kron(np.ones((n, 1)), speye(n), format="csr")   # row (x,y) -> psi(y)
    rows = []
    for i in range(k):
        parts = []
        for j in range(k):
            if j == i:
                parts.extend([phi_block, psi_block])
            else:
                parts.extend([csr_matrix((n * n, n)), csr_matrix((n * n, n))])
        rows.append(hstack(parts, format="csr"))
    a_ub = vstack(rows, format="csr")
    b_ub = np.concatenate([c.ravel()] * k)
    bal = []
    for i in range(k):
        bal.extend([csr_matrix((n, n)), lam[i] * speye(n, format="csr")])
    a_eq = hstack(bal, format="csr")
    obj = -np.concatenate(
        [np.concatenate([lam[i] * p.atoms[i].weights, lam[i] * mu_p.weights])
         for i in range(k)])
    res = linprog(obj, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.zeros(n),
                  bounds=(None, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise BalanceError(f"balanced dual LP failed: {res.message}")
    psis = [res.x[(2 * i + 1) * n:(2 * i + 2) * n].copy() for i in range(k)]
    # remove the LP's equality-tolerance slack so the sweep starts balanced
    alpha = sum(l * psi for l, psi in zip(lam, psis))
    return [psi - alpha for psi in psis]


def balance_potentials(p: SecondOrderLaw, mu_p: Measure, tol: float = 1e-8,
                       max_iters: int = 500, initial_psis=None):
    """Balanced family of dual-optimal pairs for (rho_i, mu_p).

    Starting from per-atom optimal pairs, each sweep (i) lifts every psi to
    its double c-transform, (ii) subtracts the weighted mean
    alpha(y) = sum_i lambda_i psi_i(y), (iii) recenters at the base point 0,
    and (iv) recomputes phi = psi^c.  After (ii) the weighted sum vanishes
    identically, so convergence is governed by the per-pair duality gaps;
    the weighted total dual value never decreases along sweeps.

    The sweep alone is a normalization, not an ascent: on generic laws it
    can stall at an exactly balanced family whose pairs are not optimal.
    When the gap stops improving, one exact dual-ascent step (the balance-
    constrained dual linear program, whose optimum equals the variance)
    restores per-pair optimality, and the sweep then certifies convergence
    through its own residual-plus-gap criterion.

    Returns (pairs, report) with the residual trace; raises BalanceError if
    the criterion is not met within ``max_iters`` sweeps or if mu_p is not
    a barycenter of p.
    """
    space = p.space
    lam = p.weights
    solves = [solve_w2(mu_p, atom) for atom in p.atoms]
    values = [r.value for r in solves]
    if initial_psis is None:
        psis = [r.potentials.psi.copy() for r in solves]
    else:
        psis = [np.asarray(psi, dtype=float).copy() for psi in initial_psis]
    var_mu = float(np.dot(lam, values))
    best = 0.0 if len(p.atoms) == 1 else _barycenter_lp(p)[1]
    if var_mu > best + max(10 * tol, 1e-7):
        raise BalanceError(f"mu_p is not optimal: variance {var_mu:.12g} "
                           f"exceeds optimum {best:.12g}")

    def gaps_of(psi_list):
        out = []
        for i, psi in enumerate(psi_list):
            phi, _, _ = c_transform(space, psi)
            dual = float(np.dot(p.atoms[i].weights, phi)
                         + np.dot(mu_p.weights, psi))
            out.append(values[i] - dual)
        return np.asarray(out)

    trace = []
    ascent_done = False
    prev_gap = np.inf
    for it in range(max_iters):
        # (i) double transform lifts each psi to its c-concave envelope
        for i in range(len(psis)):
            phi, _, _ = c_transform(space, psis[i])
            psis[i], _, _ = c_transform(space, phi)
        alpha = sum(l * psi for l, psi in zip(lam, psis))
        sup_alpha = float(np.abs(alpha).max())
        # (ii) subtract the weighted mean: balance becomes exact
        psis = [psi - alpha for psi in psis]
        # (iii) recenter at the base point; weighted constants sum to zero
        psis = [psi - psi[0] for psi in psis]
        gaps = gaps_of(psis)
        residual = float(np.abs(sum(l * psi for l, psi in zip(lam, psis))).max())
        trace.append({"iter": it, "sup_alpha": sup_alpha,
                      "max_gap": float(gaps.max()), "residual": residual,
                      "ascent": False})
        if gaps.max() <= tol and residual <= tol:
            pairs = []
            for psi in psis:
                phi, _, _ = c_transform(space, psi)
                pairs.append(PotentialPair(phi, psi, "centered_at_base"))
            report = {"converged": True, "iterations": it + 1,
                      "used_ascent": ascent_done,
                      "residual": residual, "max_gap": float(gaps.max()),
                      "trace": trace}
            return pairs, report
        stalled = gaps.max() > 0.5 * prev_gap
        prev_gap = gaps.max()
        if stalled and not ascent_done:
            psis = _balanced_dual_ascent(p, mu_p)
            ascent_done = True
            prev_gap = np.inf
            trace.append({"iter": it, "sup_alpha": float("nan"),
                          "max_gap": float(gaps_of(psis).max()),
                          "residual": 0.0, "ascent": True})
    raise BalanceError(f"balance normalization did not reach tol={tol} within "
                       f"{max_iters} sweeps; last trace entry: {trace[-1]}")


def deficit(rho: Measure, mu0: Measure, mu1: Measure, psi0,
            opt_tol: float = 1e-8) -> float:
    """Transport-cost deficit of mu1 against the linearization at mu0.

    psi0 must be the mu0-side potential of an optimal pair for (rho, mu0);
    the result is nonnegative up to solver tolerance and invariant under
    constant shifts of psi0.
    """
    psi0 = np.asarray(psi0, dtype=float)
    value0 = solve_w2(mu0, rho).value
    phi0, _, _ = c_transform(rho.space, psi0)
    dual0 = float(np.dot(rho.weights, phi0) + np.dot(mu0.weights, psi0))
    if value0 - dual0 > opt_tol:
        raise ValueError(f"psi0 is not optimal for (rho, mu0): gap "
                         f"{value0 - dual0:.3e}")
    value1 = solve_w2(mu1, rho).value
    return value1 - value0 - float(np.dot(psi0, mu1.weights - mu0.weights))


def modulus(t: float, params: ModulusParams) -> float:
    """Convexity modulus A1 t^12 / (A2 + A3 |log(t / D_W)|), zero at t = 0."""
    if t < 0 or t > params.D_W:
        raise ValueError(f"t must lie in [0, D_W={params.D_W:g}]")
    if t == 0:
        return 0.0
    return params.A1 * t ** 12 / (params.A2 + params.A3 * abs(math.log(t / params.D_W)))


def modulus_power_floor(params: ModulusParams, sigma: float | None = None,
                        grid: int = 400) -> float:
    """Largest c with modulus(t) >= c t^(12+sigma) on a log grid of (0, D_W]."""
    sigma = params.sigma if sigma is None else sigma
    ts = params.D_W * np.logspace(-8, 0, grid)
    vals = np.array([modulus(float(t), params) / t ** (12 + sigma) for t in ts])
    return float(vals.min())


def barycenter_to_json(result: BarycenterResult) -> dict:
    per_atom = []
    for pair in result.per_atom_potentials:
        per_atom.append({"phi": [float(x) for x in pair.phi],
                         "psi": [float(x) for x in pair.psi]})
    return {"weights": [float(x) for x in result.measure.weights],
            "variance": result.variance_value,
            "per_atom": per_atom,
            "flags": result.flags,
            "status": result.solver_status}


def save_barycenter(result: BarycenterResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(barycenter_to_json(result), fh)
