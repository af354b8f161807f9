"""Experiment drivers: deficit scans, dual-interpolation probes, potential
and map stability probes, barycenter stability scans, covering nets for the
space of measures, and empirical-barycenter rate experiments.

Every scan is driven by one master seed.  Per-job generators are spawned
from it with SeedSequence, so a scan run on one worker or many produces
bit-identical rows; reports carry the exact configuration and its hash.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import barycenter as bary
from .spaces import (DiscreteSpace, GoodMeasureParams, Measure,
                     SecondOrderLaw, dirac, make_measure,
                     sample_good_measure)
from .transport import (c_transform, ground_distance_matrix,
                        interpolation_map, solve_discrete_ot, solve_w2)

NOISE_FLOOR = 1e-6


class LabError(RuntimeError):
    """Experiment-level failure: degenerate inputs or exceeded caps."""


# ---------------------------------------------------------------------------
# reports and small helpers

def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"),
                       default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class ScanReport:
    experiment: str
    space_label: str
    seed: int
    columns: tuple
    rows: list
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v
                                 for v in row])

    def write_sidecar(self, path: str) -> None:
        doc = {"experiment": self.experiment, "space": self.space_label,
               "seed": self.seed, "config": self.config,
               "config_hash": self.hash, "fits": self.fits,
               "flags": self.flags}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, default=float)


def split_seeds(seed: int, n: int):
    return np.random.SeedSequence(seed).spawn(n)


def run_jobs(worker, tasks, jobs: int = 1):
    """Run indexed tasks, serially or on a thread pool; results keep order."""
    if jobs <= 1:
        return [worker(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def fit_loglog(xs, ys, floor: float = NOISE_FLOOR):
    """Least-squares slope/intercept of log y against log x.

    Rows where either quantity sits at or below the solver noise floor are
    excluded: below tolerance their logarithms carry no information.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > floor) & (ys > floor)
    if keep.sum() < 2:
        return {"slope": float("nan"), "intercept": float("nan"),
                "n_used": int(keep.sum()), "residual": float("nan")}
    lx, ly = np.log(xs[keep]), np.log(ys[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return {"slope": float(slope), "intercept": float(intercept),
            "n_used": int(keep.sum()), "residual": resid}


# ---------------------------------------------------------------------------
# 1-D stencils (interval and circle grids)

def grid_gradient(space: DiscreteSpace, f) -> np.ndarray:
    """Finite-difference gradient along a 1-D model space.

    Central differences with geodesic spacings; one-sided at interval
    endpoints; wrap-around on circles.  Raises for spaces without a
    declared 1-D structure.
    """
    f = np.asarray(f, dtype=float)
    n = space.point_count
    g = np.empty(n)
    if space.kind == "interval":
        for i in range(n):
            lo, hi = max(i - 1, 0), min(i + 1, n - 1)
            g[i] = (f[hi] - f[lo]) / (space.dist[lo, i] + space.dist[i, hi])
        return g
    if space.kind == "circle":
        for i in range(n):
            lo, hi = (i - 1) % n, (i + 1) % n
            g[i] = (f[hi] - f[lo]) / (space.dist[lo, i] + space.dist[i, hi])
        return g
    raise LabError(f"no gradient stencil for space kind {space.kind!r}")


# ---------------------------------------------------------------------------
# perturbation families

def perturb_mass_shift(mu: Measure, scale: float, site_from: int,
                       site_to: int) -> Measure:
    """Move a ``scale`` fraction of the donor site's mass to the receiver."""
    w = mu.weights.copy()
    delta = scale * w[site_from]
    w[site_from] -= delta
    w[site_to] += delta
    return Measure(mu.space, w)


def perturb_push_forward(mu: Measure, scale: float) -> Measure:
    """Push the measure ``round(scale * n)`` grid cells along the space."""
    n = mu.space.point_count
    k = max(1, int(round(scale * n)))
    w = mu.weights
    if mu.space.kind == "circle":
        return Measure(mu.space, np.roll(w, k))
    out = np.zeros(n)
    idx = np.minimum(np.arange(n) + k, n - 1)
    np.add.at(out, idx, w)
    return Measure(mu.space, out)


def perturb_density_tilt(mu: Measure, scale: float, field_values) -> Measure:
    """Reweight by 1 + scale * field (field bounded by 1 in sup norm)."""
    tilt = 1.0 + scale * np.clip(np.asarray(field_values, dtype=float), -1, 1)
    return make_measure(mu.space, mu.weights * tilt)


def apply_family(mu: Measure, family: str, scale: float, rng,
                 params: dict | None = None) -> Measure:
    params = params or {}
    if family == "mass_shift":
        sup = mu.support
        a = params.get("site_from", int(sup[0]))
        b = params.get("site_to", int(sup[-1]))
        return perturb_mass_shift(mu, scale, a, b)
    if family == "push_forward":
        return perturb_push_forward(mu, scale)
    if family == "density_tilt":
        f = params.get("field")
        if f is None:
            f = rng.uniform(-1, 1, mu.space.point_count)
        return perturb_density_tilt(mu, scale, f)
    raise LabError(f"unknown perturbation family {family!r}")


# ---------------------------------------------------------------------------
# deficit scan (strong-convexity modulus probe)

def deficit_scan(space: DiscreteSpace, rho: Measure, mu0: Measure,
                 family: str, scales, seed: int = 0, jobs: int = 1,
                 family_params: dict | None = None) -> ScanReport:
    """Scan the transport deficit against the distance between perturbations.

    For each scale, perturbs mu0 into mu1, computes the deficit of mu1
    against the linearization at mu0 and the transport distance R between
    them, then fits a log-log exponent and the largest lower-envelope
    constant A1 (with A2 = A3 = 1) such that D >= modulus(R) on every row
    above the noise floor.
    """
    psi0 = solve_w2(mu0, rho).potentials.psi
    d_w = math.sqrt(0.5) * space.diameter
    seeds = split_seeds(seed, len(scales))
    f_params = dict(family_params or {})
    if family == "density_tilt" and "field" not in f_params:
        f_params["field"] = np.random.default_rng(
            split_seeds(seed, 1)[0]).uniform(-1, 1, space.point_count)

    def one(task):
        i, scale = task
        rng = np.random.default_rng(seeds[i])
        mu1 = apply_family(mu0, family, scale, rng, f_params)
        r = solve_w2(mu0, mu1).w2
        if scale > 0 and r == 0.0:
            raise LabError(f"degenerate perturbation: scale {scale} moved "
                           "nothing")
        d = bary.deficit(rho, mu0, mu1, psi0)
        return (float(scale), float(r), float(d))

    rows = run_jobs(one, list(enumerate(scales)), jobs)
    scales_v = np.array([r[0] for r in rows])
    rs = np.array([r[1] for r in rows])
    ds = np.array([r[2] for r in rows])
    nonneg = bool((ds >= -1e-8).all())
    fit = fit_loglog(rs, ds)
    keep = (rs > NOISE_FLOOR) & (ds > NOISE_FLOOR)
    if keep.any():
        denom = rs[keep] ** 12
        a1 = float((ds[keep] * (1.0 + np.abs(np.log(rs[keep] / d_w))) / denom).min())
    else:
        a1 = float("nan")
    envelope_ok = True
    if keep.any() and np.isfinite(a1):
        params = bary.ModulusParams(max(a1, 1e-300), 1.0, 1.0, d_w)
        envelope_ok = all(ds[i] >= bary.modulus(min(rs[i], d_w), params) - 1e-12
                          for i in range(len(rows)) if keep[i])
    return ScanReport(
        "deficit_scan", space.label, seed,
        ("scale", "R", "D"), rows,
        fits={"loglog": fit, "A1_fit": a1, "D_W": d_w,
              "n_rows_used": int(keep.sum())},
        flags={"all_nonneg": nonneg, "a1_positive": bool(np.isfinite(a1) and a1 > 0),
               "envelope_ok": envelope_ok},
        config={"family": family, "scales": list(map(float, scales)),
                "seed": seed, "space": space.label})


# ---------------------------------------------------------------------------
# dual interpolation probe (integrated centered oscillation)

def g_probe(space: DiscreteSpace, rho: Measure, mu0: Measure, mu1: Measure,
            psi0, psi1, s_grid, norm_tol: float = 1e-8) -> ScanReport:
    """Probe the centered oscillation of v along the interpolated maps.

    Computes g(s) = rho-average of |v(T_s(x)) - mean(v o T_s)| on the grid,
    its trapezoid integral against the sixth power of the transport
    distance between mu0 and mu1, and verifies the integrated identity
    that the s-integral of the centered composition equals phi0 - phi1
    pointwise on the support of rho.
    """
    psi0 = np.asarray(psi0, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    phi0, _, _ = c_transform(space, psi0)
    phi1, _, _ = c_transform(space, psi1)
    for phi in (phi0, phi1):
        if abs(float(np.dot(rho.weights, phi))) > norm_tol:
            raise LabError("potentials are not zero-mean against rho; "
                           "normalize before probing")
    v = psi1 - psi0
    s_grid = np.asarray(s_grid, dtype=float)
    sup = rho.support
    w_sup = rho.weights[sup]
    comp = np.empty((len(s_grid), sup.size))
    gs = np.empty(len(s_grid))
    ties_any = False
    for j, s in enumerate(s_grid):
        res = interpolation_map(space, psi0, psi1, float(s))
        vts = v[res["T_s"]][sup]
        mean = float(np.dot(w_sup, vts))
        comp[j] = vts - mean
        gs[j] = float(np.dot(w_sup, np.abs(vts - mean)))
        ties_any |= bool(res["tie_flags"][sup].any())
    integral_g = float(np.trapezoid(gs, s_grid))
    w2_01 = solve_w2(mu0, mu1).w2
    w26 = w2_01 ** 6
    c2_hat = integral_g / w26 if w26 > 0 else float("nan")
    # integrated identity: int_0^1 centered composition ds = phi0 - phi1
    ident = np.trapezoid(comp, s_grid, axis=0)
    target = (phi0 - phi1)[sup]
    ident_err = float(np.abs(ident - target).max())
    rows = [(float(s), float(g)) for s, g in zip(s_grid, gs)]
    return ScanReport(
        "g_probe", space.label, 0, ("s", "g"), rows,
        fits={"integral_g": integral_g, "w2": w2_01, "w2_pow6": w26,
              "C2_hat": c2_hat, "identity_max_err": ident_err,
              "s_grid_size": len(s_grid)},
        flags={"ties_seen": ties_any,
               "c2_positive": bool(w26 > 0 and c2_hat > 0)},
        config={"s_grid_size": len(s_grid), "space": space.label})


# ---------------------------------------------------------------------------
# stability probes on 1-D model spaces

def potential_stability_probe(space: DiscreteSpace, rho: Measure, pairs,
                              seed: int = 0, potentials=None,
                              norm_tol: float = 1e-8) -> ScanReport:
    """Gradient-vs-value stability of dual potentials across measure pairs.

    For each pair computes L (rho-weighted squared gradient difference of
    the potentials, finite-difference stencil) and Rq (cube root of the
    rho-weighted squared value difference) and reports their largest
    ratio.  Only finiteness is asserted; the ratio distribution itself is
    the scan's output.
    """
    rows = []
    for i, (mu0, mu1) in enumerate(pairs):
        if potentials is not None:
            phi0, phi1 = (np.asarray(p, dtype=float) for p in potentials[i])
        else:
            phi0 = solve_w2(mu0, rho).potentials.phi
            phi1 = solve_w2(mu1, rho).potentials.phi
        for phi in (phi0, phi1):
            if abs(float(np.dot(rho.weights, phi))) > norm_tol:
                raise LabError("pair potentials must be zero-mean against rho")
        dgrad = grid_gradient(space, phi1) - grid_gradient(space, phi0)
        l2 = float(np.dot(rho.weights, dgrad ** 2))
        val = float(np.dot(rho.weights, (phi1 - phi0) ** 2)) ** (1.0 / 3.0)
        if val <= NOISE_FLOOR ** 2:
            continue
        rows.append((i, l2, val, l2 / val))
    ratios = [r[3] for r in rows]
    return ScanReport(
        "potential_stability", space.label, seed,
        ("pair", "L", "Rq", "ratio"), rows,
        fits={"C_hat": float(max(ratios)) if ratios else float("nan"),
              "n_pairs": len(rows)},
        flags={"all_finite": bool(all(np.isfinite(r) for r in ratios))},
        config={"n_pairs": len(pairs), "seed": seed, "space": space.label})


def map_stability_probe(space: DiscreteSpace, rho: Measure, pairs,
                        seed: int = 0, min_grad_gap: float | None = None
                        ) -> ScanReport:
    """Displacement of optimal maps against the gradient gap of potentials.

    Rowwise checks d(T1(x), T0(x)) <= C |grad phi1(x) - grad phi0(x)| over
    the support of rho, fitting C by least squares through the origin
    (quantization-robust) and reporting the worst ratio.  Rows with a
    gradient gap below ``min_grad_gap`` are excluded: below a few grid
    cells the displacement is quantized and the ratio meaningless.
    """
    n = space.point_count
    spacing = space.diameter / max(n - 1, 1)
    if min_grad_gap is None:
        min_grad_gap = 6.0 * spacing
    rows = []
    num = den = 0.0
    worst = 0.0
    for i, (mu0, mu1) in enumerate(pairs):
        r0 = solve_w2(mu0, rho)
        r1 = solve_w2(mu1, rho)
        t0 = interpolation_map(space, r0.potentials.psi, r1.potentials.psi, 0.0)["T_s"]
        t1 = interpolation_map(space, r0.potentials.psi, r1.potentials.psi, 1.0)["T_s"]
        dgrad = np.abs(grid_gradient(space, r1.potentials.phi)
                       - grid_gradient(space, r0.potentials.phi))
        disp = space.dist[t0, t1]
        sup = rho.support
        valid = sup[dgrad[sup] >= min_grad_gap]
        if valid.size == 0:
            continue
        w = rho.weights[valid]
        num += float(np.dot(w, disp[valid] * dgrad[valid]))
        den += float(np.dot(w, dgrad[valid] ** 2))
        ratio = float((disp[valid] / dgrad[valid]).max())
        worst = max(worst, ratio)
        rows.append((i, int(valid.size), ratio))
    c_fit = num / den if den > 0 else float("nan")
    return ScanReport(
        "map_stability", space.label, seed,
        ("pair", "n_valid", "max_ratio"), rows,
        fits={"C_exp_hat": float(c_fit), "max_ratio": worst,
              "min_grad_gap": float(min_grad_gap)},
        flags={"finite": bool(np.isfinite(c_fit))},
        config={"n_pairs": len(pairs), "seed": seed, "space": space.label})


# ---------------------------------------------------------------------------
# barycenter stability scan

def _perturb_law(p: SecondOrderLaw, family: str, scale: float, rng,
                 good_params: GoodMeasureParams | None) -> SecondOrderLaw:
    space = p.space
    if family == "weight_jitter":
        u = rng.uniform(-1.0, 1.0, len(p.atoms))
        w = p.weights * (1.0 + scale * u)
        w = np.maximum(w, 1e-12)
        return SecondOrderLaw(p.atoms, w / w.sum())
    if family == "atom_jitter":
        atoms = []
        for atom in p.atoms:
            f = rng.uniform(-1.0, 1.0, space.point_count)
            atoms.append(perturb_density_tilt(atom, min(scale, 0.999), f))
        return SecondOrderLaw(tuple(atoms), p.weights)
    if family == "atom_addition":
        gp = good_params or GoodMeasureParams(0.5, 2.0)
        extra = sample_good_measure(space, gp,
                                    rng_seed=int(rng.integers(2 ** 31)))
        atoms = p.atoms + (extra,)
        w = np.concatenate([(1.0 - scale) * p.weights, [scale]])
        return SecondOrderLaw(atoms, w / w.sum())
    if family == "mixed":
        q = _perturb_law(p, "weight_jitter", scale, rng, good_params)
        return _perturb_law(q, "atom_jitter", scale, rng, good_params)
    raise LabError(f"unknown law perturbation family {family!r}")


def barycenter_stability_scan(p: SecondOrderLaw, family: str, scales,
                              sigma: float = 0.5, seed: int = 0,
                              jobs: int = 1,
                              good_params: GoodMeasureParams | None = None
                              ) -> ScanReport:
    """Scan barycenter displacement against the distance between laws.

    For each scale builds a perturbed law Q, solves both barycenters and
    records x = W1(P, Q) (first-order distance with transport ground
    metric) and y = distance between the barycenters.  Fits the smallest
    constant with y^(12+sigma) <= C x on all rows and the log-log slope of
    y against x; the slope must clear 1/(12+sigma) minus a small margin
    for the stability estimate to hold with some constant.
    """
    res_p = bary.solve_barycenter(p, detect_nonuniqueness=False)
    mu_p = res_p.measure
    q_exp = 12.0 + sigma
    seeds = split_seeds(seed, len(scales))

    def one(task):
        i, scale = task
        rng = np.random.default_rng(seeds[i])
        q = _perturb_law(p, family, float(scale), rng, good_params)
        mu_q = bary.solve_barycenter(q, detect_nonuniqueness=False).measure
        ground = ground_distance_matrix(p.atoms, q.atoms)
        x, _ = solve_discrete_ot(ground, p.weights, q.weights)
        y = solve_w2(mu_p, mu_q).w2
        return (float(scale), float(x), float(y))

    rows = run_jobs(one, list(enumerate(scales)), jobs)
    xs = np.array([r[1] for r in rows])
    ys = np.array([r[2] for r in rows])
    keep = xs > 1e-12
    ypow = ys[keep] ** q_exp
    c_hat = float((ypow / xs[keep]).max()) if keep.any() else float("nan")
    fit = fit_loglog(xs, ys)
    alpha = fit["slope"]
    alpha_floor = 1.0 / q_exp - 0.05
    return ScanReport(
        "barycenter_stability", p.space.label, seed,
        ("scale", "w1", "w2_bary"), rows,
        fits={"loglog": fit, "alpha": alpha, "alpha_floor": alpha_floor,
              "C_hat": c_hat, "sigma": sigma},
        flags={"alpha_ok": bool(np.isfinite(alpha) and alpha >= alpha_floor),
               "c_hat_finite": bool(np.isfinite(c_hat)),
               "nonunique_p": res_p.flags.get("nonunique", False)},
        config={"family": family, "scales": list(map(float, scales)),
                "sigma": sigma, "seed": seed, "space": p.space.label})


# ---------------------------------------------------------------------------
# covering nets

def farthest_point_net(space: DiscreteSpace, r: float):
    """Greedy farthest-point net: every point ends within r of the net."""
    if r <= 0:
        raise LabError("net radius must be positive")
    net = [0]
    mindist = space.dist[0].copy()
    while mindist.max() > r:
        nxt = int(np.argmax(mindist))
        net.append(nxt)
        mindist = np.minimum(mindist, space.dist[nxt])
    return net


def simplex_net(m: int, delta: float, cap: int | None = None):
    """l1 covering net of the m-simplex by the lattice with step delta/m.

    Returns an array of weight vectors; every point of the simplex lies
    within l1 distance delta of the lattice (largest-remainder rounding).
    """
    if m < 1 or delta <= 0:
        raise LabError("need m >= 1 and delta > 0")
    k = max(1, math.ceil(m / delta))
    count = math.comb(k + m - 1, m - 1)
    if cap is not None and count > cap:
        raise LabError(f"simplex net cardinality {count} exceeds cap {cap} "
                       f"(m={m}, step K={k})")
    out = np.empty((count, m))
    for i, cuts in enumerate(itertools.combinations(range(k + m - 1), m - 1)):
        prev = -1
        parts = []
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(k + m - 2 - prev)
        out[i] = parts
    return out / k


def round_to_simplex_lattice(p, k: int):
    """Nearest lattice point with denominator k by largest-remainder."""
    p = np.asarray(p, dtype=float)
    scaled = p * k
    base = np.floor(scaled).astype(int)
    short = k - base.sum()
    if short > 0:
        order = np.argsort(-(scaled - base))
        base[order[:short]] += 1
    return base / k


@dataclass
class NetResult:
    epsilon: float
    net_indices: list
    net_weights: np.ndarray
    cardinality: int
    params: dict
    verification: dict
    space_label: str = ""

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "net_indices": self.net_indices,
                "cardinality": self.cardinality, "params": self.params,
                "verification": self.verification, "space": self.space_label,
                "net_weights": [[float(x) for x in w] for w in self.net_weights]}


def wasserstein_net(space: DiscreteSpace, epsilon: float, n_probe: int = 0,
                    seed: int = 0, cap: int = 500_000) -> NetResult:
    """Epsilon-net of the space of probability measures under the transport
    distance.

    A point net of radius epsilon/2 carries a simplex lattice of l1 mesh
    epsilon^2 / (2 D^2); pushing any measure to the point net and rounding
    its weights lands within epsilon.  With ``n_probe`` > 0, that claim is
    verified on random simplex probes by exact transport solves.
    """
    if epsilon <= 0:
        raise LabError("epsilon must be positive")
    d = space.diameter
    d_w = math.sqrt(0.5) * d
    if epsilon >= d_w:
        # one measure covers everything: no pair of measures is farther
        # apart than the transport diameter
        center = dirac(space, 0)
        verification = {"n_probe": int(n_probe), "max_distance": 0.0,
                        "success": True}
        if n_probe > 0:
            rng = np.random.default_rng(seed)
            worst = max(solve_w2(make_measure(
                space, rng.dirichlet(np.ones(space.point_count))), center).w2
                for _ in range(n_probe))
            verification["max_distance"] = float(worst)
            verification["success"] = bool(worst <= epsilon)
        return NetResult(float(epsilon), [0], np.ones((1, 1)), 1,
                         {"r": d_w, "delta": 1.0, "m": 1, "K": 1,
                          "seed": seed},
                         verification, space.label)
    net_idx = farthest_point_net(space, epsilon / 2.0)
    m = len(net_idx)
    delta = epsilon ** 2 / (2.0 * d ** 2) if d > 0 else 1.0
    lattice = simplex_net(m, delta, cap=cap)
    k = max(1, math.ceil(m / delta))
    nearest = np.asarray(net_idx)[np.argmin(space.dist[:, net_idx], axis=1)]
    verification = {"n_probe": int(n_probe), "max_distance": 0.0,
                    "success": True}
    if n_probe > 0:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_probe):
            probe = make_measure(space, rng.dirichlet(np.ones(space.point_count)))
            agg = np.zeros(m)
            for j, tgt in enumerate(net_idx):
                agg[j] = probe.weights[nearest == tgt].sum()
            rounded = round_to_simplex_lattice(agg, k)
            w = np.zeros(space.point_count)
            w[np.asarray(net_idx)] = rounded
            candidate = Measure(space, w / w.sum())
            worst = max(worst, solve_w2(probe, candidate).w2)
        verification["max_distance"] = float(worst)
        verification["success"] = bool(worst <= epsilon)
    return NetResult(float(epsilon), [int(i) for i in net_idx], lattice,
                     int(lattice.shape[0]),
                     {"r": epsilon / 2.0, "delta": delta, "m": m, "K": k,
                      "seed": seed},
                     verification, space.label)


def fit_entropy_constant(eps_list, cardinalities, dim_n: int) -> float:
    """Smallest C with log N(eps) <= C eps^-n log(C/eps) across all eps."""
    eps = np.asarray(eps_list, dtype=float)
    logn = np.log(np.asarray(cardinalities, dtype=float))
    for c in np.logspace(-3, 6, 2000):
        bound = c * eps ** (-dim_n) * np.log(c / eps)
        if (np.log(c / eps) > 0).all() and (bound >= logn).all():
            return float(c)
    return float("inf")


# ---------------------------------------------------------------------------
# empirical barycenter rates

def empirical_rate_experiment(p: SecondOrderLaw, n_list, trials: int,
                              sigma: float = 0.5, seed: int = 0,
                              jobs: int = 1, jitter=None,
                              reference: Measure | None = None,
                              max_seconds: float | None = None) -> ScanReport:
    """Monte-Carlo convergence of empirical barycenters and empirical laws.

    For each sample size draws i.i.d. atoms from the law, solves the
    empirical barycenter, and records both the distance to the population
    barycenter and the first-order distance between the empirical and
    population laws.  Finite-support draws collapse to weighted sub-laws,
    so solve cost does not grow with the sample size.  ``jitter``, if
    given, maps (atom, rng) to a perturbed copy per draw; the population
    references are then surrogates computed from the unjittered law.

    ``max_seconds`` caps the wall clock: completed sample sizes are kept
    and the report is flagged partial.  A capped run is not reproducible
    across machines, only complete ones are.
    """
    n_list = [int(n) for n in n_list]
    if sorted(n_list) != n_list:
        raise LabError("n_list must be increasing")
    if reference is None:
        mu_p = bary.solve_barycenter(p, detect_nonuniqueness=False).measure
    else:
        mu_p = reference
    ground_pp = ground_distance_matrix(p.atoms, p.atoms)
    tasks = [(n, t) for n in n_list for t in range(trials)]
    seeds = split_seeds(seed, len(tasks))
    t_start = time.monotonic()

    def one(task_idx):
        (n, trial) = tasks[task_idx]
        rng = np.random.default_rng(seeds[task_idx])
        counts = rng.multinomial(n, p.weights)
        chosen = np.flatnonzero(counts)
        if jitter is None:
            atoms = tuple(p.atoms[i] for i in chosen)
            weights = counts[chosen] / n
            emp = SecondOrderLaw(atoms, weights)
            w1 = solve_discrete_ot(ground_pp[chosen], weights, p.weights)[0]
        else:
            atoms = []
            for i in chosen:
                for _ in range(counts[i]):
                    atoms.append(jitter(p.atoms[i], rng))
            emp = SecondOrderLaw(tuple(atoms), np.full(n, 1.0 / n))
            ground = ground_distance_matrix(emp.atoms, p.atoms)
            w1 = solve_discrete_ot(ground, emp.weights, p.weights)[0]
        mu_emp = bary.solve_barycenter(emp, detect_nonuniqueness=False).measure
        err = solve_w2(mu_emp, mu_p).w2
        return (n, trial, float(w1), float(err))

    partial = False
    rows = []
    # schedule one sample size at a time so a wall-clock cap still leaves
    # complete, comparable per-N blocks; the first block always runs
    for block, n in enumerate(n_list):
        if (block > 0 and max_seconds is not None
                and time.monotonic() - t_start > max_seconds):
            partial = True
            break
        idx = [i for i, (nn, _) in enumerate(tasks) if nn == n]
        rows.extend(run_jobs(one, idx, jobs))
    per_n = {}
    for (n, trial, w1, err) in rows:
        per_n.setdefault(n, []).append((w1, err))
    done_n = [n for n in n_list if n in per_n]
    summary = {}
    for n in done_n:
        arr = np.asarray(per_n[n])
        summary[n] = {"w1_mean": float(arr[:, 0].mean()),
                      "w1_median": float(np.median(arr[:, 0])),
                      "err_mean": float(arr[:, 1].mean()),
                      "err_median": float(np.median(arr[:, 1]))}
    rate = fit_loglog([n for n in done_n],
                      [summary[n]["w1_mean"] for n in done_n], floor=0.0)
    first, last = done_n[0], done_n[-1]
    consistency = summary[last]["err_median"] <= summary[first]["err_median"]
    strict = summary[last]["err_median"] < summary[first]["err_median"]
    d_ent = 0 if jitter is None else None
    target = -0.5 if d_ent == 0 else float("nan")
    return ScanReport(
        "empirical_rate", p.space.label, seed,
        ("N", "trial", "w1", "w2_err"), rows,
        fits={"per_n": {str(k): v for k, v in summary.items()},
              "w1_rate_exponent": rate["slope"], "rate_target": target,
              "sigma": sigma},
        flags={"consistency_ok": bool(consistency),
               "consistency_strict": bool(strict),
               "partial": partial,
               "rate_within_015": bool(np.isfinite(rate["slope"])
                                       and abs(rate["slope"] - target) <= 0.15)
               if d_ent == 0 else False},
        config={"n_list": n_list, "trials": trials, "sigma": sigma,
                "seed": seed, "jitter": jitter is not None,
                "max_seconds": max_seconds, "space": p.space.label})
