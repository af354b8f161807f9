"""Discrete metric-measure spaces and probability measures on them.

The spaces built here are finite stand-ins for compact domains in curved
model geometries: intervals, circles, round spheres, flat cones with a
singular apex, and arbitrary metric graphs loaded from mesh files.  Every
space carries a full geodesic distance matrix, a reference volume measure,
and (dimension, curvature bound, diameter) metadata.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

METRIC_TOL = 1e-12
WEIGHT_TOL = 1e-12


class SpaceError(ValueError):
    """Invalid space construction or validation failure."""


class MeasureError(ValueError):
    """Invalid measure construction."""


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Finite metric-measure space: distance matrix plus reference volume.

    Attributes
    ----------
    dist : (n, n) ndarray
        Symmetric geodesic distance matrix, zero diagonal, triangle
        inequality within ``METRIC_TOL``.
    ref_measure : (n,) ndarray
        Strictly positive volume weights; the total is the volume of the
        domain, not necessarily 1.
    dim_n : int
        Dimension metadata of the underlying model geometry.
    curv_k : float
        Lower curvature bound metadata.
    points : ndarray or None
        Optional coordinates of the points (used by 1-D gradient stencils
        and plotting; not required for any solver).
    kind : str
        Builder tag: interval, circle, sphere, cone, mesh or custom.
    """

    dist: np.ndarray
    ref_measure: np.ndarray
    dim_n: int
    curv_k: float
    label: str = ""
    points: np.ndarray | None = None
    kind: str = "custom"

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float)
        ref = np.asarray(self.ref_measure, dtype=float)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "ref_measure", ref)
        if self.points is not None:
            object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise SpaceError("dist must be a square matrix")
        if ref.shape != (dist.shape[0],):
            raise SpaceError("ref_measure length must match dist")
        if np.any(ref <= 0):
            raise SpaceError("ref_measure entries must be strictly positive")
        if self.dim_n < 1:
            raise SpaceError("dim_n must be a positive integer")
        report = validate_metric_arrays(dist)
        if not report["ok"]:
            raise SpaceError(f"invalid metric: {report['worst_kind']} violation "
                             f"{report['worst_violation']:.3e}")
        dist.setflags(write=False)
        ref.setflags(write=False)
        object.__setattr__(self, "_cache", {})

    @property
    def point_count(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max())

    @property
    def total_volume(self) -> float:
        return float(self.ref_measure.sum())

    def cache(self) -> dict:
        return object.__getattribute__(self, "_cache")


@dataclass(frozen=True, eq=False)
class Measure:
    """Probability weight vector over the points of a DiscreteSpace."""

    space: DiscreteSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (self.space.point_count,):
            raise MeasureError("weights length must match the space")
        if np.any(w < 0):
            raise MeasureError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise MeasureError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)

    @property
    def support(self) -> np.ndarray:
        """Indices with strictly positive weight (no epsilon)."""
        return np.flatnonzero(self.weights > 0)

    def density(self) -> np.ndarray:
        """Density of the measure against the space's reference measure."""
        return self.weights / self.space.ref_measure


@dataclass(frozen=True)
class GoodMeasureParams:
    """Uniform density-bound parameters for a family of good target measures.

    ``john_eta`` and ``perimeter_bound`` are carried as metadata only: the
    algorithms consume the density band [m_lower, M_upper] and the mass
    fraction alpha.
    """

    m_lower: float
    M_upper: float
    john_eta: float = 1.0
    perimeter_bound: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not (self.m_lower > 0 and self.M_upper > 0):
            raise ValueError("density bounds must be positive")
        if self.m_lower > self.M_upper:
            raise ValueError("m_lower must not exceed M_upper")
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")
        if self.john_eta <= 0 or self.perimeter_bound <= 0:
            raise ValueError("john_eta and perimeter_bound must be positive")


@dataclass(frozen=True, eq=False)
class SecondOrderLaw:
    """Finite weighted family of measures: a law on the space of measures."""

    atoms: tuple
    weights: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        object.__setattr__(self, "atoms", atoms)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(atoms) == 0:
            raise MeasureError("a second-order law needs at least one atom")
        if w.shape != (len(atoms),):
            raise MeasureError("atom weights length mismatch")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise MeasureError("atom weights must be nonnegative and sum to 1")
        space = atoms[0].space
        for a in atoms:
            if a.space is not space:
                raise MeasureError("all atoms must live on one shared space")
        w.setflags(write=False)

    @property
    def space(self) -> DiscreteSpace:
        return self.atoms[0].space


# ---------------------------------------------------------------------------
# metric validation

def validate_metric_arrays(dist: np.ndarray, tol: float = METRIC_TOL) -> dict:
    """Check symmetry, zero diagonal and the triangle inequality.

    Returns a report dict with per-check worst violations; never raises.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    diag_v = float(np.abs(np.diag(dist)).max()) if n else 0.0
    sym_v = float(np.abs(dist - dist.T).max()) if n else 0.0
    neg_v = float(max(0.0, -dist.min())) if n else 0.0
    tri_v = 0.0
    tri_at = None
    # worst violation of d(i,k) <= min_j d(i,j)+d(j,k), row-chunked
    for i in range(n):
        via = (dist[i][:, None] + dist).min(axis=0)
        gap = dist[i] - via
        k = int(np.argmax(gap))
        if gap[k] > tri_v:
            tri_v = float(gap[k])
            tri_at = (i, k)
    checks = {
        "zero_diagonal": diag_v,
        "symmetry": sym_v,
        "nonnegativity": neg_v,
        "triangle": tri_v,
    }
    worst_kind = max(checks, key=checks.get)
    return {
        "ok": all(v <= tol for v in checks.values()),
        "checks": {k: {"violation": v, "pass": v <= tol} for k, v in checks.items()},
        "worst_kind": worst_kind,
        "worst_violation": checks[worst_kind],
        "worst_triangle_pair": tri_at,
        "tol": tol,
    }


def validate_metric(space: DiscreteSpace, tol: float = METRIC_TOL) -> dict:
    """Validation report for a constructed space (report-only, never raises)."""
    return validate_metric_arrays(space.dist, tol)


# ---------------------------------------------------------------------------
# model space builders

def build_model_space(kind: str, resolution: int, **params) -> DiscreteSpace:
    """Construct a validated model space.

    Parameters
    ----------
    kind : {"interval", "circle", "sphere", "cone", "mesh_file"}
    resolution : int
        Number of points (interval/circle), latitude bands (sphere), or
        target point count (cone).  Ignored for mesh files.
    params :
        interval: length; circle: circumference; sphere: radius;
        cone: angle (total cone angle in (0, 2pi)) and radius;
        mesh_file: path.
    """
    if resolution < 2:
        raise SpaceError("resolution must be at least 2")
    if kind == "interval":
        return _build_interval(resolution, params.get("length", 1.0))
    if kind == "circle":
        return _build_circle(resolution, params.get("circumference", 1.0))
    if kind == "sphere":
        return _build_sphere(resolution, params.get("radius", 1.0))
    if kind == "cone":
        return _build_cone(resolution, params.get("angle", math.pi),
                           params.get("radius", 1.0))
    if kind == "mesh_file":
        return _build_mesh(params["path"])
    raise SpaceError(f"unknown space kind {kind!r}")


def _build_interval(n: int, length: float) -> DiscreteSpace:
    if length <= 0:
        raise SpaceError("interval length must be positive")
    xs = np.linspace(0.0, length, n)
    dist = np.abs(xs[:, None] - xs[None, :])
    ref = np.full(n, length / n)
    return DiscreteSpace(dist, ref, dim_n=1, curv_k=0.0,
                         label=f"interval(n={n},length={length:g})",
                         points=xs, kind="interval")


def _build_circle(n: int, circumference: float) -> DiscreteSpace:
    if circumference <= 0:
        raise SpaceError("circumference must be positive")
    step = circumference / n
    k = np.arange(n)
    hops = np.minimum(np.abs(k[:, None] - k[None, :]),
                      n - np.abs(k[:, None] - k[None, :]))
    dist = step * hops
    ref = np.full(n, step)
    return DiscreteSpace(dist, ref, dim_n=1, curv_k=0.0,
                         label=f"circle(n={n},circumference={circumference:g})",
                         points=step * k, kind="circle")


def _build_sphere(n_lat: int, radius: float) -> DiscreteSpace:
    """Round 2-sphere sampled on a latitude-longitude cell-center grid.

    Central angles are computed from tabulated longitude differences, so the
    discrete rotation by one longitude step permutes the points without
    changing any distance, bit for bit.
    """
    if radius <= 0:
        raise SpaceError("sphere radius must be positive")
    n_lon = 2 * n_lat
    theta = math.pi * (np.arange(n_lat) + 0.5) / n_lat      # colatitude centers
    phi_idx = np.arange(n_lon)
    # cos/sin of longitude differences, indexed by (i - j) mod n_lon
    dphi = 2.0 * math.pi * np.arange(n_lon) / n_lon
    cos_dphi, sin_dphi = np.cos(dphi), np.sin(dphi)

    lat = np.repeat(np.arange(n_lat), n_lon)
    lon = np.tile(phi_idx, n_lat)
    ct, st = np.cos(theta)[lat], np.sin(theta)[lat]
    dlon = (lon[:, None] - lon[None, :]) % n_lon
    cosd, sind = cos_dphi[dlon], sin_dphi[dlon]
    cosg = ct[:, None] * ct[None, :] + st[:, None] * st[None, :] * cosd
    # stable angle via atan2: cross-product norm against the dot product
    cx = st[:, None] * st[None, :] * sind
    cy = ct[:, None] * st[None, :] - st[:, None] * ct[None, :] * cosd
    cz = st[:, None] * ct[None, :] * sind
    sing = np.sqrt(cx * cx + cy * cy + cz * cz)
    gamma = np.arctan2(sing, cosg)
    np.fill_diagonal(gamma, 0.0)
    dist = radius * gamma
    dist = np.minimum(dist, dist.T)  # enforce exact symmetry of rounding

    band = np.cos(math.pi * np.arange(n_lat) / n_lat) - np.cos(math.pi * (np.arange(n_lat) + 1) / n_lat)
    ref = (radius ** 2) * (2.0 * math.pi / n_lon) * band[lat]
    pts = np.column_stack([
        radius * st * np.cos(2 * math.pi * lon / n_lon),
        radius * st * np.sin(2 * math.pi * lon / n_lon),
        radius * ct,
    ])
    return DiscreteSpace(dist, ref, dim_n=2, curv_k=1.0 / radius ** 2,
                         label=f"sphere(nlat={n_lat},radius={radius:g})",
                         points=pts, kind="sphere")


def cone_point_grid(resolution: int, angle: float, radius: float):
    """Cell-center (r, alpha) grid for a flat cone; returns (radii, angles, shape)."""
    n_r = max(2, round(math.sqrt(resolution / 2.0)))
    n_a = max(3, int(math.ceil(resolution / n_r)))
    radii = radius * (np.arange(n_r) + 0.5) / n_r
    angles = angle * np.arange(n_a) / n_a
    return radii, angles, (n_r, n_a)


def cone_distance(r1, a1, r2, a2, angle: float):
    """Geodesic distance on the cone of total angle ``angle`` by unrolling.

    For total angle below 2*pi the angular separation never exceeds pi, so
    the unrolled straight segment is always the geodesic and the apex path
    is never shorter.
    """
    da = np.abs(a1 - a2) % angle
    da = np.minimum(da, angle - da)
    return np.sqrt(np.maximum(r1 ** 2 + r2 ** 2 - 2.0 * r1 * r2 * np.cos(da), 0.0))


def _build_cone(resolution: int, angle: float, radius: float) -> DiscreteSpace:
    if not (0 < angle < 2 * math.pi):
        raise SpaceError("cone angle must lie in (0, 2*pi)")
    if radius <= 0:
        raise SpaceError("cone radius must be positive")
    radii, angles, (n_r, n_a) = cone_point_grid(resolution, angle, radius)
    rr = np.repeat(radii, n_a)
    aa = np.tile(angles, n_r)
    # tabulated angular separations by index difference keep the discrete
    # rotation an exact isometry
    ia = np.tile(np.arange(n_a), n_r)
    dia = (ia[:, None] - ia[None, :]) % n_a
    sep = angle * np.minimum(dia, n_a - dia) / n_a
    dist = np.sqrt(np.maximum(
        rr[:, None] ** 2 + rr[None, :] ** 2
        - 2.0 * rr[:, None] * rr[None, :] * np.cos(sep), 0.0))
    np.fill_diagonal(dist, 0.0)
    dist = np.minimum(dist, dist.T)
    ring_lo = radius * np.arange(n_r) / n_r
    ring_hi = radius * (np.arange(n_r) + 1) / n_r
    cell = (angle / n_a) * 0.5 * (ring_hi ** 2 - ring_lo ** 2)
    ref = np.repeat(cell, n_a)
    pts = np.column_stack([rr, aa])
    return DiscreteSpace(dist, ref, dim_n=2, curv_k=0.0,
                         label=f"cone(n={n_r * n_a},angle={angle:g},radius={radius:g})",
                         points=pts, kind="cone")


def parse_mesh_text(text: str):
    """Parse the plain-text mesh format.

    Lines: ``points N``, optional ``weight I W`` (default 1.0), and
    ``edge I J LENGTH``.  ``#`` starts a comment.
    """
    n = None
    weights = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "points":
            if len(tok) != 2:
                raise SpaceError(f"mesh line {lineno}: malformed points line")
            n = int(tok[1])
            if n < 2:
                raise SpaceError("mesh must have at least 2 points")
            weights = np.ones(n)
        elif tok[0] == "weight":
            if n is None:
                raise SpaceError(f"mesh line {lineno}: weight before points")
            i, w = int(tok[1]), float(tok[2])
            if not (0 <= i < n) or w <= 0:
                raise SpaceError(f"mesh line {lineno}: bad weight entry")
            weights[i] = w
        elif tok[0] == "edge":
            if n is None:
                raise SpaceError(f"mesh line {lineno}: edge before points")
            if len(tok) != 4:
                raise SpaceError(f"mesh line {lineno}: malformed edge line")
            i, j, ell = int(tok[1]), int(tok[2]), float(tok[3])
            if not (0 <= i < n and 0 <= j < n) or i == j or ell <= 0:
                raise SpaceError(f"mesh line {lineno}: bad edge entry")
            edges.append((i, j, ell))
        else:
            raise SpaceError(f"mesh line {lineno}: unknown directive {tok[0]!r}")
    if n is None:
        raise SpaceError("mesh file has no points line")
    if not edges:
        raise SpaceError("mesh file has no edges")
    return n, weights, edges


def _build_mesh(path: str, dim_n: int = 1, curv_k: float = 0.0) -> DiscreteSpace:
    with open(path, "r", encoding="utf-8") as fh:
        n, weights, edges = parse_mesh_text(fh.read())
    rows = [e[0] for e in edges] + [e[1] for e in edges]
    cols = [e[1] for e in edges] + [e[0] for e in edges]
    vals = [e[2] for e in edges] * 2
    graph = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise SpaceError(f"mesh graph is disconnected ({ncomp} components)")
    dist = shortest_path(graph, method="D", directed=False)
    dist = np.minimum(dist, dist.T)
    return DiscreteSpace(dist, weights, dim_n=dim_n, curv_k=curv_k,
                         label=f"mesh({path})", kind="mesh")


# ---------------------------------------------------------------------------
# measures

def make_measure(space: DiscreteSpace, raw_weights) -> Measure:
    """Normalize a nonnegative weight vector into a probability Measure."""
    w = np.asarray(raw_weights, dtype=float)
    if w.shape != (space.point_count,):
        raise MeasureError("raw_weights length must match the space")
    if np.any(w < 0):
        raise MeasureError("raw_weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise MeasureError("raw_weights must have at least one positive entry")
    return Measure(space, w / total)


def dirac(space: DiscreteSpace, index: int) -> Measure:
    w = np.zeros(space.point_count)
    w[index] = 1.0
    return Measure(space, w)


def uniform_measure(space: DiscreteSpace, domain=None) -> Measure:
    """Measure proportional to ref_measure on ``domain`` (default: all points)."""
    w = np.zeros(space.point_count)
    idx = np.arange(space.point_count) if domain is None else np.asarray(domain)
    w[idx] = space.ref_measure[idx]
    return make_measure(space, w)


def sample_good_measure(space: DiscreteSpace, params: GoodMeasureParams,
                        domain=None, rng_seed: int = 0) -> Measure:
    """Draw a measure whose density against ref_measure stays in the good band.

    An i.i.d. uniform field on the domain is recentered to the feasible mean
    density and its fluctuation shrunk until the whole field fits inside
    [m_lower, M_upper]; the result is deterministic for a fixed seed.
    """
    idx = (np.arange(space.point_count) if domain is None
           else np.asarray(domain, dtype=int))
    if idx.size == 0:
        raise MeasureError("domain must be nonempty")
    vol = float(space.ref_measure[idx].sum())
    mean_density = 1.0 / vol
    slack = 1e-12 * max(1.0, params.M_upper)
    if not (params.m_lower - slack <= mean_density <= params.M_upper + slack):
        raise MeasureError(
            f"no density in [{params.m_lower}, {params.M_upper}] with mass 1 on a "
            f"domain of volume {vol:g}; need m_lower <= {mean_density:g} <= M_upper")
    rng = np.random.default_rng(rng_seed)
    g = rng.uniform(0.0, 1.0, size=idx.size)
    d = params.m_lower + (params.M_upper - params.m_lower) * g
    fluct = d - float(np.dot(d, space.ref_measure[idx])) / vol
    hi = float(fluct.max())
    lo = float(-fluct.min())
    lam = 1.0
    if hi > 0:
        lam = min(lam, max(0.0, params.M_upper - mean_density) / hi)
    if lo > 0:
        lam = min(lam, max(0.0, mean_density - params.m_lower) / lo)
    density = mean_density + lam * fluct
    w = np.zeros(space.point_count)
    w[idx] = density * space.ref_measure[idx]
    return make_measure(space, w)


def check_density_bounds(measure: Measure, params: GoodMeasureParams,
                         domain=None, tol: float = 1e-9):
    """Check support containment and the density band on the support.

    Returns ``(ok, worst_ratio)`` where worst_ratio is the largest of
    density/M_upper and m_lower/density over the support (<= 1 means the
    band holds); it is ``inf`` when the support leaks outside the domain.
    """
    idx = (np.arange(measure.space.point_count) if domain is None
           else np.asarray(domain, dtype=int))
    sup = measure.support
    if not np.isin(sup, idx).all():
        return False, float("inf")
    dens = measure.weights[sup] / measure.space.ref_measure[sup]
    worst = float(max((dens / params.M_upper).max(), (params.m_lower / dens).max()))
    return worst <= 1.0 + tol, worst


# ---------------------------------------------------------------------------
# JSON interfaces

def space_to_json(space: DiscreteSpace) -> dict:
    doc = {
        "label": space.label,
        "dim_n": space.dim_n,
        "curv_k": space.curv_k,
        "dist": [float(x) for x in space.dist.ravel()],
        "ref_measure": [float(x) for x in space.ref_measure],
    }
    if space.points is not None:
        doc["points"] = np.asarray(space.points).tolist()
    if space.kind != "custom":
        doc["kind"] = space.kind
    return doc


def space_from_json(doc: dict) -> DiscreteSpace:
    ref = np.asarray(doc["ref_measure"], dtype=float)
    n = ref.shape[0]
    dist = np.asarray(doc["dist"], dtype=float).reshape(n, n)
    pts = np.asarray(doc["points"], dtype=float) if "points" in doc else None
    return DiscreteSpace(dist, ref, dim_n=int(doc["dim_n"]),
                         curv_k=float(doc["curv_k"]), label=doc.get("label", ""),
                         points=pts, kind=doc.get("kind", "custom"))


def save_space(space: DiscreteSpace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space_to_json(space), fh)


def load_space(path: str) -> DiscreteSpace:
    with open(path, "r", encoding="utf-8") as fh:
        return space_from_json(json.load(fh))


def measure_to_json(measure: Measure) -> dict:
    return {"space_label": measure.space.label,
            "weights": [float(x) for x in measure.weights]}


def measure_from_json(doc: dict, space: DiscreteSpace) -> Measure:
    if doc.get("space_label") and space.label and doc["space_label"] != space.label:
        raise MeasureError(f"measure was built on {doc['space_label']!r}, "
                           f"not {space.label!r}")
    return Measure(space, np.asarray(doc["weights"], dtype=float))


def save_measure(measure: Measure, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(measure_to_json(measure), fh)


def load_measure(path: str, space: DiscreteSpace) -> Measure:
    with open(path, "r", encoding="utf-8") as fh:
        return measure_from_json(json.load(fh), space)
