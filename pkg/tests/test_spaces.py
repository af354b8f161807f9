import math

import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from barylab import spaces
from barylab.spaces import (GoodMeasureParams, MeasureError,
                            SpaceError, build_model_space,
                            check_density_bounds, cone_point_grid, dirac,
                            make_measure, measure_from_json, measure_to_json,
                            parse_mesh_text, sample_good_measure,
                            space_from_json, space_to_json, uniform_measure,
                            validate_metric, validate_metric_arrays)


def test_interval_endpoints():
    sp = build_model_space("interval", 3, length=1.0)
    assert sp.dist[0, 2] == 1.0
    assert sp.diameter == 1.0


def test_circle_antipodal():
    sp = build_model_space("circle", 4, circumference=1.0)
    assert sp.dist[0, 2] == 0.5
    assert sp.dist[1, 3] == 0.5


def test_interval_refmeasure_total():
    sp = build_model_space("interval", 50, length=2.0)
    assert sp.total_volume == pytest.approx(2.0, abs=1e-12)


def test_circle_rotation_invariance_exact():
    sp = build_model_space("circle", 12, circumference=1.0)
    perm = np.roll(np.arange(12), 1)
    assert np.array_equal(sp.dist, sp.dist[np.ix_(perm, perm)])


def test_sphere_rotation_invariance_exact():
    sp = build_model_space("sphere", 4, radius=1.0)
    n_lat, n_lon = 4, 8
    idx = np.arange(n_lat * n_lon).reshape(n_lat, n_lon)
    perm = np.roll(idx, 1, axis=1).ravel()
    assert np.array_equal(sp.dist, sp.dist[np.ix_(perm, perm)])


def test_sphere_area_and_metric():
    sp = build_model_space("sphere", 5, radius=2.0)
    assert sp.total_volume == pytest.approx(4 * math.pi * 4.0, rel=1e-12)
    assert validate_metric(sp)["ok"]
    assert sp.diameter <= 2.0 * math.pi + 1e-12


def _cone_dijkstra_oracle(resolution, angle, radius, refine=5, stencil=5):
    """Shortest paths over a fine cone mesh with locally flat edge lengths.

    Away from the apex a small patch of the cone is isometric to the
    plane, so edges between nearby grid cells get exact planar lengths;
    the apex joins the innermost ring by radial edges.  Dijkstra over this
    local mesh probes the global distance structure (wrap direction, apex
    shortcuts) independently of the closed-form used by the builder.
    """
    radii_c, angles_c, (n_r, n_a) = cone_point_grid(resolution, angle, radius)
    n_rf, n_af = refine * n_r, refine * n_a
    radii_f = radius * (np.arange(n_rf) + 0.5) / n_rf
    step_f = angle / n_af

    def vid(ring, sector):
        return ring * n_af + sector % n_af

    rows, cols, vals = [], [], []
    for ring in range(n_rf):
        for sector in range(n_af):
            r1 = radii_f[ring]
            for dr in range(-stencil, stencil + 1):
                ring2 = ring + dr
                if not (0 <= ring2 < n_rf):
                    continue
                r2 = radii_f[ring2]
                for da in range(-stencil, stencil + 1):
                    if dr == 0 and da <= 0:
                        continue
                    # planar law of cosines on the locally unrolled patch
                    gam = abs(da) * step_f
                    ell = math.sqrt(r1 * r1 + r2 * r2
                                    - 2 * r1 * r2 * math.cos(gam))
                    rows.append(vid(ring, sector))
                    cols.append(vid(ring2, sector + da))
                    vals.append(ell)
    apex = n_rf * n_af
    for sector in range(n_af):
        rows.append(apex)
        cols.append(vid(0, sector))
        vals.append(radii_f[0])
    n_fine = n_rf * n_af + 1
    graph = coo_matrix((vals, (rows, cols)), shape=(n_fine, n_fine)).tocsr()
    # coarse grid points coincide with fine vertices: cell centers align
    # when refine is odd
    assert refine % 2 == 1
    coarse_ids = []
    for ring in range(n_r):
        for sector in range(n_a):
            fr = refine * ring + refine // 2
            fa = refine * sector
            assert abs(radii_f[fr] - radii_c[ring]) < 1e-12
            coarse_ids.append(vid(fr, fa))
    out = dijkstra(graph, directed=False, indices=coarse_ids)
    return out[:, coarse_ids]


def test_cone_against_mesh_dijkstra_oracle():
    sp = build_model_space("cone", 64, angle=math.pi, radius=1.0)
    oracle = _cone_dijkstra_oracle(64, math.pi, 1.0)
    mask = sp.dist > 0.1 * sp.diameter
    rel = np.abs(oracle[mask] - sp.dist[mask]) / sp.dist[mask]
    assert rel.max() <= 0.02


def test_cone_angle_out_of_range():
    with pytest.raises(SpaceError):
        build_model_space("cone", 64, angle=7.0, radius=1.0)
    with pytest.raises(SpaceError):
        build_model_space("cone", 64, angle=0.0, radius=1.0)


def test_resolution_too_small():
    with pytest.raises(SpaceError):
        build_model_space("interval", 1, length=1.0)


@pytest.mark.parametrize("kind,params", [
    ("interval", {"length": 1.0}),
    ("circle", {"circumference": 1.0}),
    ("sphere", {"radius": 1.0}),
    ("cone", {"angle": 2.0, "radius": 1.0}),
])
def test_builders_pass_validation(kind, params):
    sp = build_model_space(kind, 6, **params)
    assert validate_metric(sp)["ok"]


def test_validate_metric_asymmetry():
    dist = np.array([[0.0, 1.0], [2.0, 0.0]])
    rep = validate_metric_arrays(dist)
    assert not rep["ok"]
    assert rep["checks"]["symmetry"]["violation"] == 1.0


def test_validate_metric_triangle_violation():
    dist = np.array([[0.0, 1.0, 3.0],
                     [1.0, 0.0, 1.0],
                     [3.0, 1.0, 0.0]])
    rep = validate_metric_arrays(dist)
    assert not rep["ok"]
    assert rep["worst_kind"] == "triangle"
    assert rep["worst_violation"] == pytest.approx(1.0, abs=1e-15)


def test_make_measure_examples():
    sp = build_model_space("interval", 3, length=1.0)
    m = make_measure(sp, [2.0, 0.0, 0.0])
    assert np.array_equal(m.weights, [1.0, 0.0, 0.0])
    assert list(m.support) == [0]
    m2 = make_measure(sp, [1.0, 2.0, 1.0])
    assert np.allclose(m2.weights, [0.25, 0.5, 0.25], atol=0)


def test_make_measure_idempotent():
    sp = build_model_space("interval", 5, length=1.0)
    m = make_measure(sp, [0.2, 0.1, 0.3, 0.15, 0.25])
    m2 = make_measure(sp, m.weights)
    assert np.abs(m2.weights - m.weights).max() <= 1e-12


def test_make_measure_errors():
    sp = build_model_space("interval", 3, length=1.0)
    with pytest.raises(MeasureError):
        make_measure(sp, [0.0, 0.0, 0.0])
    with pytest.raises(MeasureError):
        make_measure(sp, [1.0, -0.5, 0.5])
    with pytest.raises(MeasureError):
        make_measure(sp, [1.0, 1.0])


def test_good_measure_forced_constant_density():
    sp = build_model_space("interval", 20, length=1.0)
    params = GoodMeasureParams(1.0, 1.0)
    m = sample_good_measure(sp, params, rng_seed=5)
    assert np.allclose(m.weights, uniform_measure(sp).weights, atol=1e-14)


def test_good_measure_deterministic():
    sp = build_model_space("interval", 20, length=1.0)
    params = GoodMeasureParams(0.5, 2.0)
    a = sample_good_measure(sp, params, rng_seed=42)
    b = sample_good_measure(sp, params, rng_seed=42)
    assert np.array_equal(a.weights, b.weights)


def test_good_measure_density_ratio():
    sp = build_model_space("interval", 30, length=1.0)
    params = GoodMeasureParams(0.5, 2.0)
    m = sample_good_measure(sp, params, rng_seed=3)
    dens = m.density()[m.support]
    assert dens.max() / dens.min() <= 4.0 + 1e-9


def test_good_measure_round_trip_bounds():
    sp = build_model_space("circle", 25, circumference=1.0)
    params = GoodMeasureParams(0.5, 2.0)
    for seed in range(6):
        m = sample_good_measure(sp, params, rng_seed=seed)
        ok, worst = check_density_bounds(m, params)
        assert ok, worst
        relaxed = GoodMeasureParams(0.5 / 1.01, 2.0 * 1.01)
        assert check_density_bounds(m, relaxed)[0]


def test_good_measure_infeasible_band():
    sp = build_model_space("interval", 10, length=1.0)
    with pytest.raises(MeasureError):
        sample_good_measure(sp, GoodMeasureParams(2.0, 3.0), rng_seed=0)


def test_good_measure_subdomain():
    sp = build_model_space("interval", 20, length=1.0)
    domain = np.arange(5, 15)
    m = sample_good_measure(sp, GoodMeasureParams(0.5, 4.0), domain=domain,
                            rng_seed=1)
    assert set(m.support) <= set(domain)
    ok, _ = check_density_bounds(m, GoodMeasureParams(0.5, 4.0), domain=domain)
    assert ok


def test_check_density_bounds_dirac():
    sp = build_model_space("interval", 100, length=1.0)
    ok, worst = check_density_bounds(dirac(sp, 3), GoodMeasureParams(0.5, 2.0))
    assert not ok and worst > 1


def test_check_density_bounds_support_leak():
    sp = build_model_space("interval", 10, length=1.0)
    m = uniform_measure(sp)
    ok, worst = check_density_bounds(m, GoodMeasureParams(0.5, 2.0),
                                     domain=np.arange(5))
    assert not ok and worst == float("inf")


def test_good_measure_params_validation():
    with pytest.raises(ValueError):
        GoodMeasureParams(2.0, 1.0)
    with pytest.raises(ValueError):
        GoodMeasureParams(0.5, 2.0, alpha=0.0)
    with pytest.raises(ValueError):
        GoodMeasureParams(-1.0, 2.0)


def test_second_order_law_validation():
    sp = build_model_space("interval", 4, length=1.0)
    other = build_model_space("interval", 4, length=1.0)
    a, b = uniform_measure(sp), dirac(sp, 0)
    law = spaces.SecondOrderLaw((a, b), np.array([0.3, 0.7]))
    assert law.space is sp
    with pytest.raises(MeasureError):
        spaces.SecondOrderLaw((a, b), np.array([0.5, 0.6]))
    with pytest.raises(MeasureError):
        spaces.SecondOrderLaw((a, uniform_measure(other)), np.array([0.5, 0.5]))


MESH = """
# triangle with one dangling vertex
points 4
weight 3 0.5
edge 0 1 1.0
edge 1 2 1.0
edge 0 2 1.5
edge 2 3 0.25
"""


def test_mesh_parse_and_shortest_paths(tmp_path):
    path = tmp_path / "mesh.txt"
    path.write_text(MESH)
    sp = build_model_space("mesh_file", 2, path=str(path))
    assert sp.point_count == 4
    assert sp.dist[0, 2] == 1.5
    assert sp.dist[0, 3] == 1.75
    assert sp.ref_measure[3] == 0.5
    assert validate_metric(sp)["ok"]


def test_mesh_disconnected(tmp_path):
    path = tmp_path / "mesh.txt"
    path.write_text("points 4\nedge 0 1 1.0\nedge 2 3 1.0\n")
    with pytest.raises(SpaceError, match="disconnected"):
        build_model_space("mesh_file", 2, path=str(path))


def test_mesh_malformed():
    with pytest.raises(SpaceError):
        parse_mesh_text("edge 0 1 1.0")
    with pytest.raises(SpaceError):
        parse_mesh_text("points 3\nedge 0 7 1.0")
    with pytest.raises(SpaceError):
        parse_mesh_text("points 3\nfoo 1 2")
    with pytest.raises(SpaceError):
        parse_mesh_text("points 3\nedge 0 1 -2.0")


def test_space_json_round_trip():
    sp = build_model_space("circle", 10, circumference=2.0)
    doc = space_to_json(sp)
    sp2 = space_from_json(doc)
    assert np.array_equal(sp.dist, sp2.dist)
    assert np.array_equal(sp.ref_measure, sp2.ref_measure)
    assert sp2.kind == "circle"
    assert sp2.label == sp.label


def test_measure_json_round_trip():
    sp = build_model_space("interval", 6, length=1.0)
    m = make_measure(sp, [1, 2, 3, 4, 5, 6])
    doc = measure_to_json(m)
    m2 = measure_from_json(doc, sp)
    assert np.array_equal(m.weights, m2.weights)
    with pytest.raises(MeasureError):
        measure_from_json({"space_label": "other", "weights": [1.0]},
                          build_model_space("interval", 2, length=1.0))


def test_immutability():
    sp = build_model_space("interval", 5, length=1.0)
    with pytest.raises(ValueError):
        sp.dist[0, 1] = 7.0
    m = uniform_measure(sp)
    with pytest.raises(ValueError):
        m.weights[0] = 0.9
