import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barylab import spaces
from barylab.spaces import build_model_space, dirac, make_measure
from barylab.transport import (PotentialPair, c_transform,
                               check_potential_feasibility, cost_matrix,
                               duality_gap, interpolation_map, plan_to_json,
                               solve_w2, w1_between_laws)

from conftest import random_measure


def test_cost_convention(pair_space):
    c = cost_matrix(pair_space).entries
    assert c[0, 1] == 0.5
    assert c[0, 0] == 0.0


def test_cost_three_point_line():
    sp = spaces.DiscreteSpace(np.array([[0.0, 1.0, 2.0],
                                        [1.0, 0.0, 1.0],
                                        [2.0, 1.0, 0.0]]),
                              np.ones(3), 1, 0.0)
    c = cost_matrix(sp).entries
    assert np.array_equal(c[0], [0.0, 0.5, 2.0])


def test_cost_cached(interval40):
    assert cost_matrix(interval40) is cost_matrix(interval40)


def test_c_transform_zero(interval40):
    phi, arg, ties = c_transform(interval40, np.zeros(40))
    assert np.array_equal(phi, np.zeros(40))
    assert np.array_equal(arg, np.arange(40))


def test_c_transform_two_point(pair_space):
    phi, arg, ties = c_transform(pair_space, np.array([0.0, 0.3]))
    # enumerate: phi(0) = min(0-0, 0.5-0.3); phi(1) = min(0.5-0, 0-0.3)
    assert np.array_equal(phi, [0.0, -0.3])
    assert not ties.any()


def test_triple_transform_exact_dyadic(pair_space):
    psi = np.array([0.0, 0.25])
    phi1, _, _ = c_transform(pair_space, psi)
    psi2, _, _ = c_transform(pair_space, phi1)
    phi3, _, _ = c_transform(pair_space, psi2)
    assert np.array_equal(phi3, phi1)


def test_triple_transform_random(circle32):
    rng = np.random.default_rng(1)
    psi = rng.uniform(-1, 1, 32)
    phi1, _, _ = c_transform(circle32, psi)
    psi2, _, _ = c_transform(circle32, phi1)
    phi3, _, _ = c_transform(circle32, psi2)
    assert np.abs(phi3 - phi1).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8),
       st.floats(-2, 2))
def test_c_transform_shift_covariance(values, const):
    sp = build_model_space("circle", 8, circumference=1.0)
    psi = np.asarray(values)
    a, _, _ = c_transform(sp, psi + const)
    b, _, _ = c_transform(sp, psi)
    assert np.abs(a - (b - const)).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8),
       st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_c_transform_order_reversal(values, bumps):
    sp = build_model_space("circle", 8, circumference=1.0)
    psi = np.asarray(values)
    psi_hi = psi + np.asarray(bumps)
    lo, _, _ = c_transform(sp, psi_hi)
    hi, _, _ = c_transform(sp, psi)
    assert (hi >= lo - 1e-15).all()


def test_solve_w2_identical(interval40):
    rng = np.random.default_rng(0)
    mu = random_measure(interval40, rng)
    res = solve_w2(mu, mu)
    assert res.value == pytest.approx(0.0, abs=1e-12)
    assert np.abs(res.plan.coupling - np.diag(mu.weights)).max() <= 1e-12


def test_solve_w2_diracs(pair_space):
    res = solve_w2(dirac(pair_space, 0), dirac(pair_space, 1))
    assert res.value == pytest.approx(0.5, abs=1e-12)
    assert res.w2 == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_solve_w2_half_mass(pair_space):
    mu = make_measure(pair_space, [0.5, 0.5])
    rho = make_measure(pair_space, [1.0, 0.0])
    res = solve_w2(mu, rho)
    # the only feasible coupling moves the 0.5 at point 1 across cost 0.5
    assert res.value == pytest.approx(0.25, abs=1e-12)
    assert res.gap <= 1e-9


def test_solve_w2_space_mismatch(interval40, circle32):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        solve_w2(random_measure(interval40, rng),
                 random_measure(circle32, rng))


def test_solve_w2_invariants(interval40):
    rng = np.random.default_rng(3)
    for _ in range(5):
        mu, rho = random_measure(interval40, rng), random_measure(interval40, rng)
        res = solve_w2(mu, rho)
        assert np.abs(res.plan.coupling.sum(axis=1) - mu.weights).max() <= 1e-9
        assert np.abs(res.plan.coupling.sum(axis=0) - rho.weights).max() <= 1e-9
        assert abs(res.plan.total_cost
                   - np.sum(res.plan.coupling * cost_matrix(interval40).entries)) <= 1e-9
        assert check_potential_feasibility(interval40, res.potentials) <= 1e-9
        assert abs(np.dot(rho.weights, res.potentials.phi)) <= 1e-9
        assert -1e-9 <= res.gap <= 1e-9


def test_strong_duality_random_sizes():
    rng = np.random.default_rng(11)
    for n in (20, 37, 60):
        sp = build_model_space("circle", n, circumference=1.0)
        mu, rho = random_measure(sp, rng), random_measure(sp, rng)
        assert abs(solve_w2(mu, rho).gap) <= 1e-8


def test_w2_metric_axioms(circle32):
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b, c = (random_measure(circle32, rng) for _ in range(3))
        dab = solve_w2(a, b).w2
        dba = solve_w2(b, a).w2
        dac = solve_w2(a, c).w2
        dcb = solve_w2(c, b).w2
        assert dab == pytest.approx(dba, abs=1e-8)
        assert dab <= dac + dcb + 1e-8
        assert solve_w2(a, a).w2 <= 1e-8


def test_duality_gap_examples(pair_space):
    mu = make_measure(pair_space, [0.5, 0.5])
    rho = make_measure(pair_space, [1.0, 0.0])
    res = solve_w2(mu, rho)
    assert duality_gap(mu, rho, res.potentials) <= 1e-9
    zero = PotentialPair(np.zeros(2), np.zeros(2))
    assert duality_gap(mu, mu, zero) == pytest.approx(0.0, abs=1e-12)
    gap = duality_gap(dirac(pair_space, 0), dirac(pair_space, 1), zero)
    assert gap == pytest.approx(0.5, abs=1e-12)


def test_duality_gap_rejects_infeasible(pair_space):
    bad = PotentialPair(np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    mu = make_measure(pair_space, [0.5, 0.5])
    with pytest.raises(ValueError):
        duality_gap(mu, mu, bad)


def test_w1_between_laws(pair_space):
    a, b = dirac(pair_space, 0), dirac(pair_space, 1)
    p = spaces.SecondOrderLaw((a, b), np.array([0.5, 0.5]))
    assert w1_between_laws(p, p) == pytest.approx(0.0, abs=1e-9)
    q = spaces.SecondOrderLaw((a,), np.array([1.0]))
    # two-atom transport by hand: move the half-weight on b across sqrt(1/2)
    assert w1_between_laws(p, q) == pytest.approx(0.5 * np.sqrt(0.5), abs=1e-9)
    single_p = spaces.SecondOrderLaw((a,), np.array([1.0]))
    single_q = spaces.SecondOrderLaw((b,), np.array([1.0]))
    assert w1_between_laws(single_p, single_q) == pytest.approx(
        np.sqrt(0.5), abs=1e-9)


def test_w1_diameter_bound(circle32):
    rng = np.random.default_rng(9)
    atoms_p = tuple(random_measure(circle32, rng) for _ in range(3))
    atoms_q = tuple(random_measure(circle32, rng) for _ in range(2))
    p = spaces.SecondOrderLaw(atoms_p, np.array([0.2, 0.3, 0.5]))
    q = spaces.SecondOrderLaw(atoms_q, np.array([0.6, 0.4]))
    d_w = np.sqrt(0.5) * circle32.diameter
    assert w1_between_laws(p, q) <= d_w + 1e-9


def test_interpolation_constant_in_s(circle32):
    rng = np.random.default_rng(2)
    psi = rng.uniform(-0.3, 0.3, 32)
    maps = [interpolation_map(circle32, psi, psi, s)["T_s"]
            for s in (0.0, 0.3, 1.0)]
    assert np.array_equal(maps[0], maps[1])
    assert np.array_equal(maps[0], maps[2])


def test_interpolation_optimality_identity(interval40):
    rng = np.random.default_rng(4)
    psi0 = rng.uniform(-0.2, 0.2, 40)
    psi1 = rng.uniform(-0.2, 0.2, 40)
    res = interpolation_map(interval40, psi0, psi1, 0.0)
    c = cost_matrix(interval40).entries
    t0 = res["T_s"]
    lhs = res["phi_s"] + psi0[t0]
    rhs = c[np.arange(40), t0]
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_interpolation_tie_flags():
    sp = spaces.DiscreteSpace(np.array([[0.0, 1.0, 1.0],
                                        [1.0, 0.0, 1.0],
                                        [1.0, 1.0, 0.0]]),
                              np.ones(3), 1, 0.0)
    # symmetric psi: from point 0, targets 1 and 2 tie exactly
    psi = np.array([0.0, 0.7, 0.7])
    out = interpolation_map(sp, psi, psi, 0.5)
    assert out["tie_flags"][0]
    assert out["T_s"][0] == 1  # lowest index wins


def test_interpolation_s_range(circle32):
    with pytest.raises(ValueError):
        interpolation_map(circle32, np.zeros(32), np.zeros(32), 1.5)


def test_interpolation_derivative_identity(interval40):
    """One-sided difference quotient of phi_s matches -v(T_s) off ties."""
    rng = np.random.default_rng(6)
    psi0 = rng.uniform(-0.2, 0.2, 40)
    psi1 = rng.uniform(-0.2, 0.2, 40)
    v = psi1 - psi0
    h = 1e-6
    for s in (0.25, 0.5, 0.75):
        a = interpolation_map(interval40, psi0, psi1, s)
        b = interpolation_map(interval40, psi0, psi1, s + h)
        quot = (b["phi_s"] - a["phi_s"]) / h
        clean = ~(a["tie_flags"] | b["tie_flags"]) & (a["T_s"] == b["T_s"])
        assert clean.any()
        assert np.abs(quot[clean] + v[a["T_s"]][clean]).max() <= 1e-6


def test_plan_json(pair_space):
    res = solve_w2(dirac(pair_space, 0), dirac(pair_space, 1))
    doc = plan_to_json(res)
    assert doc["value"] == pytest.approx(0.5)
    assert doc["w2"] == pytest.approx(np.sqrt(0.5))
    total = sum(v for _, _, v in doc["coupling"])
    assert total == pytest.approx(1.0, abs=1e-9)
