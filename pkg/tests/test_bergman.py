import json
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toric_clt.bergman import (
    BergmanModel,
    build_measure,
    char_fn,
    density_of_states,
    log_density_at,
    moments,
    recentered_dilated,
    weight,
    write_measure_csv,
    write_measure_json,
)
from toric_clt.limits import mass_outside
from toric_clt.potential import BasePoint, fubini_study, perturbed_potential, shifted_potential
from toric_clt.quadrature import AlphaOutsidePolytopeError, QuadratureSpec


def binomial_pmf(k, p):
    return np.array([comb(k, j) * p**j * (1 - p) ** (k - j) for j in range(k + 1)])


def p_of(rho):
    return np.exp(rho) / (1 + np.exp(rho))


def test_fs1_weight_closed_form(model_fs1):
    for rho in (0.0, 1.0, -0.7):
        p = p_of(rho)
        for k, a in ((5, 2), (12, 0), (12, 12), (30, 11)):
            expect = (k + 1) * comb(k, a) * p**a * (1 - p) ** (k - a)
            assert weight(model_fs1, [a], k, BasePoint([rho])) == pytest.approx(expect, rel=1e-10)


def test_fs1_level_one_weights(model_fs1):
    mu = build_measure(model_fs1, 1, BasePoint([0.0]))
    assert np.allclose(mu.weights, [1.0, 1.0], rtol=1e-12)
    assert np.allclose(mu.probabilities, [0.5, 0.5], atol=1e-15)
    assert mu.atoms() == [((0,), pytest.approx(1.0)), ((1,), pytest.approx(1.0))]


def test_weight_agrees_between_routes(fs2):
    rho_model = BergmanModel(fs2)
    x_model = BergmanModel(fs2, QuadratureSpec(route="x"))
    z = BasePoint([0.2, -0.4])
    for a in ([1, 1], [3, 2], [0, 4]):
        assert weight(x_model, a, 6, z) == pytest.approx(weight(rho_model, a, 6, z), rel=1e-6)


def test_weight_rejects_points_outside(model_fs1):
    with pytest.raises(AlphaOutsidePolytopeError):
        weight(model_fs1, [5], 4, BasePoint([0.0]))
    build_measure(model_fs1, 4, BasePoint([0.0]))
    with pytest.raises(AlphaOutsidePolytopeError):
        weight(model_fs1, [-1], 4, BasePoint([0.0]))


@pytest.mark.parametrize("rho", [0.0, 1.0, -2.5])
@pytest.mark.parametrize("k", [1, 10, 64])
def test_fs1_measure_is_binomial(model_fs1, rho, k):
    mu = build_measure(model_fs1, k, BasePoint([rho]))
    p = p_of(rho)
    assert np.max(np.abs(mu.probabilities - binomial_pmf(k, p))) <= 1e-12
    assert density_of_states(mu) == pytest.approx(k + 1, rel=1e-10)
    mom = moments(mu)
    assert mom.mean[0] == pytest.approx(p, abs=1e-12)
    assert mom.covariance[0, 0] == pytest.approx(p * (1 - p) / k, rel=1e-9)


def test_fs1_density_at_level_ten(model_fs1):
    assert density_of_states(build_measure(model_fs1, 10, BasePoint([0.3]))) == pytest.approx(11, rel=1e-10)


def test_fs2_level_one(model_fs2):
    mu = build_measure(model_fs2, 1, BasePoint([0.0, 0.0]))
    assert len(mu) == 3
    assert np.allclose(mu.probabilities, 1 / 3, atol=1e-14)
    # Pi = (k + 1)(k + 2) for the simplex
    assert density_of_states(mu) == pytest.approx(6.0, rel=1e-12)


def test_fs2_density_is_dimension_polynomial(model_fs2):
    for k in (3, 8):
        mu = build_measure(model_fs2, k, BasePoint([0.4, -1.1]))
        assert density_of_states(mu) == pytest.approx((k + 1) * (k + 2), rel=1e-9)


@pytest.mark.parametrize("k", [2, 9])
def test_measure_invariants(model_fs2, k):
    mu = build_measure(model_fs2, k, BasePoint([0.5, 0.1]))
    assert np.all(mu.weights > 0) and mu.density > 0
    assert abs(mu.probabilities.sum() - 1) <= 1e-12
    assert np.array_equal(mu.alphas, model_fs2.polytope.lattice_points(k))
    assert np.all(np.linalg.eigvalsh(moments(mu).covariance) >= -1e-15)


def test_dilated_fs1_level_four(model_fs1):
    X = recentered_dilated(build_measure(model_fs1, 4, BasePoint([0.0])), fubini_study(1))
    assert np.allclose(X.points[:, 0], [-1, -0.5, 0, 0.5, 1], atol=1e-15)
    assert np.allclose(X.probs, np.array([1, 4, 6, 4, 1]) / 16, atol=1e-15)


def test_dilation_keeps_probabilities_and_mean(model_fs2, fs2):
    mu = build_measure(model_fs2, 7, BasePoint([0.3, 0.2]))
    X = recentered_dilated(mu, fs2)
    assert np.array_equal(X.probs, mu.probabilities)
    expect = np.sqrt(7) * (moments(mu).mean - fs2.grad([0.3, 0.2]))
    assert np.allclose(X.probs @ X.points, expect, atol=1e-13)


def test_char_fn_basic(model_fs2, fs2):
    mu = build_measure(model_fs2, 6, BasePoint([0.3, -0.2]))
    assert char_fn(mu, fs2, [0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    t = np.array([0.7, -1.3])
    assert char_fn(mu, fs2, -t) == pytest.approx(np.conj(char_fn(mu, fs2, t)), abs=1e-15)
    grid = np.random.default_rng(3).uniform(-3, 3, (50, 2))
    assert np.all(np.abs(char_fn(mu, fs2, grid)) <= 1 + 1e-14)


def test_char_fn_matches_binomial(model_fs1, fs1):
    rng = np.random.default_rng(11)
    for rho, k in ((0.0, 9), (1.0, 40)):
        p = p_of(rho)
        mu = build_measure(model_fs1, k, BasePoint([rho]))
        for t in rng.uniform(-3, 3, 20):
            s = t / np.sqrt(k)
            expect = np.exp(1j * t * np.sqrt(k) * p) * (1 - p + p * np.exp(-1j * s)) ** k
            assert abs(char_fn(mu, fs1, [t]) - expect) <= 1e-12


def _fd_identities(model, rho, k, h=1e-5):
    m = model.dim
    rho = np.asarray(rho, float)
    mu = build_measure(model, k, BasePoint(rho))
    Pi = mu.density
    mom = moments(mu)
    d = mom.mean - model.phi.grad(rho)
    H = model.phi.hess(rho)
    P = lambda r: np.exp(log_density_at(model, k, r))
    grad = np.empty(m)
    hess = np.empty((m, m))
    E = np.eye(m) * h
    for i in range(m):
        grad[i] = (P(rho + E[i]) - P(rho - E[i])) / (2 * h)
        for j in range(m):
            hess[i, j] = (P(rho + E[i] + E[j]) - P(rho + E[i] - E[j])
                          - P(rho - E[i] + E[j]) + P(rho - E[i] - E[j])) / (4 * h * h)
    first = (grad / k, Pi * d, Pi * (np.abs(mom.mean) + np.abs(model.phi.grad(rho))))
    bracket = mom.covariance + np.outer(d, d) - H / k
    scale = Pi * (np.abs(mom.covariance) + np.abs(np.outer(d, d)) + np.abs(H) / k)
    second = (hess / k**2, Pi * bracket, scale)
    return first, second


@pytest.mark.parametrize("which", ["fs1", "fs2", "pfs1"])
def test_derivative_identities(which, request):
    model = BergmanModel(request.getfixturevalue(which))
    rho = np.full(model.dim, 0.35)
    for k in (10, 40):
        for lhs, rhs, scale in _fd_identities(model, rho, k):
            assert np.all(np.abs(lhs - rhs) <= 1e-5 * np.maximum(np.abs(rhs), scale))


def test_constant_gauge_leaves_measure_unchanged(fs2):
    a = build_measure(BergmanModel(fs2), 8, BasePoint([0.2, 0.1]))
    b = build_measure(BergmanModel(shifted_potential(fs2, const=1.7)), 8, BasePoint([0.2, 0.1]))
    assert np.max(np.abs(a.probabilities - b.probabilities)) <= 1e-12
    assert b.log_density == pytest.approx(a.log_density, abs=1e-10)


def test_lattice_translation_shifts_atoms(fs1):
    k = 9
    a = build_measure(BergmanModel(fs1), k, BasePoint([0.4]))
    b = build_measure(BergmanModel(shifted_potential(fs1, linear=[1])), k, BasePoint([0.4]))
    assert np.array_equal(b.alphas, a.alphas + k)
    assert np.max(np.abs(a.probabilities - b.probabilities)) <= 1e-12


def test_law_of_large_numbers(model_fs1, fs1):
    k = 400
    for rho in (0.0, 1.0):
        mu = build_measure(model_fs1, k, BasePoint([rho]))
        assert mass_outside(mu, fs1.grad([rho]), k ** (-1 / 3)) <= 1e-3


def test_perturbed_mean_error_is_not_zero():
    model = BergmanModel(perturbed_potential(fubini_study(1), 0.05))
    mu = build_measure(model, 25, BasePoint([0.3]))
    assert abs(moments(mu).mean[0] - model.phi.grad([0.3])[0]) > 1e-6


def test_csv_and_json_output(model_fs2, tmp_path):
    mu = build_measure(model_fs2, 2, BasePoint([0.0, 0.0]))
    path = write_measure_csv(mu, tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha_0,alpha_1,weight,normalized_weight"
    assert len(lines) == 7
    summary = json.loads(write_measure_json(mu, tmp_path / "m.json").read_text())
    assert summary["density"] == pytest.approx(12.0)
    assert np.allclose(summary["mean"], [1 / 3, 1 / 3])


@given(st.floats(-3, 3), st.integers(1, 40))
def test_hypothesis_fs1_probabilities_sum_to_one(rho, k):
    mu = build_measure(BergmanModel(fubini_study(1)), k, BasePoint([rho]))
    assert abs(mu.probabilities.sum() - 1) <= 1e-12
    assert np.all(mu.probabilities >= 0)
