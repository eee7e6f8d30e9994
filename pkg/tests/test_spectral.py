import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mtbranch.model import mean_data
from mtbranch.spectral import (ConvergenceError, alpha_u, biased_laws, conjugated_generator, derived_generators,
                               matrix_exponential, perron, project_simplex, rate_function, rate_function_solution,
                               retrospective_generator, simplex_grid, spectral_data, stationary_distribution,
                               time_reversal, two_state_rate, variational_lambda)

from conftest import valid_models

SQRT_HALF = math.sqrt(0.5)


def m2_oracle():
    # A = [[0, 1/2], [1, 0]]: right eigenvector (1, sqrt 2), left (sqrt 2, 1), then normalize
    pi = np.array([math.sqrt(2), 1.0])
    pi /= pi.sum()
    h = np.array([1.0, math.sqrt(2)])
    h /= pi @ h
    return pi, h


def test_perron_examples(spec1, spec2, spec3):
    assert spec1.lam == pytest.approx(1.0, abs=1e-12)
    assert spec1.pi.tolist() == pytest.approx([1.0]) and spec1.h.tolist() == pytest.approx([1.0])
    assert spec3.lam == pytest.approx(0.5, abs=1e-12)
    pi, h = m2_oracle()
    assert spec2.lam == pytest.approx(SQRT_HALF, abs=1e-12)
    np.testing.assert_allclose(spec2.pi, pi, atol=1e-12)
    np.testing.assert_allclose(spec2.h, h, atol=1e-12)
    np.testing.assert_allclose(spec2.pi, [0.585786, 0.414214], atol=1e-6)
    np.testing.assert_allclose(spec2.h, [0.853553, 1.207107], atol=1e-6)
    np.testing.assert_allclose(spec2.alpha, [0.5, 0.5], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(valid_models())
def test_perron_invariants(model):
    spec = spectral_data(model)
    A = spec.A
    scale = max(np.max(np.abs(A)), 1.0)
    assert np.all(spec.pi > 0) and np.all(spec.h > 0)
    assert np.max(np.abs(A @ spec.h - spec.lam * spec.h) / spec.h) < 1e-10 * scale
    assert np.max(np.abs(spec.pi @ A - spec.lam * spec.pi) / spec.pi) < 1e-10 * scale
    assert math.fsum(spec.pi) == pytest.approx(1.0, abs=1e-12)
    assert spec.pi @ spec.h == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(spec.alpha, spec.pi * spec.h, atol=1e-12)
    assert math.fsum(spec.alpha) == pytest.approx(1.0, abs=1e-12)
    assert spec.lam == pytest.approx(max(np.linalg.eigvals(A).real), abs=1e-9)


def test_perron_reports_nonconvergence(m2):
    with pytest.raises(ConvergenceError, match="change"):
        perron(mean_data(m2).A, maxiter=3)


def test_retrospective_generator_examples(m1, m2, m3, spec1, spec2, spec3):
    c1 = retrospective_generator(m1, spec1)
    assert c1.holding_rates.tolist() == pytest.approx([2.0])
    np.testing.assert_allclose(c1.jump_probs, [[1.0]])
    np.testing.assert_allclose(c1.G, [[0.0]], atol=1e-12)
    c2 = retrospective_generator(m2, spec2)
    np.testing.assert_allclose(c2.G, [[-SQRT_HALF, SQRT_HALF], [SQRT_HALF, -SQRT_HALF]], atol=1e-12)
    np.testing.assert_allclose(c2.holding_rates, [1 + SQRT_HALF] * 2, atol=1e-12)
    np.testing.assert_allclose(c2.jump_probs[0], [0.585786, 0.414214], atol=1e-6)
    c3 = retrospective_generator(m3, spec3)
    np.testing.assert_allclose(c3.G, [[0.0]], atol=1e-12)
    assert c3.holding_rates.tolist() == pytest.approx([1.5])


@settings(max_examples=60, deadline=None)
@given(valid_models())
def test_generator_forms_agree(model):
    spec = spectral_data(model)
    chain = retrospective_generator(model, spec)
    np.testing.assert_allclose(chain.G, conjugated_generator(spec), atol=1e-12 * max(1, np.abs(chain.G).max()))
    np.testing.assert_allclose(chain.G.sum(axis=1), 0.0, atol=1e-12 * max(1, np.abs(chain.G).max()))
    np.testing.assert_allclose(chain.jump_probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(chain.G - np.diag(np.diag(chain.G)) >= 0)
    assert np.max(np.abs(spec.alpha @ chain.G)) < 1e-10 * max(1, np.abs(chain.G).max())
    derived = derived_generators(model, spec)
    np.testing.assert_allclose(derived.G_rev, time_reversal(chain.G, spec.alpha), atol=1e-12 * max(1, np.abs(chain.G).max()))
    np.testing.assert_allclose(stationary_distribution(derived.G_rev), spec.alpha, atol=1e-9)
    np.testing.assert_allclose(derived.G_tilde.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(derived.G_tilde + np.diag(spec.means.r), spec.A, atol=1e-12)


def test_derived_generator_examples(m1, m2, spec1, spec2):
    d2 = derived_generators(m2, spec2)
    np.testing.assert_allclose(d2.G_rev, retrospective_generator(m2, spec2).G, atol=1e-12)
    np.testing.assert_allclose(d2.G_tilde, [[-0.5, 0.5], [1.0, -1.0]], atol=1e-15)
    assert derived_generators(m1, spec1).G_tilde.tolist() == [[0.0]]


def test_self_jumps_merge_to_exit_rate(m2, spec2):
    chain = retrospective_generator(m2, spec2)
    exit_rate = chain.holding_rates[0] * (1 - chain.jump_probs[0, 0])
    assert exit_rate == pytest.approx(-chain.G[0, 0], abs=1e-12)
    assert exit_rate == pytest.approx(SQRT_HALF, abs=1e-12)


def test_biased_law_examples(m1, m2, m3, spec1, spec2, spec3):
    b1 = biased_laws(m1, spec1)
    assert b1.c.tolist() == pytest.approx([2.0])
    assert b1.p_hat[0].atoms() == [((2,), pytest.approx(1.0))]
    b2 = biased_laws(m2, spec2)
    hat1 = dict(b2.p_hat[0].atoms())
    assert hat1[(2, 0)] == pytest.approx(0.585786, abs=1e-6)
    assert hat1[(0, 1)] == pytest.approx(0.414214, abs=1e-6)
    assert b2.p_hat[1].atoms() == [((1, 1), pytest.approx(1.0))]
    b3 = biased_laws(m3, spec3)
    assert b3.p_hat[0].atoms() == [((2,), pytest.approx(1.0))]
    assert b3.p_tilde[0].atoms() == [((2,), pytest.approx(1.0))]


@settings(max_examples=60, deadline=None)
@given(valid_models())
def test_biased_laws_normalized(model):
    spec = spectral_data(model)
    assume(spec.means.row_means.min() > 0)
    laws = biased_laws(model, spec)
    assert np.all(laws.c > 0)
    for i, (hat, tilde) in enumerate(zip(laws.p_hat, laws.p_tilde)):
        assert math.fsum(hat.probs) == pytest.approx(1.0, abs=1e-12)
        assert math.fsum(tilde.probs) == pytest.approx(1.0, abs=1e-12)
        support = {c for c, _ in model.offspring[i].atoms() if sum(c) > 0}
        assert {c for c, _ in hat.atoms()} <= support
        assert {c for c, _ in tilde.atoms()} <= support
    if model.num_types == 1:
        # lam = a (m - 1) makes c = m, so both biasings coincide
        hat, tilde = laws.p_hat[0], laws.p_tilde[0]
        assert np.array_equal(hat.counts, tilde.counts)
        np.testing.assert_allclose(hat.probs, tilde.probs, atol=1e-12)


def test_rate_function_examples(m2, spec2):
    assert rate_function(np.zeros((1, 1)), [1.0]) == 0.0
    G = retrospective_generator(m2, spec2).G
    expected = SQRT_HALF * (math.sqrt(0.7) - math.sqrt(0.3)) ** 2
    assert rate_function(G, [0.7, 0.3]) == pytest.approx(expected, abs=1e-12)
    assert two_state_rate(G, [0.7, 0.3]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.059033, abs=1e-6)
    assert rate_function(G, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)


def test_rate_function_against_grid_over_v(m2, spec2):
    G = retrospective_generator(m2, spec2).G
    nu = np.array([0.7, 0.3])
    ws = np.linspace(-3, 3, 60001)
    vals = [-(nu[0] * (G[0, 0] + G[0, 1] * math.exp(w)) + nu[1] * (G[1, 0] * math.exp(-w) + G[1, 1])) for w in ws]
    assert rate_function(G, nu) == pytest.approx(max(vals), abs=1e-8)


def _random_generator(draw, n):
    rates = draw(st.lists(st.floats(0.05, 3.0), min_size=n * n, max_size=n * n))
    G = np.array(rates).reshape(n, n)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_rate_function_convex_and_zero_at_stationary(data):
    n = data.draw(st.integers(2, 4))
    G = _random_generator(data.draw, n)
    mu = stationary_distribution(G)
    assert rate_function(G, mu) == pytest.approx(0.0, abs=1e-8)
    p, q = (project_simplex(np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))) for _ in range(2))
    assume(np.all(p > 1e-3) and np.all(q > 1e-3))
    s = data.draw(st.floats(0.05, 0.95))
    mid = s * p + (1 - s) * q
    assert rate_function(G, mid) <= s * rate_function(G, p) + (1 - s) * rate_function(G, q) + 1e-8


def test_rate_function_matches_two_state_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.uniform(0.1, 3, size=2)
        G = np.array([[-a, a], [b, -b]])
        x = rng.uniform(0.01, 0.99)
        assert rate_function(G, [x, 1 - x]) == pytest.approx(two_state_rate(G, [x, 1 - x]), abs=1e-10)


def test_rate_function_rejects_off_simplex():
    G = np.array([[-1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(ValueError):
        rate_function(G, [0.7, 0.31])
    with pytest.raises(ValueError):
        rate_function(G, [1.1, -0.1])


def test_rate_function_on_boundary_uses_support():
    G = np.array([[-1.0, 1.0, 0.0], [0.5, -1.0, 0.5], [0.0, 2.0, -2.0]])
    value, v = rate_function_solution(G, [1.0, 0.0, 0.0])
    assert value == pytest.approx(1.0)
    assert v.tolist() == [1.0, 0.0, 0.0]


def test_variational_examples(m1, m2, m3, spec1, spec2, spec3):
    value, nu = variational_lambda(m1, spec1)
    assert value == pytest.approx(1.0, abs=1e-12) and nu.tolist() == [1.0]
    value, nu = variational_lambda(m3, spec3)
    assert value == pytest.approx(0.5, abs=1e-12)
    value, nu = variational_lambda(m2, spec2)
    assert value == pytest.approx(SQRT_HALF, abs=1e-6)
    assert 0.5 * np.abs(nu - 0.5).sum() < 1e-4
    G_tilde = derived_generators(m2, spec2).G_tilde
    spot = 0.75 - two_state_rate(G_tilde, [0.5, 0.5])
    assert spot == pytest.approx(SQRT_HALF, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(valid_models(max_types=3))
def test_variational_principle_recovers_lambda(model):
    spec = spectral_data(model)
    value, nu = variational_lambda(model, spec, starts=4)
    assert value == pytest.approx(spec.lam, abs=1e-6)


def test_simplex_grid_covers_simplex():
    grid = simplex_grid(3, 0.25)
    assert len(grid) == 15
    np.testing.assert_allclose(grid.sum(axis=1), 1.0)


def test_matrix_exponential_examples(spec2):
    A = spec2.A
    assert np.array_equal(matrix_exponential(A, 0.0), np.eye(2))
    E = matrix_exponential(A, 1.0)
    r = SQRT_HALF
    closed = math.cosh(r) * np.eye(2) + math.sinh(r) / r * A
    np.testing.assert_allclose(E, closed, rtol=1e-13)
    np.testing.assert_allclose(E, [[1.2605918, 0.5427208], [1.0854416, 1.2605918]], atol=1e-7)
    assert E[0].sum() == pytest.approx(1.803313, abs=1e-6)
    assert E[0] @ spec2.h == pytest.approx(math.exp(spec2.lam) * spec2.h[0], rel=1e-12)
    assert E[0] @ spec2.h == pytest.approx(1.731104, abs=1e-6)
    with pytest.raises(ValueError):
        matrix_exponential(A, -1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: st.lists(st.floats(-4, 4), min_size=n * n, max_size=n * n)),
       st.floats(0.0, 3.0))
def test_matrix_exponential_matches_scipy(entries, t):
    n = int(round(math.sqrt(len(entries))))
    A = np.array(entries).reshape(n, n)
    ref = scipy.linalg.expm(t * A)
    np.testing.assert_allclose(matrix_exponential(A, t), ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


@settings(max_examples=30, deadline=None)
@given(valid_models(), st.sampled_from([0.5, 1.0, 2.0]))
def test_matrix_exponential_eigen_relations(model, t):
    spec = spectral_data(model)
    E = matrix_exponential(spec.A, t)
    growth = math.exp(spec.lam * t)
    np.testing.assert_allclose(E @ spec.h, growth * spec.h, rtol=1e-8)
    np.testing.assert_allclose(spec.pi @ E, growth * spec.pi, rtol=1e-8)


def test_alpha_u_approaches_alpha(spec2):
    au = alpha_u(spec2, 8.0)
    assert math.fsum(au) == pytest.approx(1.0, abs=1e-12)
    assert 0.5 * np.abs(au - spec2.alpha).sum() < 0.01
    assert alpha_u(spec2, 0.0).tolist() == pytest.approx(spec2.pi.tolist())


def test_biased_laws_exact_on_periodic_cycle():
    # a 4-cycle with one slow type: the Perron vector carries a small residual
    from mtbranch.model import BranchingModel, OffspringLaw
    rows = [[0, 0, 0, 1], [0, 0, 1, 0], [1, 0, 0, 0], [0, 1, 0, 1]]
    model = BranchingModel(np.array([1.0, 1.0, 0.25, 1.0]),
                           tuple(OffspringLaw(np.array([r]), np.array([1.0])) for r in rows))
    laws = biased_laws(model, spectral_data(model))
    for law in laws.p_hat:
        assert math.fsum(law.probs) == pytest.approx(1.0, abs=1e-14)
