import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from connaware.objectives import (
    QuadraticTask,
    build_logistic_suite,
    build_quadratic_suite,
    check_curvature,
    client_noise,
    gradient_diversity_check,
    heterogeneity,
    load_suite,
    noise_block,
    save_suite,
    stochastic_gradient,
)


def identity_task(b, beta=1.0, noise_var=0.0):
    b = np.asarray(b, dtype=float)
    n, p = b.shape
    return QuadraticTask(np.broadcast_to(np.eye(p), (n, p, p)).copy(), b, 1.0, beta, noise_var)


def test_identity_curvature_gives_mean_optimum():
    b = np.random.default_rng(0).standard_normal((9, 4))
    assert np.allclose(identity_task(b).optimum(), b.mean(axis=0), atol=1e-14)


def test_zero_spread_is_homogeneous():
    task, prof = build_quadratic_suite(12, 5, 1.0, 4.0, 0.0, seed=1)
    assert prof.delta == 0.0 and prof.gamma == 0.0
    assert np.allclose(prof.x_star, 0)


def test_two_client_hand_values():
    task = identity_task([[1.0, 0.0], [-1.0, 0.0]])
    prof = heterogeneity(task)
    assert np.allclose(prof.x_star, 0)
    assert prof.delta == pytest.approx(1.0)
    assert prof.gamma == pytest.approx(0.5)


def test_suite_shapes_and_spectra():
    task, prof = build_quadratic_suite(70, 10, 1.0, 4.0, 5.0, seed=3)
    assert task.Q.shape == (70, 10, 10) and task.b.shape == (70, 10)
    lo, hi = check_curvature(task)
    assert lo == pytest.approx(1.0, abs=1e-9) and hi == pytest.approx(4.0, abs=1e-9)
    for Qi in task.Q:
        w = np.linalg.eigvalsh(Qi)
        assert w.min() >= 1.0 - 1e-9 and w.max() <= 4.0 + 1e-9
    assert np.all(np.linalg.norm(task.b, axis=1) <= 5.0 + 1e-12)


def test_optimum_zeroes_the_full_gradient():
    task, prof = build_quadratic_suite(70, 10, 1.0, 4.0, 10.0, seed=8)
    assert np.linalg.norm(task.full_grad(prof.x_star)) <= 1e-10


def test_gamma_is_loss_at_optimum():
    task, prof = build_quadratic_suite(20, 4, 0.5, 2.0, 3.0, seed=2)
    assert prof.gamma == pytest.approx(task.loss(prof.x_star), rel=1e-14)
    assert prof.delta == pytest.approx(2.0 * np.max(np.linalg.norm(task.b - prof.x_star, axis=1)))


def test_suite_is_reproducible():
    a, _ = build_quadratic_suite(10, 3, 1.0, 4.0, 2.0, seed=9)
    b, _ = build_quadratic_suite(10, 3, 1.0, 4.0, 2.0, seed=9)
    c, _ = build_quadratic_suite(10, 3, 1.0, 4.0, 2.0, seed=10)
    assert np.array_equal(a.Q, b.Q) and np.array_equal(a.b, b.b)
    assert not np.array_equal(a.b, c.b)


def test_local_minimum_is_zero_at_b():
    task, _ = build_quadratic_suite(5, 3, 1.0, 4.0, 2.0, seed=0)
    for i in range(5):
        assert task.local_loss(i, task.b[i]) == 0.0
        assert np.array_equal(task.grad(i, task.b[i]), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_strong_convexity_and_smoothness(seed):
    task, _ = build_quadratic_suite(6, 5, 1.0, 4.0, 3.0, seed=seed % 1000)
    rng = np.random.default_rng(seed)
    for i in range(task.n):
        x, y = rng.standard_normal((2, 5)) * 3
        dg = task.grad(i, x) - task.grad(i, y)
        d = x - y
        assert dg @ d >= task.mu * d @ d - 1e-9
        assert np.linalg.norm(dg) <= task.beta * np.linalg.norm(d) + 1e-9


def test_gradient_matches_central_differences():
    task, _ = build_quadratic_suite(4, 6, 1.0, 4.0, 2.0, seed=5)
    x = np.random.default_rng(1).standard_normal(6)
    h = 1e-5
    for i in range(task.n):
        fd = np.array([(task.local_loss(i, x + h * e) - task.local_loss(i, x - h * e)) / (2 * h) for e in np.eye(6)])
        g = task.grad(i, x)
        assert np.max(np.abs(fd - g)) / np.max(np.abs(g)) <= 1e-6


def test_stochastic_gradient_noiseless_cases():
    task, _ = build_quadratic_suite(3, 4, 1.0, 4.0, 2.0, seed=0)
    x = np.ones(4)
    assert np.array_equal(stochastic_gradient(task, 1, x, 7), task.Q[1] @ (x - task.b[1]))
    assert np.array_equal(stochastic_gradient(task, 2, task.b[2], 7), np.zeros(4))


def test_stochastic_gradient_mean_and_variance():
    rho, p = 0.5, 10
    task, _ = build_quadratic_suite(2, p, 1.0, 4.0, 2.0, seed=0, noise_var=rho**2)
    x = np.full(p, 0.3)
    draws = np.array([stochastic_gradient(task, 0, x, s) for s in range(100_000)])
    g = task.grad(0, x)
    assert np.all(np.abs(draws.mean(axis=0) - g) <= 3 * rho / np.sqrt(100_000 * p))
    total_var = np.sum(draws.var(axis=0))
    assert total_var == pytest.approx(rho**2, rel=0.02)


def test_noise_block_matches_per_client_draws():
    task, _ = build_quadratic_suite(5, 3, 1.0, 4.0, 2.0, seed=0, noise_var=0.25)
    blk = noise_block(task, 11, 4, 6)
    for i in range(5):
        assert np.array_equal(blk[i], client_noise(task, 11, 4, i, 6))


def test_diversity_at_optimum_and_homogeneous():
    task, prof = build_quadratic_suite(15, 4, 1.0, 4.0, 3.0, seed=2)
    rep = gradient_diversity_check(task, prof, [prof.x_star])
    assert not rep.violations
    G = task.grads(np.broadcast_to(prof.x_star, (15, 4)))
    assert np.max(np.linalg.norm(G - G.mean(axis=0), axis=1)) <= prof.delta + 1e-12
    homo, hp = build_quadratic_suite(15, 4, 1.0, 4.0, 0.0, seed=2)
    pts = np.random.default_rng(0).standard_normal((20, 4)) * 5
    assert not gradient_diversity_check(homo, hp, pts).violations


def test_diversity_on_random_points():
    task, prof = build_quadratic_suite(70, 10, 1.0, 4.0, 10.0, seed=4)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((100, 10))
    pts = prof.x_star + dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * 10 * rng.random((100, 1))
    rep = gradient_diversity_check(task, prof, pts)
    assert rep.n_points == 100 and not rep.violations


def test_suite_file_round_trip():
    task, _ = build_quadratic_suite(4, 3, 1.0, 4.0, 2.0, seed=6, noise_var=0.1)
    buf = io.StringIO()
    save_suite(task, buf)
    back = load_suite(buf.getvalue().splitlines())
    assert np.array_equal(back.Q, task.Q) and np.array_equal(back.b, task.b)
    assert (back.mu, back.beta, back.noise_var) == (task.mu, task.beta, task.noise_var)


@pytest.mark.parametrize("kw", [dict(mu=0.0), dict(mu=5.0), dict(spread=-1.0)])
def test_suite_rejects_bad_parameters(kw):
    args = dict(n=3, p=2, mu=1.0, beta=4.0, spread=1.0, seed=0)
    args.update(kw)
    with pytest.raises(ValueError):
        build_quadratic_suite(**args)


def test_logistic_suite_optimum_and_constants():
    task, prof = build_logistic_suite(10, 5, 30, 0.1, seed=0)
    assert np.linalg.norm(task.full_grad(prof.x_star)) <= 1e-9
    assert task.mu == 0.1 and task.beta > task.mu
    for i in range(task.n):
        assert np.linalg.norm(task.grad(i, task.local_minimizers()[i])) <= 1e-9
    assert prof.gamma >= 0 and prof.delta > 0
