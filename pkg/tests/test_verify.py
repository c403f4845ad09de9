import numpy as np
import pytest

from stepdistill.errors import DomainError, ValidationError
from stepdistill.nets import Denoiser, LinearDenoiser
from stepdistill.schedule import build_schedule
from stepdistill.verify import (
    chapman_kolmogorov_gap, compose_kernel_grid, default_grid, gradcheck, linear_chain_moments, rl_gradcheck_problem,
    run_suite,
)


@pytest.fixture(scope="module")
def sched():
    return build_schedule("linear", 50)


@pytest.fixture(scope="module")
def lin():
    return LinearDenoiser(np.array([[0.3, 0.1], [-0.2, 0.5]]), np.array([0.1, -0.2]))


def test_single_step_kernel_is_gaussian(sched):
    net = Denoiser(1, (16,), 4, 0, 50, seed=2)
    rep = compose_kernel_grid(net, sched, 20, 19, np.array([0.4]))
    assert rep.density.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert abs(rep.excess_kurtosis[0]) < 1e-3 and abs(rep.skew[0]) < 1e-3
    assert rep.modes == 1 and rep.is_gaussian


def test_linear_chain_matches_closed_form_2d(sched, lin):
    x = np.array([1.0, -0.5])
    rep = compose_kernel_grid(lin, sched, 30, 20, x, default_grid(lin, sched, 30, 20, x, n=128))
    m, c = linear_chain_moments(lin, sched, 30, 20, x)
    np.testing.assert_allclose(rep.mean, m, atol=1e-6)
    np.testing.assert_allclose(rep.covariance, c, atol=1e-6)
    assert rep.is_gaussian


def test_linear_chain_matches_closed_form_1d(sched):
    lin1 = LinearDenoiser(np.array([[0.4]]), np.array([0.2]))
    rep = compose_kernel_grid(lin1, sched, 40, 5, np.array([0.7]))
    m, c = linear_chain_moments(lin1, sched, 40, 5, np.array([0.7]))
    assert rep.mean[0] == pytest.approx(m[0], abs=1e-6)
    assert rep.covariance[0, 0] == pytest.approx(c[0, 0], abs=1e-6)


def test_chapman_kolmogorov(sched):
    net = Denoiser(2, (16, 16), 8, 0, 50, seed=3)
    x = np.array([0.5, -1.0])
    assert chapman_kolmogorov_gap(net, sched, 30, 25, 20, x, grid=default_grid(net, sched, 30, 20, x, n=128)) < 1e-4


def test_coarse_grid_rejected(sched, lin):
    axes = (np.linspace(-5, 5, 16), np.linspace(-5, 5, 16))
    with pytest.raises(DomainError, match="coarse"):
        compose_kernel_grid(lin, sched, 30, 20, np.zeros(2), axes)


def test_small_grid_leaks(sched, lin):
    axes = (np.linspace(-0.3, 0.3, 64), np.linspace(-0.3, 0.3, 64))
    with pytest.raises(DomainError):
        compose_kernel_grid(lin, sched, 20, 15, np.array([1.0, -0.5]), axes)


def test_interval_validation(sched, lin):
    with pytest.raises(ValidationError):
        compose_kernel_grid(lin, sched, 10, 10, np.zeros(2))
    with pytest.raises(ValidationError):
        compose_kernel_grid(lin, sched, 60, 10, np.zeros(2))


def test_dump_text_round_trip(sched):
    net = Denoiser(1, (8,), 4, 0, 50)
    rep = compose_kernel_grid(net, sched, 20, 18, np.array([0.1]))
    text = rep.density.dump_text()
    assert text.startswith("# grid ")
    vals = np.loadtxt(text.splitlines()[1:])
    np.testing.assert_allclose(vals, rep.density.values, rtol=1e-9)


def test_gradcheck_quadratic():
    # central differences are exact on a quadratic, so only roundoff remains;
    # at the largest allowed step it is well under 1e-10
    assert gradcheck(lambda th: (0.5 * th @ th, th), np.linspace(-1, 2, 30), step=1e-3) < 1e-10


def test_gradcheck_warns_on_tiny_step():
    with pytest.warns(RuntimeWarning):
        gradcheck(lambda th: (0.5 * th @ th, th), np.ones(3), step=1e-12)


def test_gradcheck_catches_wrong_gradient():
    assert gradcheck(lambda th: (0.5 * th @ th, 2 * th), np.ones(3)) > 0.1


@pytest.mark.parametrize("kind", ["kl", "js", "chi2", "power", "renyi"])
def test_rl_loss_gradient(kind):
    loss_fn, theta = rl_gradcheck_problem(divergence=kind)
    assert gradcheck(loss_fn, theta) < 1e-4


def test_suite_passes_without_teacher():
    results = run_suite()
    assert len(results) == 8
    assert all(r.passed for r in results), [(r.name, r.detail) for r in results if not r.passed]
