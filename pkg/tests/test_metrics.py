import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepdistill.data import gmm_ring
from stepdistill.errors import ValidationError
from stepdistill.metrics import SampleEvaluator, frechet_distance, mode_metrics, overopt_monitor, prdc
from stepdistill.student import build_coarse_schedule, init_from_teacher
from stepdistill.verify import brute_force_prdc


def test_prdc_identical_sets():
    x = np.random.default_rng(0).normal(size=(30, 2))
    r = prdc(x, x, k=1)
    assert r.precision == 1 and r.recall == 1 and r.coverage == 1


def test_prdc_disjoint_sets():
    x = np.random.default_rng(0).normal(size=(30, 2))
    r = prdc(x, x + 1000.0, k=3)
    assert r.as_dict() == {"precision": 0.0, "recall": 0.0, "density": 0.0, "coverage": 0.0}


def test_prdc_line_example():
    real = np.array([[0.0], [1.0], [2.0]])
    fake = np.array([[0.1], [0.9], [5.0]])
    r = prdc(real, fake, k=1)
    # worked by hand: real radii all 1, fake radii 0.8, 0.8, 4.1
    assert (r.precision, r.recall, r.density, r.coverage) == (2 / 3, 1.0, 4 / 3, 2 / 3)
    assert (r.precision, r.recall, r.density, r.coverage) == brute_force_prdc(real, fake, 1)


def test_prdc_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(100):
        k = int(rng.integers(1, 5))
        n, m = rng.integers(k + 1, 33, size=2)
        real = rng.normal(size=(n, 2))
        fake = rng.normal(0.3, 1.2, size=(m, 2))
        r = prdc(real, fake, k)
        assert (r.precision, r.recall, r.density, r.coverage) == brute_force_prdc(real, fake, k)


def test_prdc_density_can_exceed_one():
    real = np.random.default_rng(1).normal(size=(200, 2))
    fake = np.zeros((20, 2))
    assert prdc(real, fake, k=5).density > 1


def test_prdc_too_few_points():
    with pytest.raises(ValidationError):
        prdc(np.zeros((3, 2)), np.zeros((10, 2)), k=3)


def test_frechet_identical_and_symmetric(rng):
    a, b = rng.normal(size=(500, 3)), rng.normal(0.2, 1.3, size=(400, 3))
    assert frechet_distance(a, a) < 1e-8
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-10)


def test_frechet_one_dimensional_shift():
    z = np.random.default_rng(3).normal(size=5000)
    z = (z - z.mean()) / z.std(ddof=1)
    # exact unit-variance fits one unit apart: distance is exactly 1
    assert frechet_distance(z, z + 1.0) == pytest.approx(1.0, abs=1e-10)
    w = np.random.default_rng(4).normal(size=5000)
    assert frechet_distance(z, w + 1.0) == pytest.approx(1.0, abs=0.1)


def test_frechet_grows_with_mean_shift(rng):
    a = rng.normal(size=(300, 2))
    vals = [frechet_distance(a, a + s) for s in np.linspace(0, 3, 7)]
    assert np.all(np.diff(vals) > 0)


def test_frechet_rejects_tiny_sets():
    with pytest.raises(ValidationError):
        frechet_distance(np.zeros((2, 3)), np.zeros((5, 3)))


def test_mode_metrics_examples():
    d = gmm_ring()
    collapsed = np.repeat(d.mode_means[:1], 100, axis=0)
    assert mode_metrics(collapsed, d)["covered"] == 1
    uniform = np.repeat(d.mode_means, 10, axis=0)
    out = mode_metrics(uniform, d)
    assert out["covered"] == 8
    np.testing.assert_allclose(out["mass"], 1 / 8)


def test_monitor_healthy_run():
    e = np.arange(30)
    assert overopt_monitor(0.1 * e, 5.0 - 0.1 * e) == (False, None)


def test_monitor_flags_v_shaped_fid():
    e = np.arange(40)
    fid = np.abs(e - 20.0)
    flagged, at = overopt_monitor(e.astype(float), fid, window=5)
    # trailing 5-epoch slope first turns positive for the window 19..23
    assert flagged and at == 23
    assert abs(at - 20) <= 5


def test_monitor_constant_curves():
    assert overopt_monitor(np.ones(20), np.ones(20)) == (False, None)


def test_monitor_argument_errors():
    with pytest.raises(ValidationError):
        overopt_monitor(np.ones(20), np.ones(19))
    with pytest.raises(ValidationError):
        overopt_monitor(np.ones(9), np.ones(9), window=5)


@settings(max_examples=30, deadline=None)
@given(st.integers(6, 40), st.integers(6, 40), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_prdc_ranges(n, m, k, seed):
    rng = np.random.default_rng(seed)
    r = prdc(rng.normal(size=(n, 2)), rng.normal(size=(m, 2)), k)
    for v in (r.precision, r.recall, r.coverage):
        assert 0 <= v <= 1
    assert r.density >= 0


def test_evaluator_teacher_beats_truncated_student(teacher, schedule, data):
    ev = SampleEvaluator(data, n_samples=1024)
    from stepdistill.diffusion import sample_reverse

    t = ev.evaluate_samples(sample_reverse(teacher, schedule, 1024, record=False, seed=1, cond=ev.conditions()).finals)
    s = ev(init_from_teacher(teacher, schedule, build_coarse_schedule(50, 5)))
    assert t["covered_modes"] == 8
    assert s["fid"] > t["fid"]
