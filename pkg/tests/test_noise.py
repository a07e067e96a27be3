import numpy as np
import pytest

from spinfp.noise import (
    NoiseSpec,
    Scenario,
    add_noise,
    compare_methods,
    ir_scenario,
    width_study,
)
from spinfp.validation import ScenarioError


def first_sample(signal):
    return float(signal[0, 0])


def flaky(signal):
    # fails whenever the first noisy sample went negative
    if signal[0, 0] < 0.0:
        raise RuntimeError("detector glitch")
    return float(signal[0, 0])


def always_fails(signal):
    raise RuntimeError("broken estimator")


def toy_scenario(estimator=first_sample, truth=0.5):
    clean = np.full((8, 2), truth)
    return Scenario(name="toy", target="t1", truth=truth, clean_signal=clean,
                    estimator=estimator)


# ---------------------------------------------------------------------------
# add_noise
# ---------------------------------------------------------------------------

def test_zero_epsilon_is_identity():
    g = np.random.default_rng(0).normal(size=(20, 2))
    out = add_noise(g, NoiseSpec(0.0, seed=1))
    assert np.array_equal(out, g)
    assert out is not g


def test_same_seed_same_noise():
    g = np.zeros((10, 2))
    a = add_noise(g, NoiseSpec(0.3, seed=42))
    b = add_noise(g, NoiseSpec(0.3, seed=42))
    c = add_noise(g, NoiseSpec(0.3, seed=43))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_empirical_standard_deviation():
    # 1e5 independent perturbations of one sample component
    g = np.zeros((50000, 2))
    out = add_noise(g, NoiseSpec(0.25, seed=7))
    assert np.std(out) == pytest.approx(0.25, rel=0.01)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)


# ---------------------------------------------------------------------------
# width_study
# ---------------------------------------------------------------------------

def test_zero_noise_gives_zero_width():
    report = width_study(toy_scenario(), [0.0], draws=10, master_seed=3)
    assert report.widths[0] == 0.0
    assert report.means[0] == 0.5
    assert report.failures[0] == 0


def test_study_is_reproducible():
    a = width_study(toy_scenario(), [0.01, 0.1], draws=16, master_seed=5)
    b = width_study(toy_scenario(), [0.01, 0.1], draws=16, master_seed=5)
    assert np.array_equal(a.widths, b.widths)
    assert np.array_equal(a.means, b.means)


def test_adding_draws_keeps_existing_ones(tmp_path):
    ckpt_a = tmp_path / "a.csv"
    ckpt_b = tmp_path / "b.csv"
    width_study(toy_scenario(), [0.05], draws=4, master_seed=9,
                checkpoint=str(ckpt_a))
    width_study(toy_scenario(), [0.05], draws=8, master_seed=9,
                checkpoint=str(ckpt_b))

    def rows(path):
        out = {}
        for line in path.read_text().splitlines():
            ei, di, value = line.split(",")
            out[(int(ei), int(di))] = value
        return out

    small, big = rows(ckpt_a), rows(ckpt_b)
    for key, value in small.items():
        assert big[key] == value


def test_checkpoint_resume_matches_fresh_run(tmp_path):
    scenario = toy_scenario()
    fresh = width_study(scenario, [0.02], draws=12, master_seed=11)
    # interrupted run: only the first five draws finished
    ckpt = tmp_path / "resume.csv"
    partial = width_study(scenario, [0.02], draws=5, master_seed=11,
                          checkpoint=str(ckpt))
    resumed = width_study(scenario, [0.02], draws=12, master_seed=11,
                          checkpoint=str(ckpt))
    assert np.array_equal(resumed.widths, fresh.widths)
    assert np.array_equal(resumed.means, fresh.means)


def test_failures_are_counted_and_excluded():
    report = width_study(toy_scenario(estimator=flaky), [2.0], draws=20,
                         master_seed=1, min_success=0.1)
    assert report.failures[0] > 0
    assert np.isfinite(report.widths[0])


def test_too_many_failures_raise():
    with pytest.raises(ScenarioError):
        width_study(toy_scenario(estimator=always_fails), [0.01], draws=10,
                    master_seed=0)


def test_parallel_equals_serial():
    serial = width_study(ir_scenario("ir", 0.3, n_points=40), [0.05],
                         draws=6, master_seed=2)
    parallel = width_study(ir_scenario("ir", 0.3, n_points=40), [0.05],
                           draws=6, master_seed=2, n_workers=2)
    assert np.array_equal(serial.widths, parallel.widths)
    assert np.array_equal(serial.means, parallel.means)


def test_robust_width_option():
    report = width_study(toy_scenario(), [0.05], draws=30, master_seed=4,
                         robust=True)
    classic = width_study(toy_scenario(), [0.05], draws=30, master_seed=4)
    assert report.widths[0] == pytest.approx(classic.widths[0], rel=0.5)


def test_width_converges_with_draws():
    # doubling draws moves the width by less than two standard errors
    scenario = ir_scenario("ir", 0.3, n_points=60)
    reports = [width_study(scenario, [0.05], draws=n, master_seed=6)
               for n in (30, 60, 120)]
    for small, big in zip(reports, reports[1:]):
        se = np.hypot(small.width_standard_errors()[0],
                      big.width_standard_errors()[0])
        assert abs(small.widths[0] - big.widths[0]) < 2.0 * se


def test_mean_is_unbiased_for_exact_model():
    scenario = ir_scenario("ir", 0.3, n_points=60)
    report = width_study(scenario, [0.02, 0.05], draws=30, master_seed=8)
    for mean, width in zip(report.means, report.widths):
        assert abs(mean - 0.3) < 3.0 * width / np.sqrt(report.draws)


# ---------------------------------------------------------------------------
# compare_methods
# ---------------------------------------------------------------------------

def test_identical_reports_give_unit_ratios():
    report = width_study(toy_scenario(), [0.01, 0.1], draws=10, master_seed=3)
    table = compare_methods(report, report)
    assert np.all(table.ratios[table.defined] == 1.0)


def test_zero_width_denominator_flagged_not_infinite():
    a = width_study(toy_scenario(), [0.0, 0.1], draws=10, master_seed=3)
    table = compare_methods(a, a)
    assert not table.defined[0]
    assert np.isnan(table.ratios[0])
    assert table.defined[1]


def test_grid_mismatch_rejected():
    a = width_study(toy_scenario(), [0.01], draws=5, master_seed=3)
    b = width_study(toy_scenario(), [0.02], draws=5, master_seed=3)
    with pytest.raises(ValueError):
        compare_methods(a, b)
