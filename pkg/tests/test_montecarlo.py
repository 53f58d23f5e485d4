import os

import numpy as np
import pytest

from ctsrivc.cli import repro_params
from ctsrivc.efficiency import CovKind
from ctsrivc.efficiency import stationary_second_moment
from ctsrivc.lti import Hold
from ctsrivc.lti import c2d
from ctsrivc.lti import filter_ct
from ctsrivc.lti import tf_to_ss
from ctsrivc.lti import theta_to_tf
from ctsrivc.montecarlo import INPUT_STREAM
from ctsrivc.montecarlo import NOISE_STREAM
from ctsrivc.montecarlo import AllRunsFailed
from ctsrivc.montecarlo import ExperimentConfig
from ctsrivc.montecarlo import check_excitation
from ctsrivc.montecarlo import covariance_vs_runs
from ctsrivc.montecarlo import empirical_covariance
from ctsrivc.montecarlo import gaussian_coverage
from ctsrivc.montecarlo import generate_input
from ctsrivc.montecarlo import load_result
from ctsrivc.montecarlo import run_experiment
from ctsrivc.montecarlo import save_result
from ctsrivc.montecarlo import simulate_system
from ctsrivc.montecarlo import sweep_sample_size
from ctsrivc.montecarlo import trial_rng
from ctsrivc.montecarlo import write_runs_vs_cov
from ctsrivc.montecarlo import write_variance_vs_N
from ctsrivc.SRIVCutils import load_config
from ctsrivc.SRIVCutils import read_csv_rows
from ctsrivc.SRIVCutils import save_config


def _config(**kwargs):
    params = {'system': {'a': [0.1], 'b': [10.0]}, 'T': 0.01, 'N': 1000, 'runs': 8,
              'seed': 11, 'srivc': {'epsilon': 1e-10}}
    params.update(kwargs)
    return ExperimentConfig.from_dict(params)


#### data generation
def test_generate_input_variance():
    u = generate_input(1000000, 1.0, trial_rng(0, 1000000, 0, INPUT_STREAM))
    assert 0.99 <= np.var(u) <= 1.01
    assert abs(np.mean(u)) < 5e-3


def test_generate_input_is_deterministic():
    a = generate_input(1000, 2.0, trial_rng(42, 1000, 7, INPUT_STREAM))
    b = generate_input(1000, 2.0, trial_rng(42, 1000, 7, INPUT_STREAM))
    c = generate_input(1000, 2.0, trial_rng(42, 1000, 8, INPUT_STREAM))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_generate_input_rejects_bad_arguments(rng):
    with pytest.raises(ValueError):
        generate_input(0, 1.0, rng)
    with pytest.raises(ValueError):
        generate_input(10, 0.0, rng)


def test_input_and_noise_streams_are_independent():
    N = 1000000
    u = generate_input(N, 1.0, trial_rng(5, N, 0, INPUT_STREAM))
    e = trial_rng(5, N, 0, NOISE_STREAM).standard_normal(N)
    for lag in range(11):
        corr = np.mean(u[lag:] * e[:N - lag])
        assert abs(corr) < 5e-3


def test_simulate_system_noise_free(first_order, rng):
    u = rng.standard_normal(500)
    data = simulate_system(u, first_order, 0.0, 0.01, Hold.ZOH, rng)
    assert np.array_equal(data.y, filter_ct(theta_to_tf(first_order), u, 0.01, Hold.ZOH))


def test_simulate_system_zero_input(first_order, rng):
    data, e = simulate_system(np.zeros(200000), first_order, 2.0, 0.01, Hold.ZOH, rng,
                              return_noise=True)
    assert np.array_equal(data.y, e)
    assert np.var(data.y) == pytest.approx(2.0, rel=0.02)


def test_simulate_system_signal_power(first_order, rng):
    u = rng.standard_normal(200000)
    data = simulate_system(u, first_order, 1.0, 0.01, Hold.ZOH, rng)
    x = filter_ct(theta_to_tf(first_order), u, 0.01, Hold.ZOH)
    ss = c2d(tf_to_ss(theta_to_tf(first_order)), 0.01, Hold.ZOH)
    power = stationary_second_moment(ss, 1.0)[0, 0]
    assert np.mean(x ** 2) == pytest.approx(power, rel=0.05)
    assert np.var(data.y - x) == pytest.approx(1.0, rel=0.02)


#### config
def test_config_round_trip(tmp_path):
    cfg = _config(N=[500, 1000], srivc={'output_hold': 'foh', 'epsilon': 1e-10},
                  label='variant')
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    path = str(tmp_path / 'config.json')
    save_config(cfg.to_dict(), path)
    assert ExperimentConfig.from_dict(load_config(path)) == cfg


def test_config_defaults():
    cfg = _config()
    assert cfg.lam == 1.0
    assert cfg.input_hold is Hold.ZOH
    assert cfg.srivc.theta_init == cfg.theta_sys
    assert cfg.srivc.max_iter == 200 and cfg.srivc.epsilon == 1e-10


def test_config_validation():
    with pytest.raises(ValueError):
        _config(runs=0)
    with pytest.raises(ValueError):
        _config(input_variance=0.0)
    with pytest.raises(ValueError):
        _config(N=1)
    with pytest.raises(ValueError):
        _config(**{'lambda': -1.0})
    with pytest.raises(ValueError):
        _config(noise='white')
    with pytest.raises(TypeError):
        ExperimentConfig.from_dict({'system': {'a': [0.1], 'b': [10.0]}, 'N': 100})


#### experiments
def test_noise_free_experiment_has_zero_covariance():
    res = run_experiment(_config(runs=10, **{'lambda': 0.0}))
    assert res.convergence_rate == 1.0
    assert res.empirical_cov.kind is CovKind.EMPIRICAL
    assert np.max(np.abs(res.empirical_cov.matrix)) < 1e-10
    assert res.crlb is None


def test_experiment_result_fields():
    res = run_experiment(_config(runs=6))
    assert res.runs == 6
    assert res.per_run_estimates.shape == (6, 2)
    assert res.empirical_cov.stderr.shape == (2, 2)
    assert res.crlb.kind is CovKind.CRLB
    assert 0.0 <= res.coverage <= 1.0
    matrix, _ = empirical_covariance(res.included_estimates(), res.config.theta_sys, 1000)
    assert np.allclose(res.empirical_cov.matrix, matrix)


def test_experiment_independent_of_worker_count():
    one = run_experiment(_config(runs=6, parallelism=1))
    two = run_experiment(_config(runs=6, parallelism=2))
    assert np.array_equal(one.per_run_estimates, two.per_run_estimates)
    assert np.array_equal(one.empirical_cov.matrix, two.empirical_cov.matrix)


def test_experiment_discard_changes_data():
    plain = run_experiment(_config(runs=3))
    warm = run_experiment(_config(runs=3, discard=200))
    assert not np.array_equal(plain.per_run_estimates, warm.per_run_estimates)


def test_all_runs_failing_raises():
    with pytest.raises(AllRunsFailed) as info:
        run_experiment(_config(runs=3, srivc={'max_iter': 1, 'epsilon': 1e-10}))
    assert len(info.value.failures) == 3


def test_experiment_requires_single_sample_size():
    with pytest.raises(ValueError):
        run_experiment(_config(N=[500, 1000]))


def test_sweep_without_noise():
    results = sweep_sample_size(_config(N=[300, 600], runs=3, **{'lambda': 0.0}))
    assert [r.N for r in results] == [300, 600]
    for r in results:
        assert np.max(np.abs(r.empirical_cov.matrix)) < 1e-10


#### aggregation
def test_empirical_covariance_formula(first_order):
    est = first_order.as_array() + np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 0.0]])
    matrix, stderr = empirical_covariance(est, first_order, 10)
    assert np.allclose(matrix, [[20.0 / 3.0, 0.0], [0.0, 40.0 / 3.0]])
    outer11 = 10.0 * np.array([1.0, 0.0, 1.0])
    assert stderr[0, 0] == pytest.approx(np.std(outer11, ddof=1) / np.sqrt(3.0))


def test_covariance_vs_runs(first_order, rng):
    est = first_order.as_array() + 0.01 * rng.standard_normal((100, 2))
    est[5] = np.nan
    curve = covariance_vs_runs(est, first_order, 100, [10, 50, 99])
    assert [c[0] for c in curve] == [10, 50, 99]
    with pytest.raises(ValueError):
        covariance_vs_runs(est, first_order, 100, [100])


def test_gaussian_coverage(first_order, rng):
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    N = 400
    z = rng.multivariate_normal(np.zeros(2), P, size=100000)
    est = first_order.as_array() + z / np.sqrt(N)
    assert gaussian_coverage(est, first_order, N, P) == pytest.approx(0.95, abs=0.005)


#### excitation
def test_excitation_white_noise(rng):
    u = rng.standard_normal(10000)
    for order in (1, 5, 20):
        ok, report = check_excitation(u, order)
        assert ok
        assert report['rank'] == order


def test_excitation_constant_input():
    ok, report = check_excitation(np.ones(1000), 2)
    assert not ok
    assert report['rank'] == 1


def test_excitation_sinusoid():
    u = np.sin(0.3 * np.arange(2000))
    assert check_excitation(u, 2)[0]
    ok, report = check_excitation(u, 3)
    assert not ok
    assert report['rank'] == 2


def test_excitation_needs_data():
    with pytest.raises(ValueError):
        check_excitation(np.ones(15), 2)


#### files
def test_result_tables(tmp_path):
    res = run_experiment(_config(runs=5))
    included = res.included_estimates()
    curve = covariance_vs_runs(included, res.config.theta_sys, res.N, [2, included.shape[0]])
    path = str(tmp_path / 'runs_vs_cov.csv')
    write_runs_vs_cov(path, curve)
    header, rows = read_csv_rows(path)
    assert header == ['runs', 'entry', 'value', 'stderr']
    assert len(rows) == 2 * 3

    path = str(tmp_path / 'variance_vs_N.csv')
    write_variance_vs_N(path, [res])
    header, rows = read_csv_rows(path)
    assert header == ['N', 'parameter', 'empirical_variance', 'crlb_variance', 'variant']
    assert len(rows) == 2
    assert rows[0][4] == 'matched'


def test_save_and_load_result(tmp_path):
    res = run_experiment(_config(runs=3))
    path = str(tmp_path / 'result.pkl')
    save_result(res, path)
    loaded = load_result(path)
    assert np.array_equal(loaded.per_run_estimates, res.per_run_estimates)
    assert loaded.config == res.config
    assert os.path.isfile(path)


#### reference studies at reduced scale
@pytest.mark.slow
def test_desk_first_order_study():
    cfg = ExperimentConfig.from_dict(dict(repro_params(1, 'desk'), parallelism='auto'))
    res = run_experiment(cfg)
    emp, bound = res.empirical_cov.matrix, res.crlb.matrix
    assert np.all(np.abs(np.diag(emp) - np.diag(bound)) < 0.10 * np.diag(bound))
    assert abs(emp[0, 1] - bound[0, 1]) < 0.15 * abs(bound[0, 1])


@pytest.mark.slow
def test_desk_second_order_sweep():
    cfg = ExperimentConfig.from_dict(dict(repro_params(2, 'desk'), parallelism='auto'))
    foh_srivc = dict(cfg.srivc.to_dict(), instrument_input_hold='foh')
    matched = sweep_sample_size(cfg)
    foh = sweep_sample_size(cfg.replace(srivc=foh_srivc, label='foh_instrument'))
    last, last_foh = matched[-1], foh[-1]
    assert last.N == 100000
    ratio = np.diag(last.empirical_cov.matrix) / np.diag(last.crlb.matrix)
    assert np.all((ratio >= 0.8) & (ratio <= 1.3))
    var = np.diag(last.empirical_cov.matrix)
    var_foh = np.diag(last_foh.empirical_cov.matrix)
    assert np.all(var_foh[:2] > var[:2])


@pytest.fixture(scope='module')
def long_first_order_study():
    return run_experiment(_config(runs=5000, parallelism='auto'))


@pytest.mark.slow
def test_covariance_approaches_crlb_with_runs(long_first_order_study):
    res = long_first_order_study
    bound = res.crlb.matrix
    finite = np.all(np.isfinite(res.per_run_estimates), axis=1)
    curve = covariance_vs_runs(res.per_run_estimates, res.config.theta_sys, res.N,
                               [200, 1000, int(np.sum(finite))])
    deviation = [np.max(np.abs(m - bound) / np.abs(bound)) for _, m, _ in curve]
    band = [np.max(s / np.abs(bound)) for _, _, s in curve]
    for k in range(1, len(curve)):
        assert deviation[k] <= deviation[k - 1] + 2.0 * band[k]
    assert deviation[-1] <= 3.0 * band[-1] + 0.05


@pytest.mark.slow
def test_excluding_non_converged_runs_is_immaterial(long_first_order_study):
    res = long_first_order_study
    est = res.per_run_estimates
    finite = est[np.all(np.isfinite(est), axis=1)]
    everything, _ = empirical_covariance(finite, res.config.theta_sys, res.N)
    included, stderr = empirical_covariance(res.included_estimates(), res.config.theta_sys,
                                            res.N)
    assert res.convergence_rate > 0.95
    assert np.all(np.abs(everything - included) <= stderr)
