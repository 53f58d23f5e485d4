import logging

import numpy as np
import pytest

from ctsrivc.efficiency import crlb_asymptotic
from ctsrivc.lti import Hold
from ctsrivc.lti import Polynomial
from ctsrivc.lti import ThetaVector
from ctsrivc.lti import TransferFunction
from ctsrivc.lti import filter_ct
from ctsrivc.lti import is_hurwitz
from ctsrivc.montecarlo import generate_input
from ctsrivc.montecarlo import simulate_system
from ctsrivc.SRIVC import CsvFormatError
from ctsrivc.SRIVC import DataRecord
from ctsrivc.SRIVC import NonHurwitzIterate
from ctsrivc.SRIVC import SingularNormalMatrix
from ctsrivc.SRIVC import SrivcConfig
from ctsrivc.SRIVC import _iterate
from ctsrivc.SRIVC import build_instrument
from ctsrivc.SRIVC import build_instrument_cascade
from ctsrivc.SRIVC import build_regressor
from ctsrivc.SRIVC import prefilter_output
from ctsrivc.SRIVC import srivc_estimate
from ctsrivc.SRIVC import srivc_step
from ctsrivc.SRIVC import theoretical_output
from ctsrivc.SRIVC import theoretical_regressor
from ctsrivc.SRIVC import theoretical_srivc_estimate
from ctsrivc.SRIVC import verify_converging_point
from ctsrivc.SRIVCutils import format_float

T1 = 0.01


def _data(theta, N, lam, seed, T=T1, hold=Hold.ZOH):
    rng = np.random.default_rng(seed)
    u = generate_input(N, 1.0, rng)
    return simulate_system(u, theta, lam, T, hold, rng, return_noise=True)


def _rel(a, b):
    return np.linalg.norm(a.as_array() - b.as_array()) / np.linalg.norm(b.as_array())


#### settings
def test_config_defaults(first_order):
    cfg = SrivcConfig(first_order, T1)
    assert cfg.max_iter == 200
    assert cfg.epsilon == 1e-12
    assert cfg.instrument_input_hold is cfg.input_hold


def test_config_validation(first_order):
    with pytest.raises(TypeError):
        SrivcConfig(T=T1)
    with pytest.raises(ValueError):
        SrivcConfig(first_order, T1, max_iter=0)
    with pytest.raises(ValueError):
        SrivcConfig(first_order, T1, epsilon=0.0)
    with pytest.raises(NonHurwitzIterate):
        SrivcConfig(ThetaVector([-0.1], [10.0]), T1)


def test_config_dict_round_trip(first_order):
    cfg = SrivcConfig(first_order, T1, output_hold='foh', instrument_input_hold='foh')
    assert SrivcConfig.from_dict(cfg.to_dict(), T=T1) == cfg


#### prefilter and regressor
def test_prefilter_trivial_denominator(rng):
    y = rng.standard_normal(100)
    assert np.array_equal(prefilter_output(y, Polynomial([1.0]), T1, Hold.ZOH), y)


def test_prefilter_step():
    yf = prefilter_output(np.ones(100), Polynomial([0.1, 1.0]), T1, Hold.ZOH)
    assert np.allclose(yf, 1.0 - np.exp(-10.0 * np.arange(100) * T1), atol=1e-12)


def test_prefilter_linear(rng):
    A = Polynomial([0.1, 1.0])
    y1, y2 = rng.standard_normal((2, 500))
    lhs = prefilter_output(3.0 * y1 + y2, A, T1, Hold.FOH)
    rhs = 3.0 * prefilter_output(y1, A, T1, Hold.FOH) + prefilter_output(y2, A, T1, Hold.FOH)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_prefilter_rejects_unstable():
    with pytest.raises(NonHurwitzIterate):
        prefilter_output(np.ones(10), Polynomial([-0.1, 1.0]), T1, Hold.ZOH)


def test_regressor_zero_output(first_order, rng):
    data = DataRecord(rng.standard_normal(300), np.zeros(300), T1)
    phi = build_regressor(data, first_order, SrivcConfig(first_order, T1))
    assert phi.shape == (300, 2)
    assert np.all(phi[:, 0] == 0.0)


def test_regressor_input_entry_is_lag_step(first_order):
    data = DataRecord(np.ones(200), np.zeros(200), T1)
    phi = build_regressor(data, first_order, SrivcConfig(first_order, T1))
    assert np.allclose(phi[:, 1], 1.0 - np.exp(-10.0 * np.arange(200) * T1), atol=1e-12)


@pytest.mark.parametrize('hold', [Hold.ZOH, Hold.FOH])
def test_regressor_reconstructs_output(first_order, rng, hold):
    y = rng.standard_normal(2000)
    data = DataRecord(rng.standard_normal(2000), y, T1)
    cfg = SrivcConfig(first_order, T1, output_hold=hold)
    phi = build_regressor(data, first_order, cfg)
    yf = prefilter_output(y, first_order.A, T1, hold)
    assert np.max(np.abs(0.1 * (-phi[:, 0]) + yf - y)) < 1e-10


#### instrument
def test_instrument_zero_input(first_order):
    data = DataRecord(np.zeros(100), np.ones(100), T1)
    zeta = build_instrument(data, first_order, SrivcConfig(first_order, T1))
    assert np.all(zeta == 0.0)


def test_instrument_zero_numerator(first_order, rng):
    theta = ThetaVector([0.1], [0.0])
    data = DataRecord(rng.standard_normal(100), np.zeros(100), T1)
    zeta = build_instrument(data, theta, SrivcConfig(first_order, T1))
    assert np.all(zeta[:, 0] == 0.0)
    assert np.any(zeta[:, 1] != 0.0)


def test_instrument_single_pass_differs_from_cascade(first_order, rng):
    data = DataRecord(rng.standard_normal(5000), np.zeros(5000), T1)
    cfg = SrivcConfig(first_order, T1)
    one_pass = build_instrument(data, first_order, cfg)
    two_pass = build_instrument_cascade(data, first_order, cfg)
    scale = np.max(np.abs(one_pass[:, 0]))
    assert np.max(np.abs(one_pass[:, 0] - two_pass[:, 0])) > 1e-6 * scale
    # input-only entries are identical
    assert np.allclose(one_pass[:, 1], two_pass[:, 1], atol=1e-14)


def test_instrument_is_noise_free_sensitivity(first_order, rng):
    u = rng.standard_normal(1000)
    data = DataRecord(u, np.zeros(1000), T1)
    zeta = build_instrument(data, first_order, SrivcConfig(first_order, T1))
    tf = TransferFunction([-10.0, 0.0], Polynomial([0.1, 1.0]) ** 2)
    assert np.allclose(zeta[:, 0], filter_ct(tf, u, T1, Hold.ZOH), atol=1e-12)


#### iterations
def test_step_noise_free_fixed_point(second_order):
    data, _ = _data(second_order, 3000, 0.0, 1, T=0.1)
    cfg = SrivcConfig(second_order, 0.1)
    theta = srivc_step(data, second_order, cfg)
    assert _rel(theta, second_order) < 1e-10


def test_step_zero_output_has_singular_normal_matrix(first_order, rng):
    data = DataRecord(rng.standard_normal(1000), np.zeros(1000), T1)
    with pytest.raises(SingularNormalMatrix) as info:
        srivc_step(data, first_order, SrivcConfig(first_order, T1))
    assert info.value.cond > 1e13


def test_step_on_noisy_data_moves_little(first_order):
    data, _ = _data(first_order, 20000, 1.0, 2)
    theta = srivc_step(data, first_order, SrivcConfig(first_order, T1))
    assert np.all(np.isfinite(theta.as_array()))
    assert _rel(theta, first_order) < 1.0


def test_estimate_noise_free_one_iteration(first_order):
    data, _ = _data(first_order, 2000, 0.0, 3)
    est = srivc_estimate(data, SrivcConfig(first_order, T1, epsilon=1e-9))
    assert est.converged
    assert est.iterations == 1
    assert _rel(est.theta, first_order) < 1e-10


def test_estimate_noise_free_from_nearby_start(second_order):
    data, _ = _data(second_order, 5000, 0.0, 4, T=0.1)
    init = ThetaVector([0.045, 0.18], [1.1])
    est = srivc_estimate(data, SrivcConfig(init, 0.1, epsilon=1e-11, max_iter=100))
    assert est.converged
    assert _rel(est.theta, second_order) < 1e-8
    assert all(is_hurwitz(ThetaVector.from_array(h, 2, 0).A) for h in est.history)


def test_estimate_infinite_epsilon_stops_after_one_step(first_order):
    data, _ = _data(first_order, 1000, 1.0, 5)
    est = srivc_estimate(data, SrivcConfig(first_order, T1, epsilon=np.inf))
    assert est.converged
    assert est.iterations == 1
    assert len(est.relative_errors) == len(est.condition_numbers) == 1


def test_estimate_flags_non_convergence(first_order):
    data, _ = _data(first_order, 1000, 1.0, 6)
    est = srivc_estimate(data, SrivcConfig(first_order, T1, max_iter=1))
    assert not est.converged
    assert est.iterations == 1


def test_iterate_reflects_unstable_iterate(second_order, caplog):
    unstable = Polynomial.from_roots([0.5, -5.0]).coeffs
    steps = iter([ThetaVector(unstable[:-1], [1.0]), second_order, second_order])
    cfg = SrivcConfig(second_order, 0.1, epsilon=1e-10, max_iter=10)
    with caplog.at_level(logging.WARNING, logger='ctsrivc.SRIVC'):
        est = _iterate(lambda theta: (next(steps), 1.0), cfg)
    assert est.reflections == 1
    assert est.converged and est.iterations == 3
    assert 'reflecting unstable roots' in caplog.text
    reflected = ThetaVector.from_array(est.history[1], 2, 0)
    assert np.allclose(np.sort(np.real(reflected.A.roots())), [-5.0, -0.5])
    assert all(is_hurwitz(ThetaVector.from_array(h, 2, 0).A) for h in est.history)


def test_iterate_reflects_boundary_root(first_order):
    # root at +1e-10 lies inside the tolerance band around the imaginary axis
    boundary = Polynomial.from_roots([1e-10]).coeffs
    steps = iter([ThetaVector(boundary[:-1], [10.0])] + [first_order] * 3)
    cfg = SrivcConfig(first_order, T1, epsilon=1e-10, max_iter=10)
    est = _iterate(lambda theta: (next(steps), 1.0), cfg)
    assert est.reflections == 1
    assert all(is_hurwitz(ThetaVector.from_array(h, 1, 0).A) for h in est.history)


def test_estimate_short_noisy_records_stay_hurwitz(second_order):
    reflected = 0
    for seed in range(200):
        data, _ = _data(second_order, 40, 25.0, seed, T=0.1)
        try:
            est = srivc_estimate(data, SrivcConfig(second_order, 0.1, max_iter=20))
        except np.linalg.LinAlgError:
            continue
        assert all(is_hurwitz(ThetaVector.from_array(h, 2, 0).A) for h in est.history)
        reflected += est.reflections > 0
    assert reflected > 0


def test_estimate_rejects_sampling_mismatch(first_order):
    data, _ = _data(first_order, 500, 1.0, 7)
    with pytest.raises(ValueError):
        srivc_estimate(data, SrivcConfig(first_order, 0.02))


def test_estimate_large_sample_is_accurate(first_order):
    N = 200000
    data, _ = _data(first_order, N, 1.0, 8)
    est = srivc_estimate(data, SrivcConfig(first_order, T1))
    assert est.converged
    std = np.sqrt(np.diag(crlb_asymptotic(first_order, 1.0, T1, Hold.ZOH).matrix) / N)
    assert np.all(np.abs(est.theta.as_array() - first_order.as_array()) < 4.0 * std)


#### theoretical estimator and converging point
def test_theoretical_regressor_noise_free_is_sensitivity(first_order, rng):
    u = rng.standard_normal(1000)
    phi = theoretical_regressor(u, np.zeros(1000), first_order, first_order, T1, Hold.ZOH)
    tf = TransferFunction([-10.0, 0.0], Polynomial([0.1, 1.0]) ** 2)
    assert np.allclose(phi[:, 0], filter_ct(tf, u, T1, Hold.ZOH), atol=1e-12)


def test_theoretical_regressor_noise_only(first_order, rng):
    e = rng.standard_normal(500)
    theta_j = ThetaVector([0.12], [9.0])
    phi = theoretical_regressor(np.zeros(500), e, first_order, theta_j, T1, Hold.ZOH)
    ref = filter_ct(TransferFunction([-1.0, 0.0], [0.12, 1.0]), e, T1, Hold.ZOH)
    assert np.allclose(phi[:, 0], ref, atol=1e-12)
    assert np.all(phi[:, 1] == 0.0)


def test_theoretical_output_impulse(first_order):
    e = np.zeros(50)
    e[0] = 1.0
    yf = theoretical_output(np.zeros(50), e, first_order, first_order, T1, Hold.ZOH)
    a = np.exp(-0.1)
    k = np.arange(1, 50)
    assert yf[0] == 0.0
    assert np.allclose(yf[1:], a ** (k - 1) * (1.0 - a), atol=1e-14)


@pytest.mark.parametrize('hold', [Hold.ZOH, Hold.FOH])
def test_theoretical_residual_is_filtered_noise(second_order, rng, hold):
    u, e = rng.standard_normal((2, 3000))
    theta_j = ThetaVector([0.05, 0.25], [0.9])
    phi = theoretical_regressor(u, e, second_order, theta_j, 0.1, hold)
    yf = theoretical_output(u, e, second_order, theta_j, 0.1, hold)
    resid = yf - phi @ second_order.as_array()
    ref = filter_ct(TransferFunction(second_order.A, theta_j.A), e, 0.1, Hold.ZOH)
    assert np.max(np.abs(resid - ref)) < 1e-9 * np.max(np.abs(ref))


def test_residual_zero_at_true_system_without_noise(first_order):
    data, _ = _data(first_order, 2000, 0.0, 9)
    r = verify_converging_point(data, first_order, SrivcConfig(first_order, T1))
    assert np.max(np.abs(r)) < 1e-12


def test_residual_large_far_from_estimate(first_order):
    data, _ = _data(first_order, 5000, 1.0, 10)
    r = verify_converging_point(data, ThetaVector([0.3], [5.0]), SrivcConfig(first_order, T1))
    assert np.linalg.norm(r) > 1e-2


@pytest.mark.parametrize('seed', range(20))
def test_practical_and_theoretical_estimates_agree(first_order, seed):
    N = 10000
    data, e = _data(first_order, N, 1.0, 100 + seed)
    cfg = SrivcConfig(first_order, T1)
    practical = srivc_estimate(data, cfg)
    theoretical = theoretical_srivc_estimate(data.u, e, first_order, cfg.replace(epsilon=1e-10))
    assert practical.converged and theoretical.converged
    assert _rel(practical.theta, theoretical.theta) < 1e-6
    r = verify_converging_point(data, practical.theta, cfg)
    assert np.linalg.norm(r) < 1e-8 * np.linalg.norm(data.y) / np.sqrt(N)


@pytest.mark.parametrize('seed', range(10))
def test_output_hold_irrelevant_at_convergence(first_order, seed):
    data, _ = _data(first_order, 10000, 1.0, 200 + seed)
    cfg = SrivcConfig(first_order, T1, epsilon=1e-10)
    zoh = srivc_estimate(data, cfg)
    foh = srivc_estimate(data, cfg.replace(output_hold=Hold.FOH))
    assert zoh.converged and foh.converged
    assert _rel(zoh.theta, foh.theta) < 1e-6


#### data files
def test_data_record_csv(tmp_path, rng):
    data = DataRecord(rng.standard_normal(20), rng.standard_normal(20), 0.01)
    path = str(tmp_path / 'data.csv')
    data.save_csv(path)
    loaded = DataRecord.load_csv(path)
    assert np.array_equal(loaded.u, data.u)
    assert np.array_equal(loaded.y, data.y)
    assert loaded.T == pytest.approx(0.01, rel=1e-12)


def test_csv_floats_carry_17_significant_digits(rng):
    assert format_float(0.1) == '0.10000000000000001'
    assert format_float(np.float64(1.0) / 3.0) == '0.33333333333333331'
    assert format_float(2.0) == '2'
    for x in rng.standard_normal(100) * 10.0 ** rng.integers(-300, 300, 100):
        assert float(format_float(x)) == x


def test_data_record_csv_errors(tmp_path):
    empty = tmp_path / 'empty.csv'
    empty.write_text('')
    with pytest.raises(CsvFormatError):
        DataRecord.load_csv(str(empty))

    header = tmp_path / 'header.csv'
    header.write_text('time,u,y\n0,1,2\n0.1,1,2\n')
    with pytest.raises(CsvFormatError):
        DataRecord.load_csv(str(header))

    bad = tmp_path / 'bad.csv'
    bad.write_text('t,u,y\n0,1,2\n0.1,x,2\n0.2,1,2\n')
    with pytest.raises(CsvFormatError, match='row 3'):
        DataRecord.load_csv(str(bad))


def test_data_record_validation():
    with pytest.raises(ValueError):
        DataRecord([1.0, 2.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        DataRecord([1.0], [1.0], 0.0)
