"""Command-line front end

    python -m ctsrivc [--seed S] [--out DIR] [--workers W] [-v] <command> ...

Commands: estimate, crlb, cov, mc, sweep, repro. Exit codes: 0 success,
1 error, 2 non-convergence.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .efficiency import crlb_asymptotic
from .efficiency import literature_crlb
from .efficiency import srivc_asymptotic_cov
from .lti import Hold
from .montecarlo import ExperimentConfig
from .montecarlo import covariance_vs_runs
from .montecarlo import default_checkpoints
from .montecarlo import run_experiment
from .montecarlo import save_result
from .montecarlo import sweep_sample_size
from .montecarlo import write_runs_vs_cov
from .montecarlo import write_variance_vs_N
from .SRIVC import DataRecord
from .SRIVC import SrivcConfig
from .SRIVC import srivc_estimate
from .SRIVC import verify_converging_point
from .SRIVCutils import experiment_params
from .SRIVCutils import load_config
from .SRIVCutils import output_dir
from .SRIVCutils import read_json
from .SRIVCutils import save_config
from .SRIVCutils import setup_logging
from .SRIVCutils import write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

_HOLDS = [h.value for h in Hold]

# settings of the two reference studies; 'desk' is the reduced scale
REPRO_SETTINGS = {
    1: {
        'base': {'system': {'a': [0.1], 'b': [10.0]}, 'T': 0.01, 'lambda': 1.0,
                 'input_variance': 1.0, 'input_hold': 'zoh',
                 'srivc': {'max_iter': 200, 'epsilon': 1e-12}},
        'full': {'N': 200000, 'runs': 50000},
        'desk': {'N': 50000, 'runs': 2000}},
    2: {
        'base': {'system': {'a': [0.04, 0.2], 'b': [1.0]}, 'T': 0.1, 'lambda': 1.0,
                 'input_variance': 1.0, 'input_hold': 'zoh',
                 'srivc': {'max_iter': 200, 'epsilon': 1e-12}},
        'full': {'N': [int(n) for n in np.round(np.logspace(3, np.log10(2e5), 8))],
                 'runs': 10000},
        'desk': {'N': [1000, 10000, 100000], 'runs': 500}}}


def repro_params(sim, scale):
    """Experiment dict of reference study `sim` at `scale` ('full' or 'desk')"""
    if sim not in REPRO_SETTINGS:
        raise ValueError('Unknown simulation %r' % (sim,))
    if scale not in ('full', 'desk'):
        raise ValueError("`scale` must be 'full' or 'desk'")
    params = dict(REPRO_SETTINGS[sim]['base'])
    params.update(REPRO_SETTINGS[sim][scale])
    params['label'] = 'matched'
    return experiment_params(**params)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='ctsrivc',
        description='SRIVC estimation, asymptotic bounds and Monte Carlo studies for '
                    'continuous-time output-error models.')
    parser.add_argument('--seed', type=int, default=None, help='override the config seed')
    parser.add_argument('--out', default=None,
                        help='output directory (default: $CTSRIVC_OUTPUT_DIR, else cwd)')
    parser.add_argument('--workers', default=None,
                        help="worker processes: integer or 'auto'")
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('estimate', help='SRIVC estimate from a t,u,y CSV file')
    p.add_argument('--data', required=True)
    p.add_argument('--config', required=True)

    p = sub.add_parser('crlb', help='asymptotic CRLB (and the literature variant)')
    p.add_argument('--config', required=True)
    p.add_argument('--literature', choices=_HOLDS, default=None,
                   help='also compute the literature variant under this output hold')
    p.add_argument('--lambda', dest='lam', type=float, default=None)

    p = sub.add_parser('cov', help='asymptotic SRIVC covariance')
    p.add_argument('--config', required=True)
    p.add_argument('--instrument-hold', choices=_HOLDS, default=None)
    p.add_argument('--lambda', dest='lam', type=float, default=None)

    for name, text in (('mc', 'Monte Carlo study at one sample size'),
                       ('sweep', 'Monte Carlo study over a list of sample sizes')):
        p = sub.add_parser(name, help=text)
        p.add_argument('--config', required=True)
        p.add_argument('--runs', type=int, default=None)
        p.add_argument('--N', dest='N', type=int, nargs='+', default=None)
        p.add_argument('--lambda', dest='lam', type=float, default=None)
        if name == 'sweep':
            p.add_argument('--instrument-hold', choices=_HOLDS, default=None,
                           help='add a variant with this instrument input hold')

    p = sub.add_parser('repro', help='reproduce a reference simulation study')
    p.add_argument('--sim', type=int, choices=sorted(REPRO_SETTINGS), required=True)
    p.add_argument('--scale', choices=['full', 'desk'], default='desk')
    p.add_argument('--runs', type=int, default=None)
    p.add_argument('--N', dest='N', type=int, nargs='+', default=None)
    return parser


#### helpers
def _workers(value):
    if value is None or value == 'auto':
        return value
    return int(value)


def _experiment(params, args):
    """ExperimentConfig from a params dict with the command-line overrides"""
    params = dict(params)
    if args.seed is not None:
        params['seed'] = args.seed
    if _workers(args.workers) is not None:
        params['parallelism'] = _workers(args.workers)
    if getattr(args, 'runs', None) is not None:
        params['runs'] = args.runs
    if getattr(args, 'N', None) is not None:
        params['N'] = args.N[0] if len(args.N) == 1 else list(args.N)
    if getattr(args, 'lam', None) is not None:
        params['lambda'] = args.lam
    return ExperimentConfig.from_dict(params)


def _write_matrix(filename, matrix):
    d = matrix.shape[0]
    write_csv(filename, ['quantity', 'row', 'col', 'entry'],
              [['value', i, j, matrix[i, j]] for i in range(d) for j in range(d)])


def _show(title, matrix):
    print('%s:\n%s' % (title, np.array2string(matrix, precision=6)))


def _estimate_settings(raw, data):
    """SrivcConfig for `estimate`: either an experiment config (its `system`
    is the initial model) or a bare SRIVC settings dict with `theta_init`"""
    if 'system' in raw:
        params = dict(raw)
        params.setdefault('T', data.T)
        params.setdefault('N', data.N)
        return ExperimentConfig.from_dict(params).srivc
    return SrivcConfig.from_dict(raw, T=data.T)


#### commands
def cmd_estimate(args, out):
    data = DataRecord.load_csv(args.data)
    cfg = _estimate_settings(read_json(args.config), data)
    est = srivc_estimate(data, cfg)
    residual = verify_converging_point(data, est.theta, cfg)
    report = est.to_dict()
    report['residual_norm'] = float(np.linalg.norm(residual))
    report['residual_tolerance'] = float(1e-8 * np.linalg.norm(data.y) / np.sqrt(data.N))
    report['settings'] = cfg.to_dict()
    save_config(report, os.path.join(out, 'estimate.json'))
    write_csv(os.path.join(out, 'iterations.csv'),
              ['iteration', 'relative_error', 'condition_number'],
              [[k + 1, r, c] for k, (r, c) in
               enumerate(zip(est.relative_errors, est.condition_numbers))])
    print('theta = %s' % est.theta.as_array())
    print('converged = %s after %d iteration(s); residual norm %.3e'
          % (est.converged, est.iterations, report['residual_norm']))
    return EXIT_OK if est.converged else EXIT_NOT_CONVERGED


def cmd_crlb(args, out):
    cfg = _experiment(load_config(args.config), args)
    crlb = crlb_asymptotic(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold, cfg.input_variance)
    crlb.save(os.path.join(out, 'crlb.csv'))
    _show('CRLB', crlb.matrix)
    if args.literature is not None:
        lit = literature_crlb(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold,
                              output_hold_assumption=args.literature,
                              input_variance=cfg.input_variance)
        lit.save(os.path.join(out, 'literature_%s.csv' % args.literature))
        _write_matrix(os.path.join(out, 'difference.csv'), crlb.difference(lit))
        _show('Literature variant (%s output hold)' % args.literature, lit.matrix)
        _show('CRLB - literature', crlb.difference(lit))
    return EXIT_OK


def cmd_cov(args, out):
    cfg = _experiment(load_config(args.config), args)
    ins_hold = cfg.srivc.instrument_input_hold if args.instrument_hold is None \
        else Hold.parse(args.instrument_hold)
    cov = srivc_asymptotic_cov(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold, ins_hold,
                               cfg.input_variance)
    crlb = crlb_asymptotic(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold, cfg.input_variance)
    cov.save(os.path.join(out, 'srivc_cov.csv'))
    crlb.save(os.path.join(out, 'crlb.csv'))
    _write_matrix(os.path.join(out, 'difference.csv'), cov.difference(crlb))
    _show('SRIVC asymptotic covariance (%s)' % cov.kind.value, cov.matrix)
    _show('SRIVC - CRLB', cov.difference(crlb))
    return EXIT_OK


def _mc_outputs(cfg, result, out):
    save_config(cfg.to_dict(), os.path.join(out, 'config.json'))
    result.empirical_cov.save(os.path.join(out, 'empirical_cov.csv'))
    if result.crlb is not None:
        result.crlb.save(os.path.join(out, 'crlb.csv'))
    curve = covariance_vs_runs(result.included_estimates(), cfg.theta_sys, result.N,
                               default_checkpoints(result.included_estimates().shape[0]))
    write_runs_vs_cov(os.path.join(out, 'runs_vs_cov.csv'), curve)
    save_config(result.summary(), os.path.join(out, 'summary.json'))
    save_result(result, os.path.join(out, 'result.pkl'))
    _show('Empirical AsCov (N=%d, %d runs)' % (result.N, result.runs),
          result.empirical_cov.matrix)
    if result.crlb is not None:
        _show('CRLB', result.crlb.matrix)


def cmd_mc(args, out):
    cfg = _experiment(load_config(args.config), args)
    if isinstance(cfg.N, list):
        raise ValueError('Config lists several sample sizes; use `sweep`')
    _mc_outputs(cfg, run_experiment(cfg), out)
    return EXIT_OK


def _variants(cfg, instrument_hold):
    variants = [cfg if cfg.label else cfg.replace(label='matched')]
    if instrument_hold is not None and Hold.parse(instrument_hold) is not cfg.input_hold:
        hold = Hold.parse(instrument_hold)
        srivc = dict(cfg.srivc.to_dict(), instrument_input_hold=hold.value)
        variants.append(cfg.replace(srivc=srivc, label='%s_instrument' % hold.value))
    return variants


def _sweep_outputs(variants, out):
    cfg = variants[0]
    save_config({'variants': [v.to_dict() for v in variants]}, os.path.join(out, 'config.json'))
    results = []
    for v in variants:
        logger.info('Sweeping variant %s', v.label)
        results.extend(sweep_sample_size(v))
    write_variance_vs_N(os.path.join(out, 'variance_vs_N.csv'), results)
    save_result(results, os.path.join(out, 'result.pkl'))
    ref = results[0].crlb
    if ref is not None:
        ref.save(os.path.join(out, 'crlb.csv'))
    if len(variants) > 1:
        mis = srivc_asymptotic_cov(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold,
                                   variants[1].srivc.instrument_input_hold,
                                   cfg.input_variance)
        mis.save(os.path.join(out, 'srivc_mismatched.csv'))
    for res in results:
        print('%-16s N=%-7d variances %s' % (res.config.label, res.N,
                                             np.diag(res.empirical_cov.matrix) / res.N))
    return results


def cmd_sweep(args, out):
    cfg = _experiment(load_config(args.config), args)
    _sweep_outputs(_variants(cfg, args.instrument_hold), out)
    return EXIT_OK


def cmd_repro(args, out):
    cfg = _experiment(repro_params(args.sim, args.scale), args)
    logger.info('Reproducing simulation %d at %s scale', args.sim, args.scale)
    if args.sim == 1:
        if isinstance(cfg.N, list):
            raise ValueError('Simulation 1 runs at a single sample size')
        lit = literature_crlb(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold,
                              input_variance=cfg.input_variance)
        lit.save(os.path.join(out, 'literature_zoh.csv'))
        _mc_outputs(cfg, run_experiment(cfg), out)
        _show('Literature variant', lit.matrix)
    else:
        cfg = cfg.replace(N=cfg.sample_sizes)
        _sweep_outputs(_variants(cfg, Hold.FOH), out)
    return EXIT_OK


COMMANDS = {
    'estimate': cmd_estimate,
    'crlb': cmd_crlb,
    'cov': cmd_cov,
    'mc': cmd_mc,
    'sweep': cmd_sweep,
    'repro': cmd_repro}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    out = output_dir(args.out)
    try:
        if not os.path.isdir(out):
            os.makedirs(out)
        return COMMANDS[args.command](args, out)
    except Exception as err:
        logger.error('%s failed: %s', args.command, err)
        logger.debug('Traceback', exc_info=True)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
