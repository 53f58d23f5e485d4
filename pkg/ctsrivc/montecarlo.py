"""Monte Carlo studies of the SRIVC estimator: data generation, parallel
trials, empirical asymptotic covariance with standard errors, and the input
excitation diagnostic."""

import logging
import multiprocessing
from collections import namedtuple

import numpy as np
from scipy import stats

from .efficiency import CovarianceReport
from .efficiency import CovKind
from .efficiency import SingularInformationMatrix
from .efficiency import crlb_asymptotic
from .lti import Hold
from .lti import ThetaVector
from .lti import filter_ct
from .lti import theta_to_tf
from .SRIVC import DataRecord
from .SRIVC import SrivcConfig
from .SRIVC import srivc_estimate
from .SRIVCutils import create_time_embedding
from .SRIVCutils import experiment_params
from .SRIVCutils import load_object
from .SRIVCutils import save_object
from .SRIVCutils import write_csv

logger = logging.getLogger(__name__)

# stream roles of the per-trial random generators
INPUT_STREAM = 0
NOISE_STREAM = 1

EXCITATION_TOL = 1e-8

TrialOutcome = namedtuple('TrialOutcome', [
    'trial',
    'theta',        # last iterate (NaN when the run raised)
    'converged',
    'iterations',
    'reason'])      # None, or why the run is excluded


class AllRunsFailed(RuntimeError):
    """No Monte Carlo run converged; `failures` lists (trial, reason)"""

    def __init__(self, failures):
        self.failures = list(failures)
        reasons = sorted(set(r for _, r in self.failures))
        super(AllRunsFailed, self).__init__(
            'All %d runs failed. Reasons: %s' % (len(self.failures), '; '.join(reasons[:5])))


class ExperimentConfig(object):
    """Full description of a simulation study

    Attributes:
        theta_sys (ThetaVector): true system
        T (float): sampling interval
        N (int or list of ints): sample size(s)
        runs (int): Monte Carlo runs per sample size
        lam (float): output noise variance
        input_variance (float)
        input_hold (Hold)
        srivc (SrivcConfig): estimator settings (theta_init defaults to theta_sys)
        seed (int)
        parallelism (int or 'auto')
        discard (int): warm-up samples simulated and dropped per trial
        label (str or `None`)
    """

    def __init__(self, theta_sys, T, N, runs=100, lam=1.0, input_variance=1.0,
                 input_hold=Hold.ZOH, srivc=None, seed=0, parallelism=1, discard=0,
                 label=None):
        if isinstance(theta_sys, dict):
            theta_sys = ThetaVector.from_dict(theta_sys)
        input_hold = Hold.parse(input_hold)
        # validation is shared with the dict path
        params = experiment_params(
            system=theta_sys.to_dict(), T=T, N=N, runs=runs, input_variance=input_variance,
            input_hold=input_hold.value, seed=seed, parallelism=parallelism,
            discard=discard, label=label, **{'lambda': lam})
        if srivc is None:
            srivc = SrivcConfig.from_dict({}, T=params['T'], theta_init=theta_sys,
                                          input_hold=input_hold)
        elif isinstance(srivc, dict):
            srivc = SrivcConfig.from_dict(srivc, T=params['T'], theta_init=theta_sys,
                                          input_hold=input_hold)
        if abs(srivc.T - params['T']) > 1e-12 * params['T']:
            raise ValueError('SRIVC settings use T=%g but the experiment samples at T=%g'
                             % (srivc.T, params['T']))

        self.theta_sys = theta_sys
        self.T = params['T']
        self.N = params['N']
        self.runs = params['runs']
        self.lam = params['lambda']
        self.input_variance = params['input_variance']
        self.input_hold = input_hold
        self.srivc = srivc
        self.seed = params['seed']
        self.parallelism = params['parallelism']
        self.discard = params['discard']
        self.label = params['label']
    # END ExperimentConfig.__init__

    @classmethod
    def from_dict(cls, params):
        """Build from a (possibly partial) `experiment_params` dict"""
        params = experiment_params(**params)
        return cls(
            theta_sys=ThetaVector.from_dict(params['system']),
            T=params['T'],
            N=params['N'],
            runs=params['runs'],
            lam=params['lambda'],
            input_variance=params['input_variance'],
            input_hold=params['input_hold'],
            srivc=params['srivc'],
            seed=params['seed'],
            parallelism=params['parallelism'],
            discard=params['discard'],
            label=params['label'])

    def to_dict(self):
        return {
            'system': self.theta_sys.to_dict(),
            'T': self.T,
            'N': list(self.N) if isinstance(self.N, list) else self.N,
            'runs': self.runs,
            'lambda': self.lam,
            'input_variance': self.input_variance,
            'input_hold': self.input_hold.value,
            'seed': self.seed,
            'parallelism': self.parallelism,
            'discard': self.discard,
            'label': self.label,
            'srivc': self.srivc.to_dict()}

    def replace(self, **kwargs):
        """Copy with some settings changed; keys as in `to_dict`"""
        params = self.to_dict()
        params.update(kwargs)
        return ExperimentConfig.from_dict(params)

    @property
    def sample_sizes(self):
        return list(self.N) if isinstance(self.N, list) else [self.N]

    def workers(self):
        if self.parallelism == 'auto':
            return multiprocessing.cpu_count()
        return self.parallelism

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return 'ExperimentConfig(theta_sys=%r, T=%g, N=%r, runs=%d, lambda=%g)' % (
            self.theta_sys, self.T, self.N, self.runs, self.lam)


class McResult(object):
    """Outcome of `run_experiment` at one sample size

    Attributes:
        config (ExperimentConfig)
        N (int)
        empirical_cov (CovarianceReport): kind EMPIRICAL, with stderr
        per_run_estimates (array): runs x (n+m+1), NaN rows for runs that raised
        converged (bool array): per run
        iterations (int array): per run
        failed_runs (list of tuples): (trial, reason) of excluded runs
        bias (array): mean estimation error over the included runs
        crlb (CovarianceReport or `None`): analytic bound for the same setting
        coverage (float or `None`): fraction of runs inside the 95% ellipsoid
            of the CRLB
    """

    def __init__(self, config, N, empirical_cov, per_run_estimates, converged,
                 iterations, failed_runs, bias, crlb=None, coverage=None):
        self.config = config
        self.N = int(N)
        self.empirical_cov = empirical_cov
        self.per_run_estimates = per_run_estimates
        self.converged = np.asarray(converged, dtype=bool)
        self.iterations = np.asarray(iterations, dtype=int)
        self.failed_runs = list(failed_runs)
        self.bias = bias
        self.crlb = crlb
        self.coverage = coverage

    @property
    def runs(self):
        return self.converged.size

    @property
    def convergence_rate(self):
        return float(np.mean(self.converged)) if self.runs else 0.0

    def included_estimates(self):
        return self.per_run_estimates[self.converged]

    def summary(self):
        return {
            'N': self.N,
            'runs': self.runs,
            'convergence_rate': self.convergence_rate,
            'failed_runs': len(self.failed_runs),
            'bias': [float(x) for x in self.bias],
            'coverage': self.coverage,
            'mean_iterations': float(np.mean(self.iterations)) if self.runs else 0.0}

    def __repr__(self):
        return 'McResult(N=%d, runs=%d, convergence_rate=%.4f)' % (
            self.N, self.runs, self.convergence_rate)


#### Data generation
def trial_rng(seed, N, trial, role):
    """Counter-based generator keyed by (seed, N, trial, role): streams never
    depend on scheduling or on the number of workers"""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(N), int(trial), int(role)))
    return np.random.Generator(np.random.Philox(ss))


def generate_input(N, input_variance, rng):
    """i.i.d. zero-mean Gaussian input samples"""
    if int(N) < 1:
        raise ValueError('`N` must be at least 1')
    if not input_variance > 0:
        raise ValueError('`input_variance` must be positive')
    return np.sqrt(input_variance) * rng.standard_normal(int(N))


def simulate_system(u, theta_sys, lam, T, input_hold, rng, return_noise=False):
    """y(t_k) = B*/A* u(t_k) under `input_hold`, plus white Gaussian noise of
    variance `lam` drawn from `rng`

    Returns:
        DataRecord [, noise sequence]
    """
    if lam < 0:
        raise ValueError('`lam` must be non-negative')
    u = np.asarray(u, dtype=float).ravel()
    x = filter_ct(theta_to_tf(theta_sys), u, T, input_hold)
    e = np.sqrt(lam) * rng.standard_normal(u.size)
    data = DataRecord(u, x + e, T)
    if return_noise:
        return data, e
    return data


def trial_data(cfg, N, trial, return_noise=False):
    """The data record of one trial, after the warm-up discard"""
    total = N + cfg.discard
    u = generate_input(total, cfg.input_variance, trial_rng(cfg.seed, N, trial, INPUT_STREAM))
    data, e = simulate_system(u, cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold,
                              trial_rng(cfg.seed, N, trial, NOISE_STREAM), return_noise=True)
    if cfg.discard > 0:
        data = DataRecord(data.u[cfg.discard:], data.y[cfg.discard:], cfg.T)
        e = e[cfg.discard:]
    if return_noise:
        return data, e
    return data


#### Trials
def _run_trial(task):
    """Worker entry point; module level so multiprocessing can pickle it"""
    cfg, N, trial = task
    dim = cfg.theta_sys.size
    try:
        est = srivc_estimate(trial_data(cfg, N, trial), cfg.srivc)
    except (np.linalg.LinAlgError, ValueError) as err:
        return TrialOutcome(trial, np.full(dim, np.nan), False, 0,
                            '%s: %s' % (type(err).__name__, err))
    reason = None if est.converged else 'not converged after %d iterations' % est.iterations
    return TrialOutcome(trial, est.theta.as_array(), est.converged, est.iterations, reason)


def _map_trials(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_trial(t) for t in tasks]
    chunksize = max(1, len(tasks) // (4 * workers))
    with multiprocessing.Pool(processes=workers) as pool:
        # imap keeps trial order
        return list(pool.imap(_run_trial, tasks, chunksize=chunksize))


def empirical_covariance(estimates, theta_sys, N):
    """N/R sum_r (theta_r - theta*)(theta_r - theta*)^T with the standard
    error of the mean of the per-run outer products

    Returns:
        tuple: (matrix, stderr)
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    R = est.shape[0]
    if R == 0:
        raise ValueError('No estimates to aggregate.')
    err = est - theta_sys.as_array()[None, :]
    outer = N * err[:, :, None] * err[:, None, :]
    matrix = outer.mean(axis=0)
    if R > 1:
        stderr = outer.std(axis=0, ddof=1) / np.sqrt(R)
    else:
        stderr = np.full(matrix.shape, np.nan)
    return 0.5 * (matrix + matrix.T), stderr


def _reference_crlb(cfg):
    if cfg.lam == 0:
        return None
    try:
        return crlb_asymptotic(cfg.theta_sys, cfg.lam, cfg.T, cfg.input_hold, cfg.input_variance)
    except (SingularInformationMatrix, ValueError) as err:
        logger.warning('No analytic reference bound: %s', err)
        return None


def run_experiment(cfg, N=None):
    """Run `cfg.runs` independent SRIVC trials at sample size `N`

    Non-converged and failing runs are excluded from the covariance and listed
    in `failed_runs`. The result depends on `cfg` only, never on the worker
    count.

    Args:
        cfg (ExperimentConfig)
        N (int, optional): required when `cfg.N` is a list

    Returns:
        McResult

    Raises:
        AllRunsFailed: if no run converged
    """
    if N is None:
        if isinstance(cfg.N, list):
            raise ValueError('Config holds a list of sample sizes: use sweep_sample_size')
        N = cfg.N
    N = int(N)
    workers = cfg.workers()
    logger.info('Running %d trials at N=%d on %d worker(s)', cfg.runs, N, workers)

    outcomes = _map_trials([(cfg, N, r) for r in range(cfg.runs)], workers)
    estimates = np.vstack([o.theta for o in outcomes])
    converged = np.array([o.converged for o in outcomes])
    iterations = np.array([o.iterations for o in outcomes])
    failed = [(o.trial, o.reason) for o in outcomes if o.reason is not None]
    for trial, reason in failed:
        logger.warning('Run %d excluded: %s', trial, reason)
    if not np.any(converged):
        raise AllRunsFailed(failed)

    included = estimates[converged]
    matrix, stderr = empirical_covariance(included, cfg.theta_sys, N)
    meta = {'config': cfg.to_dict(), 'N': N, 'runs_included': int(included.shape[0]),
            'runs_failed': len(failed)}
    report = CovarianceReport(matrix, CovKind.EMPIRICAL, cfg.lam, stderr=stderr, meta=meta)
    bias = (included - cfg.theta_sys.as_array()[None, :]).mean(axis=0)

    crlb = _reference_crlb(cfg)
    coverage = None
    if crlb is not None:
        coverage = gaussian_coverage(included, cfg.theta_sys, N, crlb.matrix)
    result = McResult(cfg, N, report, estimates, converged, iterations, failed, bias,
                      crlb=crlb, coverage=coverage)
    logger.info('N=%d: %d/%d runs converged', N, int(converged.sum()), cfg.runs)
    return result
# END run_experiment


def sweep_sample_size(cfg):
    """`run_experiment` at every sample size in `cfg.N`, in order"""
    return [run_experiment(cfg, N) for N in cfg.sample_sizes]


def covariance_vs_runs(estimates, theta_sys, N, checkpoints):
    """Empirical AsCov from the first R runs, for every R in `checkpoints`

    Runs with non-finite estimates are skipped before counting.

    Returns:
        list of tuples: (R, matrix, stderr)
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    est = est[np.all(np.isfinite(est), axis=1)]
    out = []
    for R in checkpoints:
        R = int(R)
        if R < 1 or R > est.shape[0]:
            raise ValueError('Checkpoint %d outside 1..%d' % (R, est.shape[0]))
        matrix, stderr = empirical_covariance(est[:R], theta_sys, N)
        out.append((R, matrix, stderr))
    return out


def default_checkpoints(runs, count=10):
    """Roughly log-spaced run counts ending at `runs`"""
    if runs < 2:
        return [runs]
    pts = np.unique(np.round(np.logspace(np.log10(min(runs, 10)), np.log10(runs), count)))
    return [int(p) for p in pts]


def gaussian_coverage(estimates, theta_sys, N, P, level=0.95):
    """Fraction of sqrt(N)(theta_r - theta*) inside the `level` ellipsoid of
    the Gaussian N(0, P)"""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    z = np.sqrt(N) * (est - theta_sys.as_array()[None, :])
    d2 = np.einsum('ri,ri->r', z, np.linalg.solve(P, z.T).T)
    return float(np.mean(d2 <= stats.chi2.ppf(level, df=est.shape[1])))


#### Diagnostics
def check_excitation(u, order):
    """Persistent excitation test: rank of the order x order sample
    autocovariance matrix of `u`

    Args:
        u (array): input samples, at least 10 * order of them
        order (int)

    Returns:
        tuple: (bool, dict with 'order', 'rank', 'eigenvalues', 'threshold')
    """
    u = np.asarray(u, dtype=float).ravel()
    order = int(order)
    if order < 1:
        raise ValueError('`order` must be at least 1')
    if u.size < 10 * order:
        raise ValueError('Need at least %d samples to test excitation of order %d; got %d'
                         % (10 * order, order, u.size))
    X = create_time_embedding(u, order)[order - 1:]
    R = X.T @ X / X.shape[0]
    eig = np.linalg.eigvalsh(0.5 * (R + R.T))
    threshold = EXCITATION_TOL * max(eig[-1], 0.0)
    rank = int(np.sum(eig > threshold)) if eig[-1] > 0 else 0
    report = {'order': order, 'rank': rank, 'eigenvalues': eig[::-1].tolist(),
              'threshold': float(threshold)}
    return rank == order, report


#### Result files
def _entry_name(i, j):
    return 'P%d%d' % (i + 1, j + 1)


def write_runs_vs_cov(filename, curve):
    """Rows (runs, entry, value, stderr) from `covariance_vs_runs`"""
    rows = []
    for R, matrix, stderr in curve:
        d = matrix.shape[0]
        for i in range(d):
            for j in range(i, d):
                rows.append([R, _entry_name(i, j), matrix[i, j], stderr[i, j]])
    write_csv(filename, ['runs', 'entry', 'value', 'stderr'], rows)


def write_variance_vs_N(filename, results):
    """Rows (N, parameter, empirical_variance, crlb_variance, variant)

    Args:
        results (list of McResult): variant taken from each config label
    """
    rows = []
    for res in results:
        variant = res.config.label or 'matched'
        emp = np.diag(res.empirical_cov.matrix) / res.N
        bound = np.diag(res.crlb.matrix) / res.N if res.crlb is not None else \
            np.full(emp.size, np.nan)
        for k in range(emp.size):
            rows.append([res.N, k + 1, emp[k], bound[k], variant])
    write_csv(filename, ['N', 'parameter', 'empirical_variance', 'crlb_variance', 'variant'],
              rows)


def save_result(result, save_file):
    save_object(result, save_file)


def load_result(save_file):
    result = load_object(save_file)
    if not isinstance(result, McResult) and not (
            isinstance(result, list) and all(isinstance(r, McResult) for r in result)):
        raise ValueError('%s does not hold Monte Carlo results' % save_file)
    return result
