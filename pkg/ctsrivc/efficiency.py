"""Asymptotic Cramer-Rao lower bound and asymptotic covariance of SRIVC
estimates for continuous-time output-error models with an explicit input hold.

Expectations of filtered white input are obtained from discrete-time
equivalents of the filters through a discrete Lyapunov equation.
"""

import enum
import json
import logging
import os

import numpy as np
from scipy import linalg

from .lti import Hold
from .lti import Polynomial
from .lti import TransferFunction
from .lti import are_coprime
from .lti import c2d
from .lti import is_hurwitz
from .lti import realize_filters
from .lti import series
from .lti import simulate
from .lti import stack_outputs
from .lti import tf_to_ss
from .lti import theta_to_tf
from .SRIVCutils import read_csv_rows
from .SRIVCutils import write_csv

logger = logging.getLogger(__name__)


class LyapunovError(np.linalg.LinAlgError):
    pass


class SingularInformationMatrix(np.linalg.LinAlgError):
    pass


class CovKind(enum.Enum):
    CRLB = 'crlb'
    SRIVC_ANALYTIC = 'srivc_analytic'
    SRIVC_MISMATCHED = 'srivc_mismatched'
    LITERATURE_CRLB = 'literature_crlb'
    EMPIRICAL = 'empirical'


class CovarianceReport(object):
    """Symmetric positive-semidefinite covariance matrix with provenance

    Attributes:
        matrix (array): (n+m+1) x (n+m+1)
        kind (CovKind)
        lam (float): output noise variance
        stderr (array or `None`): entrywise standard errors (EMPIRICAL only)
        meta (dict): settings the matrix was computed with
        cond (float or `None`): condition number of the inverted matrix

    Raises:
        ValueError: If the matrix is not symmetric within 1e-10 relative or has
            eigenvalues below -1e-10 trace
    """

    _sym_tol = 1e-10
    _psd_tol = 1e-10

    def __init__(self, matrix, kind, lam, stderr=None, meta=None, cond=None):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError('Covariance matrix must be square; got %s' % (matrix.shape,))
        scale = np.max(np.abs(matrix)) if matrix.size else 0.0
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > self._sym_tol * scale:
            raise ValueError('Covariance matrix is not symmetric.')
        matrix = 0.5 * (matrix + matrix.T)
        trace = np.trace(matrix)
        if matrix.size and np.min(np.linalg.eigvalsh(matrix)) < -self._psd_tol * abs(trace):
            raise ValueError('Covariance matrix is not positive semidefinite.')
        kind = CovKind(kind)
        if stderr is not None and kind is not CovKind.EMPIRICAL:
            raise ValueError('Standard errors are reported for empirical covariances only.')
        self.matrix = matrix
        self.kind = kind
        self.lam = float(lam)
        self.stderr = None if stderr is None else np.asarray(stderr, dtype=float)
        self.meta = {} if meta is None else dict(meta)
        self.cond = cond

    @property
    def dim(self):
        return self.matrix.shape[0]

    def correlation(self):
        d = np.sqrt(np.diag(self.matrix))
        return self.matrix / np.outer(d, d)

    def difference(self, other):
        """self - other"""
        return self.matrix - other.matrix

    def is_psd(self, tol=None):
        tol = self._psd_tol if tol is None else tol
        return bool(np.min(np.linalg.eigvalsh(self.matrix)) >= -tol * abs(np.trace(self.matrix)))

    def dominates(self, other, tol=1e-9):
        """True if self - other is PSD within tol * trace(self)"""
        diff = self.difference(other)
        diff = 0.5 * (diff + diff.T)
        return bool(np.min(np.linalg.eigvalsh(diff)) >= -tol * np.trace(self.matrix))

    def save(self, filename):
        """Write `<filename>` (matrix CSV, plus a `stderr` block for empirical
        reports) and the sidecar `<filename minus .csv>.json`"""
        d = self.dim
        rows = [['value', i, j, self.matrix[i, j]] for i in range(d) for j in range(d)]
        if self.stderr is not None:
            rows += [['stderr', i, j, self.stderr[i, j]] for i in range(d) for j in range(d)]
        write_csv(filename, ['quantity', 'row', 'col', 'entry'], rows)
        meta = dict(self.meta)
        meta.update({'kind': self.kind.value, 'lambda': self.lam, 'dim': d,
                     'cond': self.cond})
        if self.stderr is not None:
            meta.setdefault('stderr_method',
                            'standard error of the mean of per-run outer products')
        with open(_sidecar(filename), 'w') as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write('\n')

    @classmethod
    def load(cls, filename):
        with open(_sidecar(filename), 'r') as f:
            meta = json.load(f)
        header, rows = read_csv_rows(filename)
        d = int(meta.pop('dim'))
        matrix = np.zeros((d, d))
        stderr = None
        for quantity, i, j, val in rows:
            if quantity == 'stderr':
                stderr = np.zeros((d, d)) if stderr is None else stderr
                stderr[int(i), int(j)] = float(val)
            else:
                matrix[int(i), int(j)] = float(val)
        kind = meta.pop('kind')
        lam = meta.pop('lambda')
        cond = meta.pop('cond', None)
        return cls(matrix, kind, lam, stderr=stderr, meta=meta, cond=cond)

    def __repr__(self):
        return 'CovarianceReport(kind=%s, lambda=%g,\n%s)' % (
            self.kind.value, self.lam, np.array2string(self.matrix, precision=6))


def _sidecar(filename):
    root, _ = os.path.splitext(filename)
    return root + '.json'


class SensitivityBank(object):
    """Filters generating psi(t_k) = [-p^n B*/A*^2 u, ..., -p B*/A*^2 u,
    p^m/A* u, ..., 1/A* u]

    Attributes:
        filters (list of TransferFunction): in parameter-vector order
        groups (list of lists): the same filters split by shared denominator
            (A*^2 section, then A* section)
        T (float)
        input_hold (Hold)
    """

    def __init__(self, groups, T, input_hold):
        self.groups = [list(g) for g in groups]
        self.filters = [tf for g in self.groups for tf in g]
        self.T = float(T)
        self.input_hold = Hold.parse(input_hold)

    def __len__(self):
        return len(self.filters)

    def realize(self, hold=None):
        """One stacked discrete realization; `hold` overrides `input_hold`"""
        return realize_filters(self.groups, self.T,
                               self.input_hold if hold is None else hold)


def _check_system(theta_sys, coprime=False):
    if theta_sys.n < theta_sys.m:
        raise ValueError('System is improper (n=%d < m=%d)' % (theta_sys.n, theta_sys.m))
    if not is_hurwitz(theta_sys.A):
        raise ValueError('System denominator %r is not Hurwitz' % theta_sys.A)
    if coprime:
        if theta_sys.B.is_zero():
            raise ValueError('B*(p) is identically zero: A* and B* are not coprime')
        if not are_coprime(theta_sys.A, theta_sys.B):
            raise ValueError('A*(p) and B*(p) share a root: parameterization is not identifiable')


def _sensitivity_groups(theta_sys, A_model=None):
    A = theta_sys.A
    A_model = A if A_model is None else A_model
    num = -theta_sys.B
    one = Polynomial([1.0])
    first = [TransferFunction(num.shift(i), A_model * A) for i in range(theta_sys.n, 0, -1)]
    second = [TransferFunction(one.shift(i), A_model) for i in range(theta_sys.m, -1, -1)]
    return [first, second]


def build_sensitivity_bank(theta_sys, T, input_hold):
    """Filters of the gradient psi(t_k, theta*) of the noise-free output

    Coprimality is not required here (B* = 0 gives zero filters); the
    covariance functions check it.

    Raises:
        ValueError: on an unstable or improper system
    """
    _check_system(theta_sys)
    return SensitivityBank(_sensitivity_groups(theta_sys), T, input_hold)


def stationary_second_moment(bank_ss, input_variance):
    """E{y y^T} of a Schur-stable discrete system driven by white input

    Solves A P A^T + sigma^2 B B^T = P and returns C P C^T + sigma^2 D D^T
    (the state is uncorrelated with the current input sample).

    Raises:
        ValueError: If the system is continuous or not Schur stable
        LyapunovError: If the solution is not finite
    """
    if not bank_ss.is_discrete:
        raise ValueError('Second moments need a discrete-time realization.')
    if not input_variance > 0:
        raise ValueError('`input_variance` must be positive')
    D = bank_ss.D
    moment = input_variance * D @ D.T
    if bank_ss.n_states > 0:
        rho = np.max(np.abs(np.linalg.eigvals(bank_ss.A)))
        if not rho < 1.0:
            raise ValueError('System is not Schur stable (spectral radius %.6g)' % rho)
        Q = input_variance * bank_ss.B @ bank_ss.B.T
        try:
            P = linalg.solve_discrete_lyapunov(bank_ss.A, Q)
        except (np.linalg.LinAlgError, ValueError) as err:
            raise LyapunovError('Discrete Lyapunov solve failed: %s' % err)
        if not np.all(np.isfinite(P)):
            raise LyapunovError('Discrete Lyapunov solution is not finite.')
        moment = moment + bank_ss.C @ P @ bank_ss.C.T
    return 0.5 * (moment + moment.T)
# END stationary_second_moment


def time_average_second_moment(bank_ss, u, num_batches=20, chunk=1000000):
    """Long-run sample average of y y^T for an arbitrary (e.g. coloured)
    input sequence, with batch-means standard errors

    Args:
        bank_ss (StateSpace): discrete system
        u (array): input samples
        num_batches (int, optional): batches for the standard error
        chunk (int, optional): samples simulated at a time

    Returns:
        tuple: (moment matrix, entrywise standard errors)
    """
    u = np.asarray(u, dtype=float).ravel()
    N = u.size
    if N < num_batches:
        raise ValueError('Need at least %d samples' % num_batches)
    edges = np.linspace(0, N, num_batches + 1).astype(int)
    p = bank_ss.n_outputs
    batch_means = np.zeros((num_batches, p, p))
    x = np.zeros(bank_ss.n_states)
    for bb in range(num_batches):
        acc = np.zeros((p, p))
        for start in range(edges[bb], edges[bb + 1], chunk):
            stop = min(start + chunk, edges[bb + 1])
            y, x = simulate(bank_ss, u[start:stop], x, return_state=True)
            acc += y.T @ y
        batch_means[bb] = acc / (edges[bb + 1] - edges[bb])
    weights = np.diff(edges) / N
    moment = np.tensordot(weights, batch_means, axes=1)
    stderr = batch_means.std(axis=0, ddof=1) / np.sqrt(num_batches)
    return 0.5 * (moment + moment.T), stderr


def _spd_inverse(M, what):
    """Inverse of a symmetric positive-definite matrix by Cholesky, with its
    condition number"""
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1.0 / (100.0 * np.finfo(float).eps):
        raise SingularInformationMatrix(
            '%s is singular (condition number %.3e): the input is not exciting enough '
            'or the parameterization is not identifiable' % (what, cond))
    try:
        c = linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise SingularInformationMatrix('%s is not positive definite' % what)
    inv = linalg.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T), cond


def _meta(theta_sys, T, input_variance, **holds):
    meta = {'system': theta_sys.to_dict(), 'T': float(T),
            'input_variance': float(input_variance)}
    meta.update({k: Hold.parse(v).value for k, v in holds.items()})
    return meta


def crlb_asymptotic(theta_sys, lam, T, input_hold, input_variance=1.0):
    """Asymptotic CRLB lambda E{psi psi^T}^-1 for white Gaussian input

    Depends on the input hold only: the noise-free output enters through the
    true continuous-time system, so no output hold is involved.

    Returns:
        CovarianceReport: kind CRLB

    Raises:
        ValueError: on invalid system or settings
        SingularInformationMatrix: if E{psi psi^T} is singular
    """
    if lam < 0:
        raise ValueError('`lam` must be non-negative')
    _check_system(theta_sys, coprime=True)
    bank = build_sensitivity_bank(theta_sys, T, input_hold)
    info = stationary_second_moment(bank.realize(), input_variance)
    inv, cond = _spd_inverse(info, 'Information matrix')
    return CovarianceReport(lam * inv, CovKind.CRLB, lam, cond=cond,
                            meta=_meta(theta_sys, T, input_variance, input_hold=input_hold))


def crlb_time_average(theta_sys, lam, T, input_hold, u, num_batches=20):
    """CRLB from the long-run average of psi psi^T over a given (possibly
    coloured) stationary input record

    The standard errors of the averaged information matrix are stored in
    `meta['moment_stderr']`.
    """
    if lam < 0:
        raise ValueError('`lam` must be non-negative')
    _check_system(theta_sys, coprime=True)
    bank = build_sensitivity_bank(theta_sys, T, input_hold)
    info, stderr = time_average_second_moment(bank.realize(), u, num_batches=num_batches)
    inv, cond = _spd_inverse(info, 'Information matrix')
    meta = _meta(theta_sys, T, float(np.var(u)), input_hold=input_hold)
    meta.update({'method': 'time_average', 'samples': int(np.size(u)),
                 'moment_stderr': stderr.tolist()})
    return CovarianceReport(lam * inv, CovKind.CRLB, lam, cond=cond, meta=meta)


def joint_second_moments(regressor_ss, instrument_ss, input_variance):
    """Blocks of E{[phi~; phi^][phi~; phi^]^T} for two realizations driven by
    the same white input sequence

    Returns:
        tuple: (E{phi~ phi~^T}, E{phi^ phi~^T}, E{phi^ phi^^T})
    """
    d = regressor_ss.n_outputs
    joint = stack_outputs([regressor_ss, instrument_ss])
    M = stationary_second_moment(joint, input_variance)
    return M[:d, :d], M[d:, :d], M[d:, d:]


def srivc_asymptotic_cov(theta_sys, lam, T, regressor_input_hold,
                         instrument_input_hold, input_variance=1.0):
    """Asymptotic covariance of the SRIVC estimates

    Matched holds give lambda E{phi~ phi~^T}^-1, identical to the CRLB. With
    a mismatched instrument hold the sandwich
    lambda E{phi^ phi~^T}^-1 E{phi^ phi^^T} E{phi~ phi^^T}^-1 is evaluated
    from one joint realization.

    Returns:
        CovarianceReport: kind SRIVC_ANALYTIC or SRIVC_MISMATCHED
    """
    if lam < 0:
        raise ValueError('`lam` must be non-negative')
    _check_system(theta_sys, coprime=True)
    reg_hold = Hold.parse(regressor_input_hold)
    ins_hold = Hold.parse(instrument_input_hold)
    meta = _meta(theta_sys, T, input_variance, regressor_input_hold=reg_hold,
                 instrument_input_hold=ins_hold)
    bank = build_sensitivity_bank(theta_sys, T, reg_hold)

    if reg_hold is ins_hold:
        info = stationary_second_moment(bank.realize(), input_variance)
        inv, cond = _spd_inverse(info, 'Regressor moment matrix')
        return CovarianceReport(lam * inv, CovKind.SRIVC_ANALYTIC, lam, cond=cond, meta=meta)

    _, E_ht, E_hh = joint_second_moments(bank.realize(reg_hold), bank.realize(ins_hold),
                                         input_variance)
    cond = np.linalg.cond(E_ht)
    if not np.isfinite(cond) or cond > 1.0 / (100.0 * np.finfo(float).eps):
        raise SingularInformationMatrix(
            'Instrument-regressor cross moment is singular (condition number %.3e)' % cond)
    left = np.linalg.solve(E_ht, E_hh)
    P = lam * np.linalg.solve(E_ht, left.T).T
    return CovarianceReport(0.5 * (P + P.T), CovKind.SRIVC_MISMATCHED, lam, cond=cond,
                            meta=meta)
# END srivc_asymptotic_cov


def literature_crlb(theta_sys, lam, T, input_hold, output_hold_assumption=Hold.ZOH,
                    input_variance=1.0):
    """Covariance obtained when the regressor is formed from the sampled
    noise-free output: x(t_k) = B*/A* u is sampled first and then filtered by
    -p^i/A* assuming `output_hold_assumption` on x(t_k). This misrepresents
    the intersample behaviour of x and does not give the true bound; it is
    provided for comparison.

    Returns:
        CovarianceReport: kind LITERATURE_CRLB
    """
    if lam < 0:
        raise ValueError('`lam` must be non-negative')
    _check_system(theta_sys, coprime=True)
    out_hold = Hold.parse(output_hold_assumption)
    A = theta_sys.A
    one = Polynomial([1.0])
    output_model = c2d(tf_to_ss(theta_to_tf(theta_sys)), T, input_hold)
    parts = []
    if theta_sys.n > 0:
        xbank = realize_filters(
            [[TransferFunction((-one).shift(i), A) for i in range(theta_sys.n, 0, -1)]],
            T, out_hold)
        parts.append(series(output_model, xbank))
    parts.append(realize_filters(
        [[TransferFunction(one.shift(i), A) for i in range(theta_sys.m, -1, -1)]],
        T, input_hold))
    info = stationary_second_moment(stack_outputs(parts), input_variance)
    inv, cond = _spd_inverse(info, 'Literature information matrix')
    meta = _meta(theta_sys, T, input_variance, input_hold=input_hold,
                 output_hold_assumption=out_hold)
    return CovarianceReport(lam * inv, CovKind.LITERATURE_CRLB, lam, cond=cond, meta=meta)
