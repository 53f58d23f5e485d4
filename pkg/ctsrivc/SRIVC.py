"""Simplified refined instrumental variable estimator for continuous-time
output-error models (SRIVC), its simulation-only theoretical counterpart and
the converging-point residual check."""

import logging

import numpy as np

from .lti import Hold
from .lti import Polynomial
from .lti import ThetaVector
from .lti import TransferFunction
from .lti import filter_bank
from .lti import filter_ct
from .lti import is_hurwitz
from .lti import reflect_unstable_roots
from .lti import theta_to_tf
from .SRIVCutils import read_csv_rows
from .SRIVCutils import srivc_params
from .SRIVCutils import write_csv

logger = logging.getLogger(__name__)

DEFAULT_COND_LIMIT = 1.0 / (100.0 * np.finfo(float).eps)


class SingularNormalMatrix(np.linalg.LinAlgError):
    """The IV normal matrix is numerically singular"""

    def __init__(self, cond):
        self.cond = cond
        super(SingularNormalMatrix, self).__init__(
            'Normal matrix is singular to working precision (condition number %.3e)' % cond)


class NonHurwitzIterate(ValueError):
    """An iterate (or a prefilter) has a denominator outside the open left
    half-plane"""
    pass


class CsvFormatError(ValueError):
    """Malformed data file"""
    pass


class DataRecord(object):
    """Sampled input-output data u(t_k), y(t_k), t_k = k T

    Attributes:
        u (array): input samples
        y (array): output samples
        T (float): sampling interval in seconds
    """

    def __init__(self, u, y, T):
        u = np.array(u, dtype=float).ravel()
        y = np.array(y, dtype=float).ravel()
        if u.size != y.size:
            raise ValueError('u and y lengths differ (%d vs %d)' % (u.size, y.size))
        if u.size == 0:
            raise ValueError('Data record is empty.')
        if not T > 0:
            raise ValueError('Sampling interval must be positive; got %r' % (T,))
        u.flags.writeable = False
        y.flags.writeable = False
        self.u, self.y, self.T = u, y, float(T)

    @property
    def N(self):
        return self.u.size

    @property
    def t(self):
        return np.arange(self.N) * self.T

    def save_csv(self, filename):
        """Write `t,u,y` rows with 17 significant digits"""
        write_csv(filename, ['t', 'u', 'y'], zip(self.t, self.u, self.y))

    @classmethod
    def load_csv(cls, filename):
        """Read a `t,u,y` file written by `save_csv` (or any uniformly sampled
        file with that header)

        Raises:
            CsvFormatError: naming the first offending row
        """
        header, rows = read_csv_rows(filename)
        if header is None:
            raise CsvFormatError('%s: empty file (expected header t,u,y)' % filename)
        if header != ['t', 'u', 'y']:
            raise CsvFormatError('%s: header must be t,u,y; got %s' % (filename, ','.join(header)))
        if len(rows) < 2:
            raise CsvFormatError('%s: need at least 2 data rows, found %d' % (filename, len(rows)))
        vals = np.zeros((len(rows), 3))
        for k, row in enumerate(rows):
            # row 1 is the header
            if len(row) != 3:
                raise CsvFormatError('%s: row %d has %d fields, expected 3'
                                     % (filename, k + 2, len(row)))
            try:
                vals[k] = [float(v) for v in row]
            except ValueError:
                raise CsvFormatError('%s: row %d is not numeric: %s'
                                     % (filename, k + 2, ','.join(row)))
            if not np.all(np.isfinite(vals[k])):
                raise CsvFormatError('%s: row %d has non-finite values' % (filename, k + 2))
        dts = np.diff(vals[:, 0])
        T = dts[0]
        bad = np.flatnonzero(np.abs(dts - T) > 1e-9 * max(abs(T), 1.0))
        if not T > 0 or bad.size > 0:
            row = 3 if not T > 0 else bad[0] + 3
            raise CsvFormatError('%s: non-uniform or non-increasing time at row %d'
                                 % (filename, row))
        return cls(vals[:, 1], vals[:, 2], T)


class SrivcConfig(object):
    """Settings of one SRIVC run

    Attributes:
        theta_init (ThetaVector): initial estimate, Hurwitz denominator
        T (float): sampling interval
        max_iter (int): iteration cap (default 200)
        epsilon (float): relative-error stopping threshold (default 1e-12)
        input_hold (Hold): hold of u in the regressor and model output
        output_hold (Hold): hold assumed on y in the regressor
        instrument_input_hold (Hold): hold of u inside the instrument
        cond_limit (float): admissible condition number of the normal matrix
        display (bool): log every iteration at INFO level
    """

    def __init__(
            self,
            theta_init=None,
            T=None,
            max_iter=200,
            epsilon=1e-12,
            input_hold=Hold.ZOH,
            output_hold=Hold.ZOH,
            instrument_input_hold=None,
            cond_limit=None,
            display=False):

        if theta_init is None:
            raise TypeError('Must specify `theta_init`.')
        if T is None:
            raise TypeError('Must specify sampling interval `T`.')
        if not T > 0:
            raise ValueError('`T` must be positive')
        if int(max_iter) < 1:
            raise ValueError('`max_iter` must be at least 1')
        if not epsilon > 0:
            raise ValueError('`epsilon` must be positive')
        if isinstance(theta_init, dict):
            theta_init = ThetaVector.from_dict(theta_init)
        if theta_init.n < theta_init.m:
            raise ValueError('Initial estimate is improper (n=%d < m=%d)'
                             % (theta_init.n, theta_init.m))
        if not is_hurwitz(theta_init.A):
            raise NonHurwitzIterate('Initial denominator %r is not Hurwitz' % theta_init.A)

        self.theta_init = theta_init
        self.T = float(T)
        self.max_iter = int(max_iter)
        self.epsilon = float(epsilon)
        self.input_hold = Hold.parse(input_hold)
        self.output_hold = Hold.parse(output_hold)
        if instrument_input_hold is None:
            self.instrument_input_hold = self.input_hold
        else:
            self.instrument_input_hold = Hold.parse(instrument_input_hold)
        self.cond_limit = DEFAULT_COND_LIMIT if cond_limit is None else float(cond_limit)
        self.display = bool(display)
    # END SrivcConfig.__init__

    @classmethod
    def from_dict(cls, params, T=None, theta_init=None, input_hold=None):
        """Build from an `srivc_params` dict; `T`, `theta_init` and
        `input_hold` fill in keys the dict leaves unset"""
        params = srivc_params(**params)
        init = params['theta_init'] if params['theta_init'] is not None else theta_init
        hold = params['input_hold'] if params['input_hold'] is not None else input_hold
        return cls(
            theta_init=init,
            T=T,
            max_iter=params['max_iter'],
            epsilon=params['epsilon'],
            input_hold=Hold.ZOH if hold is None else hold,
            output_hold=params['output_hold'],
            instrument_input_hold=params['instrument_input_hold'],
            cond_limit=params['cond_limit'],
            display=params['display'])

    def to_dict(self):
        return {
            'max_iter': self.max_iter,
            'epsilon': self.epsilon,
            'input_hold': self.input_hold.value,
            'output_hold': self.output_hold.value,
            'instrument_input_hold': self.instrument_input_hold.value,
            'theta_init': self.theta_init.to_dict(),
            'cond_limit': self.cond_limit,
            'display': self.display}

    def replace(self, **kwargs):
        """Copy with some settings changed"""
        settings = {
            'theta_init': self.theta_init, 'T': self.T, 'max_iter': self.max_iter,
            'epsilon': self.epsilon, 'input_hold': self.input_hold,
            'output_hold': self.output_hold,
            'instrument_input_hold': self.instrument_input_hold,
            'cond_limit': self.cond_limit, 'display': self.display}
        settings.update(kwargs)
        return SrivcConfig(**settings)

    def __eq__(self, other):
        if not isinstance(other, SrivcConfig):
            return NotImplemented
        return self.T == other.T and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result


class SrivcEstimate(object):
    """Outcome of an SRIVC run

    Attributes:
        theta (ThetaVector): last accepted iterate
        converged (bool): stopping rule met before `max_iter`
        iterations (int): number of iterations performed
        relative_errors (list of floats): ||theta_{j+1}-theta_j|| / ||theta_{j+1}||
        condition_numbers (list of floats): of the normal matrix, per iteration
        history (list of arrays): every accepted iterate, initial value first
        reflections (int): iterates whose unstable roots were mirrored
    """

    def __init__(self, theta, converged, iterations, relative_errors,
                 condition_numbers, history, reflections=0):
        self.theta = theta
        self.converged = bool(converged)
        self.iterations = int(iterations)
        self.relative_errors = list(relative_errors)
        self.condition_numbers = list(condition_numbers)
        self.history = list(history)
        self.reflections = int(reflections)

    def to_dict(self):
        return {
            'theta': self.theta.to_dict(),
            'converged': self.converged,
            'iterations': self.iterations,
            'relative_errors': [float(x) for x in self.relative_errors],
            'condition_numbers': [float(x) for x in self.condition_numbers],
            'reflections': self.reflections}

    def __repr__(self):
        return 'SrivcEstimate(theta=%r, converged=%s, iterations=%d)' % (
            self.theta, self.converged, self.iterations)


#### Filtering building blocks
def _derivative_filters(numerator, den, top, bottom=0):
    """[p^top N/den, ..., p^bottom N/den]"""
    return [TransferFunction(numerator.shift(i), den) for i in range(top, bottom - 1, -1)]


def _check_prefilter(A_j):
    if not is_hurwitz(A_j):
        raise NonHurwitzIterate('Prefilter denominator %r is not Hurwitz' % A_j)


def prefilter_output(y, A_j, T, output_hold):
    """y_f(t_k) = 1/A_j(p) y(t_k)

    Raises:
        NonHurwitzIterate: if `A_j` is not Hurwitz
    """
    _check_prefilter(A_j)
    return filter_ct(TransferFunction([1.0], A_j), y, T, output_hold)


def _regressor_and_output(data, theta_j, cfg):
    """Filtered regressor and prefiltered output from shared-state banks"""
    A_j = theta_j.A
    _check_prefilter(A_j)
    one = Polynomial([1.0])
    ybank = filter_bank(_derivative_filters(one, A_j, theta_j.n), data.y,
                        data.T, cfg.output_hold)
    ubank = filter_bank(_derivative_filters(one, A_j, theta_j.m), data.u,
                        data.T, cfg.input_hold)
    phi = np.hstack([-ybank[:, :theta_j.n], ubank])
    return phi, ybank[:, theta_j.n]


def build_regressor(data, theta_j, cfg):
    """Filtered regressor [-p^n y, ..., -p y, p^m u, ..., u] / A_j(p)

    y-entries use `cfg.output_hold`, u-entries `cfg.input_hold`.

    Returns:
        array: shape (N, n+m+1)
    """
    return _regressor_and_output(data, theta_j, cfg)[0]


def build_instrument(data, theta_j, cfg):
    """Filtered instrument [-p^n B_j/A_j^2 u, ..., -p B_j/A_j^2 u,
    p^m/A_j u, ..., 1/A_j u]

    Each entry is one composite filter of u under `cfg.instrument_input_hold`:
    the model output and its filtered derivatives are never produced by two
    separately discretized passes.

    Returns:
        array: shape (N, n+m+1)
    """
    A_j = theta_j.A
    _check_prefilter(A_j)
    hold = cfg.instrument_input_hold
    parts = []
    if theta_j.n > 0:
        parts.append(filter_bank(_derivative_filters(-theta_j.B, A_j * A_j, theta_j.n, 1),
                                 data.u, data.T, hold))
    parts.append(filter_bank(_derivative_filters(Polynomial([1.0]), A_j, theta_j.m),
                             data.u, data.T, hold))
    return np.hstack(parts)


def build_instrument_cascade(data, theta_j, cfg):
    """Two-pass instrument: the model output x = B_j/A_j u is sampled first
    and then prefiltered by -p^i/A_j under the same hold. Differs from
    `build_instrument` whenever the sampled model output is not the hold's
    reconstruction of itself; kept only for comparison."""
    A_j = theta_j.A
    _check_prefilter(A_j)
    hold = cfg.instrument_input_hold
    one = Polynomial([1.0])
    parts = []
    if theta_j.n > 0:
        x = filter_ct(TransferFunction(theta_j.B, A_j), data.u, data.T, hold)
        parts.append(filter_bank(_derivative_filters(-one, A_j, theta_j.n, 1),
                                 x, data.T, hold))
    parts.append(filter_bank(_derivative_filters(one, A_j, theta_j.m),
                             data.u, data.T, hold))
    return np.hstack(parts)


def _sample_moment(zeta, v):
    """(1/N) sum_k zeta_k v_k^T, summed along contiguous memory so numpy uses
    pairwise summation"""
    zt = np.ascontiguousarray(zeta.T)
    vt = np.ascontiguousarray(np.asarray(v).T)
    if vt.ndim == 1:
        return (zt * vt[None, :]).sum(axis=-1) / zeta.shape[0]
    return (zt[:, None, :] * vt[None, :, :]).sum(axis=-1) / zeta.shape[0]


def _normal_equations(zeta, phi, yf):
    return _sample_moment(zeta, phi), _sample_moment(zeta, yf)


def _solve_normal_equations(zeta, phi, yf, cond_limit):
    R, f = _normal_equations(zeta, phi, yf)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularNormalMatrix(cond)
    # R is not symmetric (instrument != regressor): plain LU solve
    return np.linalg.solve(R, f), cond


def _srivc_update(data, theta_j, cfg):
    phi, yf = _regressor_and_output(data, theta_j, cfg)
    zeta = build_instrument(data, theta_j, cfg)
    vec, cond = _solve_normal_equations(zeta, phi, yf, cfg.cond_limit)
    return ThetaVector.from_array(vec, theta_j.n, theta_j.m), cond


def srivc_step(data, theta_j, cfg):
    """One SRIVC iteration theta_j -> theta_{j+1}

    Raises:
        SingularNormalMatrix: if the normal matrix is ill-conditioned
        NonHurwitzIterate: if the new denominator is not Hurwitz
    """
    theta, _ = _srivc_update(data, theta_j, cfg)
    if not is_hurwitz(theta.A):
        raise NonHurwitzIterate('Iterate %r has a non-Hurwitz denominator' % theta)
    return theta


def _stabilize(theta):
    A = reflect_unstable_roots(theta.A)
    a = A.padded(theta.n + 1)[:-1]
    return ThetaVector(a, theta.b)


def _iterate(update, cfg):
    """Fixed-point loop shared by the practical and theoretical estimators"""
    theta = cfg.theta_init
    history = [theta.as_array()]
    rel_errs, conds = [], []
    reflections = 0
    converged = False
    for it in range(1, cfg.max_iter + 1):
        new, cond = update(theta)
        if not is_hurwitz(new.A):
            logger.warning('Iteration %d: reflecting unstable roots of %r', it, new.A)
            new = _stabilize(new)
            reflections += 1
        diff = np.linalg.norm(new.as_array() - theta.as_array())
        scale = np.linalg.norm(new.as_array())
        if scale > 0:
            rel = diff / scale
        else:
            rel = 0.0 if diff == 0 else np.inf
        rel_errs.append(rel)
        conds.append(cond)
        history.append(new.as_array())
        theta = new
        if cfg.display:
            logger.info('Iteration %3d: theta = %s, relative error = %.3e, cond = %.3e',
                        it, theta.as_array(), rel, cond)
        # stop at the first iteration meeting the criterion
        if rel < cfg.epsilon:
            converged = True
            break
    if not converged:
        logger.debug('No convergence after %d iterations (last relative error %.3e)',
                     cfg.max_iter, rel_errs[-1])
    return SrivcEstimate(theta, converged, len(rel_errs), rel_errs, conds, history,
                         reflections)


def srivc_estimate(data, cfg):
    """Iterate SRIVC from `cfg.theta_init` until the relative change of the
    estimate drops below `cfg.epsilon` or `cfg.max_iter` is reached

    Unstable iterates are made Hurwitz by reflecting their offending roots.
    Exhausting `max_iter` is not an error (converged=False).

    Args:
        data (DataRecord)
        cfg (SrivcConfig)

    Returns:
        SrivcEstimate
    """
    if abs(data.T - cfg.T) > 1e-12 * cfg.T:
        raise ValueError('Data sampled at T=%g but config expects T=%g' % (data.T, cfg.T))
    return _iterate(lambda theta: _srivc_update(data, theta, cfg), cfg)


#### Theoretical estimator (simulation only: needs the true system and noise)
def _theoretical_terms(u, e, theta_sys, theta_j, T, input_hold):
    A_j = theta_j.A
    _check_prefilter(A_j)
    n, m = theta_j.n, theta_j.m
    one = Polynomial([1.0])
    # p^i B* / (A_j A*) u, i = n..0, one shared state
    xbank = filter_bank(_derivative_filters(theta_sys.B, A_j * theta_sys.A, n),
                        u, T, input_hold)
    # p^i / A_j e, i = n..0, ZOH on the noise
    ebank = filter_bank(_derivative_filters(one, A_j, n), e, T, Hold.ZOH)
    ubank = filter_bank(_derivative_filters(one, A_j, m), u, T, input_hold)
    phi = np.hstack([-(xbank[:, :n] + ebank[:, :n]), ubank])
    return phi, xbank[:, n] + ebank[:, n]


def theoretical_regressor(u, e, theta_sys, theta_j, T, input_hold):
    """Regressor of the theoretical estimator: the output derivatives are
    taken on the continuous-time noise-free output,
    -p^i B*/(A_j A*) u - p^i/A_j e for i = n..1, followed by p^i/A_j u

    Returns:
        array: shape (N, n+m+1)
    """
    u = np.asarray(u, dtype=float).ravel()
    e = np.asarray(e, dtype=float).ravel()
    return _theoretical_terms(u, e, theta_sys, theta_j, T, Hold.parse(input_hold))[0]


def theoretical_output(u, e, theta_sys, theta_j, T, input_hold):
    """B*/(A_j A*) u + 1/A_j e"""
    u = np.asarray(u, dtype=float).ravel()
    e = np.asarray(e, dtype=float).ravel()
    return _theoretical_terms(u, e, theta_sys, theta_j, T, Hold.parse(input_hold))[1]


def theoretical_srivc_estimate(u, e, theta_sys, cfg):
    """SRIVC iterations with the theoretical regressor and output and the
    practical instrument"""
    u = np.asarray(u, dtype=float).ravel()
    e = np.asarray(e, dtype=float).ravel()
    if u.size != e.size:
        raise ValueError('u and e lengths differ')
    data = DataRecord(u, np.zeros_like(u), cfg.T)

    def update(theta):
        phi, yf = _theoretical_terms(u, e, theta_sys, theta, cfg.T, cfg.input_hold)
        zeta = build_instrument(data, theta, cfg)
        vec, cond = _solve_normal_equations(zeta, phi, yf, cfg.cond_limit)
        return ThetaVector.from_array(vec, theta.n, theta.m), cond

    return _iterate(update, cfg)


def verify_converging_point(data, theta_bar, cfg):
    """Residual r = (1/N) sum zeta(theta_bar) (y - B/A u) of the converging
    point equation; y enters unfiltered so no output hold is involved

    Returns:
        array: length n+m+1
    """
    _check_prefilter(theta_bar.A)
    zeta = build_instrument(data, theta_bar, cfg)
    resid = data.y - filter_ct(theta_to_tf(theta_bar), data.u, data.T, cfg.input_hold)
    return _sample_moment(zeta, resid)
