"""Operator polynomials, transfer functions, state-space realizations and
hold-equivalent discretization of continuous-time filters.

Polynomials in the differential operator `p` are stored with descending
powers, and denominators follow the convention A(p) = a_1 p^n + ... + a_n p + 1
(constant term one, not monic). Realizations are normalized to monic form
internally.
"""

import enum
import logging

import numpy as np
from scipy import linalg
from scipy import signal

logger = logging.getLogger(__name__)

DEFAULT_ROOT_TOL = 1e-8


class ImproperTransferFunction(ValueError):
    """Raised when a transfer function has more zeros than poles"""
    pass


class Hold(enum.Enum):
    """Intersample behaviour assumed when a sampled signal drives a
    continuous-time filter.

    ZOH: piecewise-constant reconstruction
    FOH: piecewise-linear (triangle hold) reconstruction between samples
    """

    ZOH = 'zoh'
    FOH = 'foh'

    @classmethod
    def parse(cls, value):
        """Accepts a `Hold`, or one of the strings 'zoh'/'foh' (any case)"""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls(value.strip().lower())
            except ValueError:
                pass
        raise ValueError('Invalid hold %r: must be one of %s'
                         % (value, [h.value for h in cls]))

    def __str__(self):
        return self.value


class Polynomial(object):
    """Real polynomial in the operator `p`, coefficients in descending powers.

    Leading zeros are stripped at construction, so `degree` is always
    len(coeffs)-1 and the leading coefficient is nonzero unless the polynomial
    is identically zero (stored as [0.0]).
    """

    __slots__ = ('_coeffs',)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise ValueError('Polynomial coefficients must be finite.')
        nz = np.flatnonzero(c)
        if nz.size == 0:
            c = np.zeros(1)
        else:
            c = c[nz[0]:].copy()
        c.flags.writeable = False
        self._coeffs = c

    @classmethod
    def from_roots(cls, roots, constant=1.0):
        """Real polynomial with the given roots, scaled so that its constant
        term equals `constant` (roots must then be nonzero)"""
        c = np.real(np.poly(np.asarray(roots)))
        if c[-1] == 0:
            raise ValueError('Cannot normalize constant term: zero root.')
        return cls(c * (constant / c[-1]))

    @classmethod
    def monomial(cls, power, scale=1.0):
        """`scale` * p^power"""
        c = np.zeros(power + 1)
        c[0] = scale
        return cls(c)

    @property
    def coeffs(self):
        return self._coeffs

    @property
    def degree(self):
        return self._coeffs.size - 1

    @property
    def leading(self):
        return self._coeffs[0]

    @property
    def constant(self):
        return self._coeffs[-1]

    def is_zero(self):
        return self._coeffs.size == 1 and self._coeffs[0] == 0.0

    def __call__(self, s):
        return np.polyval(self._coeffs, s)

    def roots(self):
        if self.is_zero():
            raise ValueError('Zero polynomial has no well-defined roots.')
        return np.roots(self._coeffs)

    def shift(self, power):
        """Multiply by p^power"""
        if self.is_zero() or power == 0:
            return self
        return Polynomial(np.concatenate([self._coeffs, np.zeros(power)]))

    def padded(self, length):
        """Coefficient vector left-padded with zeros to `length` entries"""
        if length < self._coeffs.size:
            raise ValueError('Cannot pad degree-%d polynomial to %d coefficients'
                             % (self.degree, length))
        return np.concatenate([np.zeros(length - self._coeffs.size), self._coeffs])

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(np.polymul(self._coeffs, other._coeffs))
        return Polynomial(self._coeffs * float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return Polynomial(np.polyadd(self._coeffs, other._coeffs))

    def __sub__(self, other):
        return Polynomial(np.polysub(self._coeffs, other._coeffs))

    def __neg__(self):
        return Polynomial(-self._coeffs)

    def __pow__(self, k):
        out = Polynomial([1.0])
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self._coeffs, other._coeffs)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __hash__(self):
        return hash(self._coeffs.tobytes())

    def __repr__(self):
        return 'Polynomial(%s)' % np.array2string(self._coeffs, separator=', ')


class TransferFunction(object):
    """Proper continuous-time transfer function num(p)/den(p)

    Raises:
        ImproperTransferFunction: if deg(num) > deg(den)
        ValueError: if den is zero or den(0) == 0
    """

    __slots__ = ('_num', '_den')

    def __init__(self, num, den):
        if not isinstance(num, Polynomial):
            num = Polynomial(num)
        if not isinstance(den, Polynomial):
            den = Polynomial(den)
        if den.is_zero():
            raise ValueError('Transfer function denominator is identically zero.')
        if den.constant == 0.0:
            raise ValueError('Denominator must be nonzero at p = 0.')
        if not num.is_zero() and num.degree > den.degree:
            raise ImproperTransferFunction(
                'Improper transfer function: deg(num) = %d > deg(den) = %d'
                % (num.degree, den.degree))
        self._num = num
        self._den = den

    @property
    def num(self):
        return self._num

    @property
    def den(self):
        return self._den

    def freqresp(self, s):
        """Evaluate num(s)/den(s) at (complex) points `s`"""
        s = np.asarray(s, dtype=complex)
        return self._num(s) / self._den(s)

    __call__ = freqresp

    def __mul__(self, other):
        if isinstance(other, TransferFunction):
            return TransferFunction(self._num * other._num, self._den * other._den)
        return TransferFunction(self._num * float(other), self._den)

    __rmul__ = __mul__

    def __neg__(self):
        return TransferFunction(-self._num, self._den)

    def __repr__(self):
        return 'TransferFunction(num=%r, den=%r)' % (self._num, self._den)


class ThetaVector(object):
    """Stacked parameter vector [a_1 ... a_n  b_0 ... b_m]

    The denominator constant term (fixed at 1) is not stored.

    Attributes:
        a (array): denominator coefficients, descending powers
        b (array): numerator coefficients, descending powers
        n (int): denominator order
        m (int): numerator order
    """

    __slots__ = ('_a', '_b')

    def __init__(self, a, b):
        a = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
        b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
        if b.size == 0:
            raise ValueError('Numerator coefficients `b` must not be empty.')
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError('Parameter vector must be finite.')
        a.flags.writeable = False
        b.flags.writeable = False
        self._a = a
        self._b = b

    @classmethod
    def from_array(cls, vec, n, m):
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != n + m + 1:
            raise ValueError('Expected %d parameters for n=%d, m=%d; got %d'
                             % (n + m + 1, n, m, vec.size))
        return cls(vec[:n], vec[n:])

    @classmethod
    def from_dict(cls, d):
        if 'a' not in d or 'b' not in d:
            raise ValueError('Parameter vector needs keys `a` and `b`.')
        return cls(d['a'], d['b'])

    def to_dict(self):
        return {'a': [float(x) for x in self._a], 'b': [float(x) for x in self._b]}

    @property
    def a(self):
        return self._a

    @property
    def b(self):
        return self._b

    @property
    def n(self):
        return self._a.size

    @property
    def m(self):
        return self._b.size - 1

    @property
    def size(self):
        return self._a.size + self._b.size

    @property
    def A(self):
        """Denominator polynomial a_1 p^n + ... + a_n p + 1"""
        return Polynomial(np.concatenate([self._a, [1.0]]))

    @property
    def B(self):
        """Numerator polynomial b_0 p^m + ... + b_m"""
        return Polynomial(self._b)

    def as_array(self):
        return np.concatenate([self._a, self._b])

    def __eq__(self, other):
        if not isinstance(other, ThetaVector):
            return NotImplemented
        return np.array_equal(self._a, other._a) and np.array_equal(self._b, other._b)

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __hash__(self):
        return hash((self._a.tobytes(), self._b.tobytes()))

    def __repr__(self):
        return 'ThetaVector(a=%s, b=%s)' % (list(self._a), list(self._b))


class StateSpace(object):
    """State-space realization (A, B, C, D), continuous or discrete

    Attributes:
        A, B, C, D (2-d arrays)
        dt (float or `None`): sampling interval; `None` for continuous time
        state_offset (2-d array or `None`): for FOH equivalents, the matrix M
            relating the physical state to the realization state,
            x_k = xi_k + M u_k
    """

    def __init__(self, A, B, C, D, dt=None, state_offset=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.size == 0:
            A = np.zeros((0, 0))
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise ValueError('A must be square; got shape %s' % (A.shape,))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        ny, nu = D.shape
        B = np.asarray(B, dtype=float).reshape(nx, nu) if nx > 0 else np.zeros((0, nu))
        C = np.asarray(C, dtype=float).reshape(ny, nx) if nx > 0 else np.zeros((ny, 0))
        if dt is not None and not dt > 0:
            raise ValueError('Sampling interval must be positive; got %r' % (dt,))
        if state_offset is not None:
            state_offset = np.asarray(state_offset, dtype=float).reshape(nx, nu)
        for mat in (A, B, C, D):
            mat.flags.writeable = False
        self.A, self.B, self.C, self.D = A, B, C, D
        self.dt = dt
        self.state_offset = state_offset

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.D.shape[1]

    @property
    def n_outputs(self):
        return self.D.shape[0]

    @property
    def is_discrete(self):
        return self.dt is not None

    def freqresp(self, s):
        """Transfer matrix C (sI - A)^-1 B + D evaluated at a single point"""
        if self.n_states == 0:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(self.n_states) - self.A, self.B) + self.D

    def __repr__(self):
        timing = 'continuous' if self.dt is None else 'discrete(T=%g)' % self.dt
        return 'StateSpace(states=%d, inputs=%d, outputs=%d, %s)' % (
            self.n_states, self.n_inputs, self.n_outputs, timing)


#### Parameter vector <-> transfer function
def theta_to_tf(theta):
    """Build B(p)/A(p) from a stacked parameter vector

    Args:
        theta (ThetaVector)

    Returns:
        TransferFunction: num = b_0 p^m + ... + b_m, den = a_1 p^n + ... + 1

    Raises:
        ImproperTransferFunction: if n < m
    """
    if theta.n < theta.m:
        raise ImproperTransferFunction(
            'Model order n=%d must be >= numerator order m=%d' % (theta.n, theta.m))
    return TransferFunction(theta.B, theta.A)


def tf_to_theta(tf, n=None, m=None):
    """Inverse of `theta_to_tf`; rescales so the denominator constant term is 1

    Args:
        tf (TransferFunction)
        n, m (int, optional): orders to pad to (default: the polynomial degrees)
    """
    c0 = tf.den.constant
    if c0 == 0.0:
        raise ValueError('Denominator constant term is zero; cannot normalize.')
    den = tf.den.coeffs / c0
    num = tf.num.coeffs / c0
    n = tf.den.degree if n is None else n
    m = tf.num.degree if m is None else m
    if n < tf.den.degree or m < tf.num.degree:
        raise ValueError('Requested orders (n=%d, m=%d) below polynomial degrees.' % (n, m))
    a = np.concatenate([np.zeros(n - tf.den.degree), den[:-1]])
    b = np.concatenate([np.zeros(m - tf.num.degree), num])
    return ThetaVector(a, b)


#### Realization
def shared_denominator(tfs):
    """Return the common denominator of a list of transfer functions

    Raises:
        ValueError: if the denominators differ
    """
    if len(tfs) == 0:
        raise ValueError('Filter bank is empty.')
    den = tfs[0].den
    for k, tf in enumerate(tfs[1:], start=1):
        if tf.den.degree != den.degree or not np.allclose(
                tf.den.coeffs, den.coeffs, rtol=1e-13, atol=0.0):
            raise ValueError('Filter %d does not share the bank denominator.' % k)
    return den


def bank_to_ss(tfs):
    """Controllable-canonical realization of a bank of filters sharing one
    denominator: one state vector, one output row per filter.

    Args:
        tfs (list of TransferFunction): proper, identical denominators

    Returns:
        StateSpace: continuous-time, 1 input, len(tfs) outputs
    """
    den = shared_denominator(tfs)
    n = den.degree
    lead = den.leading
    alpha = den.coeffs[1:] / lead

    A = np.zeros((n, n))
    if n > 0:
        A[0, :] = -alpha
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    if n > 0:
        B[0, 0] = 1.0
    C = np.zeros((len(tfs), n))
    D = np.zeros((len(tfs), 1))
    for k, tf in enumerate(tfs):
        if not tf.num.is_zero() and tf.num.degree > n:
            raise ImproperTransferFunction('Filter %d is improper.' % k)
        beta = tf.num.padded(n + 1) / lead
        D[k, 0] = beta[0]
        C[k, :] = beta[1:] - beta[0] * alpha
    return StateSpace(A, B, C, D)


def tf_to_ss(tf):
    """Controllable-canonical realization of a single proper transfer function

    The denominator is normalized to monic form; a biproper `tf` yields the
    nonzero feedthrough of its polynomial long division.
    """
    return bank_to_ss([tf])


#### Roots
def are_coprime(a, b, tol=DEFAULT_ROOT_TOL):
    """True iff `a` and `b` share no root within `tol` (relative to the root
    magnitude once it exceeds one)

    Raises:
        ValueError: if either polynomial is identically zero
    """
    if a.is_zero() or b.is_zero():
        raise ValueError('Coprimality is undefined for the zero polynomial.')
    if a.degree == 0 or b.degree == 0:
        return True
    ra = a.roots()
    rb = b.roots()
    dist = np.abs(ra[:, None] - rb[None, :])
    scale = np.maximum(1.0, np.maximum(np.abs(ra)[:, None], np.abs(rb)[None, :]))
    return not np.any(dist <= tol * scale)


def is_hurwitz(a, tol=DEFAULT_ROOT_TOL):
    """True iff every root of `a` has real part < -tol

    Raises:
        ValueError: if `a` is identically zero
    """
    if a.is_zero():
        raise ValueError('Stability is undefined for the zero polynomial.')
    if a.degree == 0:
        return True
    return bool(np.all(np.real(a.roots()) < -tol))


def reflect_unstable_roots(a, tol=DEFAULT_ROOT_TOL):
    """Mirror roots with real part >= -tol into the open left half-plane and
    rebuild the polynomial with constant term 1

    Mirrored roots land at real part <= -10 tol, so the result always passes
    `is_hurwitz` with the same `tol`.
    """
    if a.degree == 0:
        return a
    r = a.roots()
    bad = np.real(r) >= -tol
    if not np.any(bad):
        return a
    re = np.real(r)
    re[bad] = -np.maximum(np.abs(re[bad]), 10 * tol)
    out = Polynomial.from_roots(re + 1j * np.imag(r))
    if not is_hurwitz(out, tol):
        raise ValueError('Could not mirror the roots of %r into the left half-plane' % a)
    return out


#### Discretization and simulation
def c2d(ss, T, hold):
    """Exact sampled equivalent of a continuous-time realization

    ZOH uses the exponential of the augmented block [[A, B], [0, 0]] T. FOH
    uses the triple block [[A T, B T, 0], [0, 0, I], [0, 0, 0]]; its result is
    returned in causal form (state xi_k = x_k - M u_k, with M stored as
    `state_offset`).

    Args:
        ss (StateSpace): continuous time
        T (float): sampling interval in seconds
        hold (Hold or str)

    Returns:
        StateSpace: discrete time with dt = T
    """
    hold = Hold.parse(hold)
    if ss.is_discrete:
        raise ValueError('c2d expects a continuous-time realization.')
    if not T > 0:
        raise ValueError('Sampling interval must be positive; got %r' % (T,))

    nx, nu = ss.n_states, ss.n_inputs
    if nx == 0:
        return StateSpace(ss.A, ss.B, ss.C, ss.D, dt=T,
                          state_offset=np.zeros((0, nu)) if hold is Hold.FOH else None)

    if hold is Hold.ZOH:
        em = np.zeros((nx + nu, nx + nu))
        em[:nx, :nx] = ss.A * T
        em[:nx, nx:] = ss.B * T
        ms = linalg.expm(em)
        return StateSpace(ms[:nx, :nx], ms[:nx, nx:], ss.C, ss.D, dt=T)

    em = np.zeros((nx + 2 * nu, nx + 2 * nu))
    em[:nx, :nx] = ss.A * T
    em[:nx, nx:nx + nu] = ss.B * T
    em[nx:nx + nu, nx + nu:] = np.eye(nu)
    ms = linalg.expm(em)
    phi = ms[:nx, :nx]
    gamma0 = ms[:nx, nx:nx + nu]
    gamma1 = ms[:nx, nx + nu:]
    bd = gamma0 - gamma1 + phi @ gamma1
    dd = ss.D + ss.C @ gamma1
    return StateSpace(phi, bd, ss.C, dd, dt=T, state_offset=gamma1)
# END c2d


def _schur_states(Ad, Bd, u, x0):
    """State trajectory of x+ = Ad x + Bd u from x_0 = x0

    In the complex Schur basis z = Q^H x the recursion is upper triangular:
    each z_i is a first-order filter of Bd-forcing plus the already computed
    z_j, j > i.
    """
    N = u.shape[0]
    nx = Ad.shape[0]
    R, Q = linalg.schur(Ad, output='complex')
    G = Q.conj().T @ Bd
    z0 = np.zeros(nx, dtype=complex) if x0 is None else Q.conj().T @ x0
    Z = np.zeros((N, nx), dtype=complex)
    steps = np.arange(N)
    for i in range(nx - 1, -1, -1):
        r = R[i, i]
        w = u @ G[i]
        if i < nx - 1:
            w = w + Z[:, i + 1:] @ R[i, i + 1:]
        # z_i[k] = r z_i[k-1] + w[k-1]
        Z[:, i] = signal.lfilter([0.0, 1.0], [1.0, -r], w)
        if z0[i] != 0:
            Z[:, i] += z0[i] * r ** steps
    return np.real(Z @ Q.T)


def simulate(ss_d, u, x0=None, return_state=False):
    """Simulate x_{k+1} = Ad x_k + Bd u_k, y_k = C x_k + D u_k

    The state trajectory is computed in the complex Schur basis of Ad, one
    first-order `scipy.signal.lfilter` pass per state; outputs are then exact
    linear combinations of the states.

    Args:
        ss_d (StateSpace): discrete time
        u (array): input, shape (N,) or (N, n_inputs)
        x0 (array, optional): initial state (default zero)
        return_state (bool, optional): also return the state after the last
            sample

    Returns:
        array: outputs of shape (N, n_outputs) [, final state]

    Raises:
        ValueError: on continuous systems or dimension mismatch
    """
    if not ss_d.is_discrete:
        raise ValueError('simulate expects a discrete-time realization.')
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != ss_d.n_inputs:
        raise ValueError('Input has shape %s but system has %d input(s).'
                         % (u.shape, ss_d.n_inputs))
    N = u.shape[0]
    nx = ss_d.n_states
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != nx:
            raise ValueError('Initial state has %d entries; system has %d states.'
                             % (x0.size, nx))

    if nx == 0:
        y = u @ ss_d.D.T
        return (y, np.zeros(0)) if return_state else y

    if N > 0:
        X = _schur_states(ss_d.A, ss_d.B, u, x0)
    else:
        X = np.zeros((0, nx))

    y = X @ ss_d.C.T + u @ ss_d.D.T
    if not return_state:
        return y
    if N == 0:
        xN = np.zeros(nx) if x0 is None else x0.copy()
    else:
        xN = ss_d.A @ X[-1] + ss_d.B @ u[-1]
    return y, xN
# END simulate


def _zero_physical_state(ss_d, u0):
    """Realization state matching zero physical state at the first sample"""
    if ss_d.state_offset is None or ss_d.n_states == 0:
        return None
    return -ss_d.state_offset @ np.atleast_1d(u0)


def filter_ct(tf, u, T, hold):
    """Apply a continuous-time filter to a sampled signal under a hold

    Zero initial conditions. The denominator need not be Hurwitz; unstable
    filters simply produce growing transients.

    Args:
        tf (TransferFunction): proper
        u (array): samples u(t_k)
        T (float): sampling interval
        hold (Hold or str)

    Returns:
        array: filtered samples, same length as `u`
    """
    u = np.asarray(u, dtype=float).ravel()
    ss_d = c2d(tf_to_ss(tf), T, hold)
    x0 = _zero_physical_state(ss_d, u[0]) if u.size else None
    return simulate(ss_d, u, x0)[:, 0]


def filter_bank(tfs, u, T, hold):
    """Apply a bank of filters sharing one denominator through a single
    shared-state realization

    Args:
        tfs (list of TransferFunction): identical denominators
        u (array): samples
        T (float): sampling interval
        hold (Hold or str)

    Returns:
        array: shape (N, len(tfs)); column i is filter i applied to `u`

    Raises:
        ValueError: if the denominators differ
    """
    u = np.asarray(u, dtype=float).ravel()
    ss_d = c2d(bank_to_ss(tfs), T, hold)
    x0 = _zero_physical_state(ss_d, u[0]) if u.size else None
    return simulate(ss_d, u, x0)


def realize_filters(groups, T, hold):
    """Discrete realization of several filter banks driven by one input,
    outputs stacked in group order

    Args:
        groups (list of lists of TransferFunction): each inner list shares a
            denominator; empty groups are skipped
        T (float)
        hold (Hold or str)

    Returns:
        StateSpace: discrete time
    """
    parts = [c2d(bank_to_ss(g), T, hold) for g in groups if len(g) > 0]
    return stack_outputs(parts)


#### Interconnection of discrete realizations
def stack_outputs(systems):
    """Parallel realization of systems sharing one input: block-diagonal
    dynamics, outputs stacked in order"""
    if len(systems) == 0:
        raise ValueError('Nothing to stack.')
    dt = systems[0].dt
    nu = systems[0].n_inputs
    for sys in systems:
        if sys.dt != dt or sys.n_inputs != nu:
            raise ValueError('Stacked systems must share timing and input count.')
    if len(systems) == 1:
        return systems[0]
    A = linalg.block_diag(*[s.A for s in systems])
    B = np.vstack([s.B for s in systems])
    C = linalg.block_diag(*[s.C for s in systems])
    D = np.vstack([s.D for s in systems])
    offsets = [s.state_offset for s in systems]
    offset = None if any(o is None for o in offsets) else np.vstack(offsets)
    return StateSpace(A, B, C, D, dt=dt, state_offset=offset)


def series(first, second):
    """Discrete cascade: the outputs of `first` drive `second`"""
    if first.dt != second.dt:
        raise ValueError('Cascaded systems must share timing.')
    if first.n_outputs != second.n_inputs:
        raise ValueError('Output count of first (%d) != input count of second (%d).'
                         % (first.n_outputs, second.n_inputs))
    n1, n2 = first.n_states, second.n_states
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.A
    A[n1:, :n1] = second.B @ first.C
    A[n1:, n1:] = second.A
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D, dt=first.dt)
