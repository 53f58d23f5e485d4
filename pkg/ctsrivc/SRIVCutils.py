"""Utility functions to assist with configuring, running and storing SRIVC
estimation studies.
"""

import csv
import json
import logging
import os
import sys

import numpy as np
from scipy.linalg import toeplitz

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = 'CTSRIVC_OUTPUT_DIR'

_srivc_keys = ['max_iter', 'epsilon', 'input_hold', 'output_hold',
               'instrument_input_hold', 'theta_init', 'cond_limit', 'display']


def setup_logging(verbose=False):
    """Route log records to stderr; DEBUG when `verbose`, INFO otherwise"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr)


def srivc_params(
        max_iter=200,
        epsilon=1e-12,
        input_hold=None,
        output_hold='zoh',
        instrument_input_hold=None,
        theta_init=None,
        cond_limit=None,
        display=False):
    """generates the dict of SRIVC settings consumed by `SrivcConfig.from_dict`

    Args:
        max_iter (int, optional): maximum number of iterations.
            DEFAULT: 200
        epsilon (float, optional): relative-error stopping threshold; may be
            `inf` to stop after one iteration.
            DEFAULT: 1e-12
        input_hold (str, optional): hold of the system input, used on u in the
            regressor and in the model output.
            DEFAULT: `None` (taken from the experiment, else 'zoh')
        output_hold (str, optional): hold assumed on y when filtering the
            regressor. Irrelevant at the converging point.
            DEFAULT: 'zoh'
        instrument_input_hold (str, optional): hold used on u inside the
            instrument vector. Set different from `input_hold` to study
            mismatched intersample behaviour.
            DEFAULT: `None` (same as `input_hold`)
        theta_init (dict, optional): {'a': [...], 'b': [...]} initial estimate.
            DEFAULT: `None` (the true system in simulation studies)
        cond_limit (float, optional): largest admissible condition number of
            the normal matrix.
            DEFAULT: `None` (1/(100 machine epsilon))
        display (bool, optional): `True` to log every iteration at INFO level

    Returns:
        dict: SRIVC settings

    Raises:
        ValueError: If `max_iter` < 1 or `epsilon` <= 0

    """

    if int(max_iter) < 1:
        raise ValueError('`max_iter` must be at least 1')
    if not float(epsilon) > 0:
        raise ValueError('`epsilon` must be positive')

    return {
        'max_iter': int(max_iter),
        'epsilon': float(epsilon),
        'input_hold': input_hold,
        'output_hold': output_hold,
        'instrument_input_hold': instrument_input_hold,
        'theta_init': theta_init,
        'cond_limit': cond_limit,
        'display': bool(display)}
# END srivc_params


def experiment_params(
        system=None,
        T=None,
        N=None,
        runs=100,
        input_variance=1.0,
        input_hold='zoh',
        seed=0,
        parallelism=1,
        discard=0,
        label=None,
        srivc=None,
        **kwargs):
    """generates information for the experiment dict that is passed to
    `ExperimentConfig.from_dict`.

    Args:
        system (dict): true parameters {'a': [a_1..a_n], 'b': [b_0..b_m]}
        T (float): sampling interval in seconds
        N (int or list of ints): sample size, or the list of sample sizes of a
            sweep
        runs (int, optional): number of Monte Carlo runs per sample size.
            DEFAULT: 100
        lambda (float, optional): output noise variance, passed by keyword
            because `lambda` is reserved.
            DEFAULT: 1.0
        input_variance (float, optional): variance of the white Gaussian input.
            DEFAULT: 1.0
        input_hold (str, optional): intersample behaviour of the system input.
            DEFAULT: 'zoh'
        seed (int, optional): 64-bit seed of every random stream.
            DEFAULT: 0
        parallelism (int or 'auto', optional): worker processes.
            DEFAULT: 1
        discard (int, optional): warm-up samples dropped from every trial.
            DEFAULT: 0
        label (str, optional): variant name written to result tables
        srivc (dict, optional): overrides for `srivc_params`

    Returns:
        dict: experiment settings with all defaults filled in

    Raises:
        TypeError: If `system`, `T` or `N` is not specified
        ValueError: If an unknown key is given or a value is out of range

    """

    lam = kwargs.pop('lambda', 1.0)
    if len(kwargs) > 0:
        raise ValueError('Unknown experiment key(s): %s' % sorted(kwargs))

    if system is None:
        raise TypeError('Must specify `system`.')
    if T is None:
        raise TypeError('Must specify sampling interval `T`.')
    if N is None:
        raise TypeError('Must specify sample size `N`.')
    if not isinstance(system, dict) or 'a' not in system or 'b' not in system:
        raise ValueError('`system` must be a dict with keys `a` and `b`')
    if not float(T) > 0:
        raise ValueError('`T` must be positive')

    Ns = N if isinstance(N, (list, tuple)) else [N]
    if len(Ns) == 0:
        raise ValueError('`N` list is empty')
    order = len(system['a']) + len(system['b'])
    for nn in Ns:
        if int(nn) < order:
            raise ValueError('`N` = %s is smaller than the parameter count %d' % (nn, order))
    if int(runs) < 1:
        raise ValueError('`runs` must be at least 1')
    if float(lam) < 0:
        raise ValueError('`lambda` must be non-negative')
    if not float(input_variance) > 0:
        raise ValueError('`input_variance` must be positive')
    if int(discard) < 0:
        raise ValueError('`discard` must be non-negative')
    if parallelism != 'auto' and int(parallelism) < 1:
        raise ValueError("`parallelism` must be a positive integer or 'auto'")

    srivc = {} if srivc is None else dict(srivc)
    unknown = set(srivc) - set(_srivc_keys)
    if len(unknown) > 0:
        raise ValueError('Unknown srivc key(s): %s' % sorted(unknown))

    return {
        'system': {'a': [float(x) for x in system['a']],
                   'b': [float(x) for x in system['b']]},
        'T': float(T),
        'N': [int(nn) for nn in N] if isinstance(N, (list, tuple)) else int(N),
        'runs': int(runs),
        'lambda': float(lam),
        'input_variance': float(input_variance),
        'input_hold': str(input_hold).lower(),
        'seed': int(seed),
        'parallelism': parallelism if parallelism == 'auto' else int(parallelism),
        'discard': int(discard),
        'label': label,
        'srivc': srivc_params(**srivc)}
# END experiment_params


def load_config(config_file):
    """Read and validate a JSON experiment config

    Returns:
        dict: output of `experiment_params`

    Raises:
        ValueError: If the file is missing, unparsable or invalid
    """

    return experiment_params(**read_json(config_file))


def read_json(config_file):
    """Read a JSON object from `config_file`

    Raises:
        ValueError: If the file is missing, unparsable or not an object
    """

    if not os.path.isfile(config_file):
        raise ValueError('%s is not a valid filename' % config_file)
    with open(config_file, 'r') as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as err:
            raise ValueError('Cannot parse %s: %s' % (config_file, err))
    if not isinstance(raw, dict):
        raise ValueError('Config %s must hold a JSON object' % config_file)
    return raw


def save_config(params, config_file):
    """Write an experiment dict as JSON (the metadata sidecar of every result)"""
    _make_parent(config_file)
    with open(config_file, 'w') as f:
        json.dump(params, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug('Config written to %s', config_file)


def output_dir(requested=None):
    """Output directory: explicit request, else `CTSRIVC_OUTPUT_DIR`, else cwd"""
    if requested is not None:
        return requested
    return os.environ.get(OUTPUT_DIR_ENV, os.getcwd())


def create_time_embedding(x, num_lags):
    """Takes a length-N signal and creates the N x num_lags matrix whose row k
    is [x_k, x_{k-1}, ..., x_{k-num_lags+1}].

    Assumes zero-padding before the first sample.

    Args:
        x (array): signal
        num_lags (int): number of lags

    Returns:
        numpy array: time-embedded matrix
    """

    x = np.asarray(x, dtype=float).ravel()
    if num_lags < 1:
        raise ValueError('`num_lags` must be at least 1')
    first_row = np.concatenate((x[:1], np.zeros(num_lags - 1)))
    return toeplitz(x, first_row)
# END create_time_embedding


def format_float(x):
    """17 significant digits; round-trips the double exactly"""
    return '%.17g' % float(x)


def write_csv(filename, header, rows):
    """Write `rows` under `header`; floats keep full double precision"""
    _make_parent(filename)
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                             for v in row])
    logger.info('Wrote %s', filename)


def read_csv_rows(filename):
    """Read a CSV file; returns (header, list of rows of strings)"""
    if not os.path.isfile(filename):
        raise ValueError('%s is not a valid filename' % filename)
    with open(filename, 'r', newline='') as f:
        rows = list(csv.reader(f))
    if len(rows) == 0:
        return None, []
    return [h.strip() for h in rows[0]], rows[1:]


def save_object(obj, save_file):
    """Save a result object using dill (extension of pickle)

    Args:
        obj: object to store
        save_file (str): full path to output file
    """

    import dill

    _make_parent(save_file)
    with open(save_file, 'wb') as f:
        dill.dump(obj, f)
    logger.info('Result pickled to %s', save_file)


def load_object(save_file):
    """Restore an object written by `save_object`

    Raises:
        ValueError: If `save_file` is not a valid filename
    """

    import dill

    if not os.path.isfile(save_file):
        raise ValueError(str('%s is not a valid filename' % save_file))
    with open(save_file, 'rb') as f:
        return dill.load(f)


def _make_parent(filename):
    parent = os.path.dirname(filename)
    if parent and not os.path.isdir(parent):
        os.makedirs(parent)
