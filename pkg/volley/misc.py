import logging
import os

import numpy as np

from volley import consts
from volley.errors import MissingFile, ParseError


logger = logging.getLogger(__name__)


def create_dir(dirname):
    if not os.path.exists(os.path.expanduser(dirname)):
        try:
            os.makedirs(os.path.expanduser(dirname))
        except (IOError, OSError):
            pass


def volley_env_vars():
    """Return the settings given through the environment (None if unset)"""
    slots = None
    if 'VOLLEY_SLOTS' in os.environ:
        value = os.environ['VOLLEY_SLOTS']
        try:
            slots = int(value)
        except ValueError:
            logger.warning("Ignoring VOLLEY_SLOTS=%r: not an integer", value)
    return slots


def is_power_of_two(value):
    return value > 0 and value & (value - 1) == 0


def next_power_of_two(value):
    """
    >>> next_power_of_two(676)
    1024
    >>> next_power_of_two(1)
    1
    """
    power = 1
    while power < value:
        power *= 2
    return power


def smallest_divisor_at_least(n, m):
    """Smallest divisor of n which is >= m, or None if m > n.

    >>> smallest_divisor_at_least(32, 10)
    16
    >>> smallest_divisor_at_least(4, 5) is None
    True
    """
    for candidate in range(max(m, 1), n + 1):
        if n % candidate == 0:
            return candidate
    return None


def argmax_rows(values):
    # np.argmax returns the first maximum: ties go to the lowest index
    return [int(i) for i in np.argmax(np.asarray(values), axis=1)]


def read_matrix_csv(path):
    """Read a matrix written one row per line, comma separated, no header."""
    if not os.path.exists(path):
        raise MissingFile("No such file: %s" % path)
    try:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise ParseError("%s: %s" % (path, e))
    return matrix


def read_ragged_csv(path):
    """Read a CSV whose rows may have different lengths."""
    if not os.path.exists(path):
        raise MissingFile("No such file: %s" % path)
    rows = []
    with open(path, 'rt', encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                rows.append(np.zeros(0))
                continue
            try:
                rows.append(np.array([float(v) for v in line.split(',')]))
            except ValueError:
                raise ParseError("%s:%d: not a number in %r" %
                                 (path, lineno, line))
    return rows


def write_matrix_csv(path, matrix):
    # %.17g keeps every double exactly
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    np.savetxt(path, matrix, fmt="%.17g", delimiter=",")


def write_ragged_csv(path, rows):
    with open(path, 'wt', encoding="utf-8") as f:
        for row in rows:
            f.write(",".join("%.17g" % v for v in row))
            f.write("\n")
