#!/usr/bin/python

import doctest
import unittest

import numpy as np

from volley import misc, version

DOCTEST_FLAGS = (
    doctest.ELLIPSIS |
    doctest.NORMALIZE_WHITESPACE |
    doctest.REPORT_NDIFF
)


def counting_matrix():
    """The 4x4 matrix z[i][j] = 4*(i-1) + j"""
    return np.arange(1, 17, dtype=np.float64).reshape(4, 4)


def relative_error(computed, expected):
    computed = np.asarray(computed, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    return np.max(np.abs(computed - expected)) / max(1.0, np.max(np.abs(expected)))


class TestVolley(unittest.TestCase):
    def test_power_of_two(self):
        self.assertTrue(misc.is_power_of_two(32768))
        self.assertFalse(misc.is_power_of_two(676))
        self.assertFalse(misc.is_power_of_two(0))
        self.assertEqual(misc.next_power_of_two(2704), 4096)

    def test_smallest_divisor(self):
        self.assertEqual(misc.smallest_divisor_at_least(32, 32), 32)
        self.assertEqual(misc.smallest_divisor_at_least(12, 5), 6)
        self.assertEqual(misc.smallest_divisor_at_least(7, 2), 7)
        self.assertEqual(misc.smallest_divisor_at_least(7, 0), 1)

    def test_argmax_ties_go_to_lowest(self):
        self.assertEqual(misc.argmax_rows([[0, 0, 0], [1, 3, 3], [2, 1, 0]]),
                         [0, 1, 0])

    def test_version_tuple(self):
        self.assertEqual(version.version_tuple("0.3.0-2-gabcd"), (0, 3, 0))
        self.assertEqual(version.version_tuple("1.7"), (1, 7))
        self.assertIsInstance(version.version, str)


def additional_tests():
    return unittest.TestSuite(
        doctest.DocTestSuite(misc, optionflags=DOCTEST_FLAGS),
    )
