import unittest
from unittest import mock

import numpy as np

from volley import verify
from volley.config import RunConfig


class FakeSuite(verify.Suite):
    def __init__(self, name, errors):
        verify.Suite.__init__(self, name, "fake")
        self.errors = errors

    def cases(self, rng, slot_count):
        for index, err in enumerate(self.errors):
            yield verify.Case("case %d" % index, err, 0.0, 1e-9)


class TestCase(unittest.TestCase):
    def test_absolute_error(self):
        self.assertEqual(verify.Case("x", [1.0, 2.5], [1.0, 2.0], 1).error(), 0.5)

    def test_relative_error(self):
        case = verify.Case("x", [110.0], [100.0], 1, relative=True)
        self.assertAlmostEqual(case.error(), 0.1)

    def test_shape_mismatch_fails(self):
        self.assertEqual(verify.Case("x", [1.0], [1.0, 2.0], 1).error(), float('inf'))

    def test_window_sums(self):
        out = verify.window_sums(np.ones((4, 4)), 3, 3)
        self.assertEqual(out.sum(), 36)
        self.assertEqual(out[0, 0], 9)


class TestSuites(unittest.TestCase):
    def setUp(self):
        self.run_config = RunConfig(seed=42)

    def check(self, name):
        summary = verify.run_suite(name, self.run_config)
        self.assertEqual(summary['suite'], name)
        self.assertGreater(summary['cases'], 0)
        self.assertEqual(summary['failures'], 0, summary)
        return summary

    def test_packing(self):
        self.check('packing')

    def test_matmul(self):
        summary = self.check('matmul')
        self.assertEqual(summary['cases'], 600)

    def test_conv(self):
        self.check('conv')

    def test_quadgrad(self):
        summary = self.check('quadgrad')
        self.assertEqual(summary['cases'], 200)

    def test_injected_fault(self):
        with self.assertLogs('volley.verify', level='WARNING'):
            summary = verify.run_suite('packing', self.run_config, inject_fault=True)
        self.assertEqual(summary['failures'], 1)

    def test_all_adds_up(self):
        fakes = [FakeSuite('good', [0.0, 0.0]), FakeSuite('bad', [0.0, 1.0, 2.0])]
        with mock.patch.object(verify, 'suites', fakes):
            with self.assertLogs('volley.verify', level='WARNING'):
                summary = verify.run_suite('all', self.run_config)
        self.assertEqual(summary, {'suite': 'all', 'cases': 5, 'failures': 2,
                                   'worst_err': 2.0})
