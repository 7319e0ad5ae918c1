import threading
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from volley import simd
from volley.errors import ShapeMismatch, SlotOverflow


class TestEncodeDecode(unittest.TestCase):
    def test_encode_pads_with_zeros(self):
        v = simd.encode([1, 2, 3], 4)
        assert_array_equal(simd.decode(v, 4), [1, 2, 3, 0])

    def test_encode_empty(self):
        v = simd.encode([], 8)
        assert_array_equal(simd.decode(v, 8), np.zeros(8))

    def test_encode_overflow(self):
        with self.assertRaises(SlotOverflow):
            simd.encode(range(5), 4)
        # also an OverflowError for callers that do not know Volley
        with self.assertRaises(OverflowError):
            simd.encode(range(5), 4)

    def test_mnist_batch_fits(self):
        v = simd.encode(np.ones(32 * 28 * 28), 32768)
        self.assertEqual(np.count_nonzero(simd.decode(v, 32768)), 25088)

    def test_decode_prefix(self):
        v = simd.encode([5, 6, 7, 8], 4)
        assert_array_equal(simd.decode(v, 2), [5, 6])
        with self.assertRaises(SlotOverflow):
            simd.decode(v, 5)

    def test_decoded_copy_is_independent(self):
        v = simd.encode([1, 2], 2)
        out = simd.decode(v, 2)
        out[0] = 100
        assert_array_equal(simd.decode(v, 2), [1, 2])


class TestPrimitives(unittest.TestCase):
    def setUp(self):
        self.ledger = simd.OpLedger()
        self.v = simd.encode([1, 2, 3, 4], 4, self.ledger)

    def test_rot_left(self):
        assert_array_equal(simd.decode(simd.rot(self.v, 1), 4), [2, 3, 4, 1])
        self.assertEqual(self.ledger.snapshot().rotations, 1)

    def test_rot_right(self):
        assert_array_equal(simd.decode(simd.rot(self.v, -1), 4), [4, 1, 2, 3])

    def test_rot_zero_is_free(self):
        self.assertIs(simd.rot(self.v, 0), self.v)
        self.assertIs(simd.rot(self.v, 8), self.v)
        self.assertEqual(self.ledger.snapshot().rotations, 0)

    def test_rot_composes(self):
        for a in range(-5, 6):
            for b in range(-5, 6):
                assert_array_equal(
                    simd.decode(simd.rot(simd.rot(self.v, a), b), 4),
                    simd.decode(simd.rot(self.v, a + b), 4))

    def test_add_mul_cmul(self):
        w = simd.encode([10, 20, 30, 40], 4, self.ledger)
        assert_array_equal(simd.decode(simd.add(self.v, w), 4), [11, 22, 33, 44])
        assert_array_equal(simd.decode(simd.mul(self.v, w), 4), [10, 40, 90, 160])
        assert_array_equal(simd.decode(simd.cmul(self.v, [0, 1, 0, 2]), 4),
                           [0, 2, 0, 8])
        report = simd.ledger_report(self.ledger)
        self.assertEqual(report.adds, 1)
        self.assertEqual(report.cipher_mults, 1)
        self.assertEqual(report.const_mults, 1)
        self.assertEqual(report.rotations, 0)

    def test_slot_count_mismatch(self):
        w = simd.encode([1, 2], 2, self.ledger)
        with self.assertRaises(ShapeMismatch):
            simd.add(self.v, w)
        with self.assertRaises(ShapeMismatch):
            simd.mul(self.v, w)
        with self.assertRaises(ShapeMismatch):
            simd.cmul(self.v, [1, 2])

    def test_inputs_untouched(self):
        simd.add(self.v, simd.rot(self.v, 1))
        assert_array_equal(simd.decode(self.v, 4), [1, 2, 3, 4])


class TestLedger(unittest.TestCase):
    def test_fresh_ledger(self):
        self.assertEqual(tuple(simd.OpLedger().snapshot()), (0, 0, 0, 0))

    def test_report_difference(self):
        ledger = simd.OpLedger()
        v = simd.encode([1, 2], 2, ledger)
        before = ledger.snapshot()
        simd.mul(simd.rot(v, 1), v)
        delta = ledger.snapshot() - before
        self.assertEqual(delta.as_dict(), {'rotations': 1, 'cipher_mults': 1,
                                           'const_mults': 0, 'adds': 0})

    def test_threads_share_a_ledger(self):
        ledger = simd.OpLedger()
        v = simd.encode(range(16), 16, ledger)

        def work():
            for _ in range(100):
                simd.rot(v, 3)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(ledger.snapshot().rotations, 800)
