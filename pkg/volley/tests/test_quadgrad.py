import math
import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.datasets import dump_svmlight_file, load_iris, load_wine

from volley import consts, quadgrad, verify
from volley.errors import LabelOutOfRange, MissingFile, ParseError, ShapeMismatch


def bundled_dataset(loader):
    data = loader()
    return quadgrad.make_dataset(data.data, data.target)


class TestBasics(unittest.TestCase):
    def test_one_hot(self):
        assert_array_equal(quadgrad.one_hot([0, 2], 3), [[1, 0, 0], [0, 0, 1]])
        with self.assertRaises(LabelOutOfRange):
            quadgrad.one_hot([0, 3], 3)

    def test_uniform_probabilities(self):
        X = np.ones((3, 2))
        assert_allclose(quadgrad.softmax_probs(X, np.zeros((4, 2))), 0.25)

    def test_saturated_probabilities(self):
        P = quadgrad.softmax_probs([[1.0]], [[50.0], [0.0]])
        self.assertGreaterEqual(P[0, 0], 1 - 1e-20)
        self.assertTrue(np.all(np.isfinite(P)))
        P = quadgrad.softmax_probs([[1.0]], [[1000.0], [0.0]])
        assert_array_equal(P, [[1.0, 0.0]])

    def test_loglik_at_zero(self):
        X = np.hstack([np.ones((4, 1)), np.random.default_rng(0).uniform(size=(4, 2))])
        Yh = quadgrad.one_hot([0, 1, 1, 0], 2)
        self.assertAlmostEqual(quadgrad.log_likelihood(X, Yh, np.zeros((2, 3))),
                               4 * math.log(0.5), places=12)

    def test_loglik_is_sum_of_log_probabilities(self):
        rng = np.random.default_rng(1)
        X, y, c, W = verify.random_lr_instance(rng)
        P = quadgrad.softmax_probs(X, W)
        self.assertAlmostEqual(quadgrad.log_likelihood(X, quadgrad.one_hot(y, c), W),
                               np.sum(np.log(P[np.arange(len(y)), y])), places=9)

    def test_gradient_vanishes_on_perfect_fit(self):
        Yh = quadgrad.one_hot([0, 1], 2)
        assert_array_equal(quadgrad.gradient(np.ones((2, 2)), Yh, Yh), 0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            X, y, c, W = verify.random_lr_instance(rng)
            Yh = quadgrad.one_hot(y, c)
            g = quadgrad.gradient(X, Yh, quadgrad.softmax_probs(X, W))
            numeric = verify.numeric_gradient(X, Yh, W)
            scale = max(1.0, np.max(np.abs(numeric)))
            self.assertLessEqual(np.max(np.abs(g - numeric)) / scale, 1e-5)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            quadgrad.softmax_probs(np.ones((2, 3)), np.ones((2, 2)))


class TestBound(unittest.TestCase):
    def test_identity_records(self):
        inv = quadgrad.build_bbar_inv(np.eye(2), 2)
        assert_allclose(inv, np.full((2, 2), 1 / (0.5 + consts.EPSILON)))

    def test_bias_only_records(self):
        X = np.zeros((5, 3))
        X[:, 0] = 1
        bbar = quadgrad.build_bbar(X, 2)
        assert_allclose(bbar[0], [consts.EPSILON + 2.5, consts.EPSILON,
                                  consts.EPSILON])
        assert_array_equal(bbar[0], bbar[1])

    def test_quadratic_gradient(self):
        g = np.array([[1.0, -2.0]])
        assert_array_equal(quadgrad.quadratic_gradient(g, [[0.5, 0.25]]),
                           [[0.5, -0.5]])
        with self.assertRaises(ShapeMismatch):
            quadgrad.quadratic_gradient(g, [[1.0]])

    def test_dominance(self):
        rng = np.random.default_rng(3)
        for index in range(100):
            X, y, c, W = verify.random_lr_instance(rng, weight_range=5.0)
            if index % 2:
                W = np.zeros_like(W)
            smallest, passed = quadgrad.dominance_check(X, W)
            self.assertTrue(passed, "instance %d: %g" % (index, smallest))

    def test_dominance_single_record(self):
        smallest, passed = quadgrad.dominance_check([[1.0, 0.3]], np.zeros((2, 2)))
        self.assertTrue(passed)
        self.assertGreaterEqual(smallest, -1e-8)


class TestHessians(unittest.TestCase):
    def test_single_record(self):
        P = quadgrad.softmax_probs([[1.0]], np.zeros((2, 1)))
        assert_allclose(quadgrad.exact_hessian([[1.0]], P),
                        [[-0.25, 0.25], [0.25, -0.25]])

    def test_symmetric_and_numeric(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            X, y, c, W = verify.random_lr_instance(rng)
            H = quadgrad.exact_hessian(X, quadgrad.softmax_probs(X, W))
            assert_allclose(H, H.T, atol=1e-12)
            numeric = verify.numeric_hessian(X, quadgrad.one_hot(y, c), W)
            scale = max(1.0, np.max(np.abs(numeric)))
            self.assertLessEqual(np.max(np.abs(H - numeric)) / scale, 1e-4)

    def test_aggregate_differs(self):
        rng = np.random.default_rng(5)
        X = np.hstack([np.ones((6, 1)), rng.uniform(size=(6, 2))])
        W = rng.normal(size=(3, 3))
        P = quadgrad.softmax_probs(X, W)
        self.assertFalse(np.allclose(quadgrad.exact_hessian(X, P),
                                     quadgrad.aggregate_kronecker_hessian(X, P)))
        assert_allclose(quadgrad.exact_hessian(X[:1], P[:1]),
                        quadgrad.aggregate_kronecker_hessian(X[:1], P[:1]),
                        atol=1e-14)

    def test_kronecker_inverse(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(2, 2)) + 3 * np.eye(2)
        B = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        assert_allclose(np.linalg.inv(np.kron(A, B)),
                        np.kron(np.linalg.inv(A), np.linalg.inv(B)), atol=1e-12)


class TestOptimizers(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.iris = bundled_dataset(load_iris)
        cls.wine = bundled_dataset(load_wine)

    def test_momentum_schedule(self):
        self.assertAlmostEqual(quadgrad.next_alpha(0.01), 1.000099990, places=9)

    def test_first_nag_step(self):
        ds = self.iris
        W, trace = quadgrad.train_nag(ds, 1)
        G0 = quadgrad.quadratic_gradient(
            quadgrad.gradient(ds.X, ds.Yh, quadgrad.softmax_probs(ds.X, np.zeros((3, 5)))),
            quadgrad.build_bbar_inv(ds.X, 3))
        eta = (1 - 0.01) / quadgrad.next_alpha(0.01)
        assert_allclose(W, (1 - eta) * (1 + 1.0 / ds.n) * G0, rtol=1e-12)
        self.assertEqual(len(trace), 2)

    def test_first_adagrad_step(self):
        ds = self.iris
        W, _trace = quadgrad.train_adagrad(ds, 1)
        G = quadgrad.quadratic_gradient(
            quadgrad.gradient(ds.X, ds.Yh, quadgrad.softmax_probs(ds.X, np.zeros((3, 5)))),
            quadgrad.build_bbar_inv(ds.X, 3))
        assert_allclose(W, 1.01 / np.sqrt(consts.EPSILON + G * G) * G, rtol=1e-12)

    def test_adagrad_stationary_point(self):
        X = np.array([[1.0, 0.5], [1.0, 0.5]])
        ds = quadgrad.LrDataset(X, [0, 1], 2)
        W, _trace = quadgrad.train_adagrad(ds, 5)
        assert_array_equal(W, 0)

    def test_fixed_hessian_never_decreases(self):
        for ds in (self.iris, self.wine):
            _W, trace = quadgrad.train_fixed_hessian(ds, 50)
            logliks = [entry['loglik'] for entry in trace]
            for before, after in zip(logliks, logliks[1:]):
                self.assertGreaterEqual(after, before - 1e-9)

    def test_sanity_over_200_iterations(self):
        for name in ('nag', 'adagrad'):
            _W, trace = quadgrad.OPTIMIZERS[name](self.iris, 200)
            self.assertEqual(len(trace), 201)
            self.assertGreater(trace[-1]['loglik'], trace[0]['loglik'], name)
            self.assertLess(trace[-1]['grad_maxnorm'], trace[0]['grad_maxnorm'], name)

    def test_nag_improves_iris(self):
        _W, trace = quadgrad.train_nag(self.iris, 50)
        self.assertGreater(trace[-1]['loglik'], trace[0]['loglik'])

    def test_deterministic(self):
        for name, train in quadgrad.OPTIMIZERS.items():
            first = train(self.wine, 20)
            second = train(self.wine, 20)
            self.assertEqual(first[1], second[1], name)
            assert_array_equal(first[0], second[0])

    def test_kappa_must_be_positive(self):
        for train in quadgrad.OPTIMIZERS.values():
            with self.assertRaises(ValueError):
                train(self.iris, 0)

    def test_predict_ties(self):
        assert_array_equal(quadgrad.predict(self.iris.X, np.zeros((3, 5))), 0)
        self.assertAlmostEqual(quadgrad.accuracy(self.iris, np.zeros((3, 5))), 1 / 3.0)

    def test_cross_validate(self):
        scores = quadgrad.cross_validate(self.iris, 'nag', 30, folds=5, seed=1)
        self.assertEqual(len(scores), 5)
        self.assertTrue(all(0 <= s <= 1 for s in scores))
        self.assertGreater(np.mean(scores), 0.6)


class TestLibsvm(unittest.TestCase):
    def setUp(self):
        self.dirname = tempfile.mkdtemp(prefix="volley-test-")

    def tearDown(self):
        shutil.rmtree(self.dirname)

    def write(self, text):
        path = os.path.join(self.dirname, "data")
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_raw_row(self):
        ds = quadgrad.load_libsvm(self.write("2 1:0.5 3:1\n"), d=3, normalize=False)
        assert_array_equal(ds.X, [[1, 0.5, 0, 1]])

    def test_label_remap(self):
        ds = quadgrad.load_libsvm(self.write("2 1:0.5\n5 1:1\n2 1:0\n"))
        assert_array_equal(ds.y, [0, 1, 0])
        self.assertEqual(ds.c, 2)
        assert_array_equal(ds.X[:, 1], [0.5, 1, 0])

    def test_too_many_labels(self):
        with self.assertRaises(LabelOutOfRange):
            quadgrad.load_libsvm(self.write("1 1:1\n2 1:2\n3 1:3\n"), c=2)

    def test_bundled_sets(self):
        for loader, shape in ((load_iris, (150, 4, 3)), (load_wine, (178, 13, 3))):
            data = loader()
            path = os.path.join(self.dirname, loader.__name__)
            dump_svmlight_file(data.data, data.target, path, zero_based=False)
            ds = quadgrad.load_libsvm(path)
            self.assertEqual((ds.n, ds.d, ds.c), shape)
            self.assertGreaterEqual(ds.X.min(), 0)
            self.assertLessEqual(ds.X.max(), 1)

    def test_garbage(self):
        with self.assertRaises(ParseError):
            quadgrad.load_libsvm(self.write("abc def\n"))

    def test_missing(self):
        with self.assertRaises(MissingFile):
            quadgrad.load_libsvm(os.path.join(self.dirname, "nothing"))

    def test_unnormalized_features_are_refused(self):
        with self.assertRaises(ShapeMismatch):
            quadgrad.load_libsvm(self.write("1 1:3\n2 1:4\n"), normalize=False)
