"""This module implements the verification suites run by `volley verify`.

Each suite draws seeded random instances, runs the slot-vector procedure
and its plaintext oracle, and counts the cases whose error is above the
case's tolerance. Counts (rotations, multiplications) are checked the same
way with a tolerance of 0.

Example usage:
from volley import verify
summary = verify.run_suite('matmul', run_config)
summary['failures']
"""

import logging

import numpy as np

from volley import conv, linalg, packing, quadgrad, simd
from volley import consts


logger = logging.getLogger(__name__)


class Case:
    """One comparison: what was computed against what was expected."""

    __slots__ = ['label', 'computed', 'expected', 'tolerance', 'relative']

    def __init__(self, label, computed, expected, tolerance, relative=False):
        self.label = label
        self.computed = np.asarray(computed, dtype=np.float64)
        self.expected = np.asarray(expected, dtype=np.float64)
        self.tolerance = tolerance
        self.relative = relative

    def error(self):
        if self.computed.shape != self.expected.shape:
            return float('inf')
        if self.computed.size == 0:
            return 0.0
        err = float(np.max(np.abs(self.computed - self.expected)))
        if self.relative:
            err /= max(1.0, float(np.max(np.abs(self.expected))))
        return err


class Suite:
    """Base suite: subclasses yield Cases from `cases`."""

    def __init__(self, name, description):
        self.name = name
        self.description = description

    def cases(self, rng, slot_count):
        raise NotImplementedError

    def run(self, run_config, inject_fault=False):
        rng = np.random.default_rng(run_config.seed)
        count = failures = 0
        worst = 0.0
        for case in self.cases(rng, run_config.slots):
            if inject_fault and count == 0:
                case.computed = case.computed + 1.0
            err = case.error()
            count += 1
            worst = max(worst, err)
            if not err <= case.tolerance:
                failures += 1
                logger.warning("%s: %s failed, error %g > %g", self.name,
                               case.label, err, case.tolerance)
        logger.info("%s: %d cases, %d failures, worst error %g", self.name,
                    count, failures, worst)
        return {'suite': self.name, 'cases': count, 'failures': failures,
                'worst_err': worst}


def window_sums(Z, kh, kw):
    """Brute-force SumForConv: window sums at top-left, zeros elsewhere."""
    rows, cols = Z.shape
    out = np.zeros_like(Z)
    for i in range(rows - kh + 1):
        for j in range(cols - kw + 1):
            out[i, j] = Z[i:i + kh, j:j + kw].sum()
    return out


class PackingSuite(Suite):

    def cases(self, rng, slot_count):
        for rows in range(1, 9):
            for cols in range(1, 9):
                for kh in (2, 3):
                    for kw in (2, 3):
                        if kh > rows or kw > cols:
                            continue
                        Z = rng.uniform(-1, 1, size=(rows, cols))
                        ledger = simd.OpLedger()
                        pm = packing.pack_matrix(Z, slot_count, ledger)
                        out = packing.sum_for_conv(pm, kh, kw)
                        label = "sum_for_conv %dx%d/%dx%d" % (rows, cols, kh, kw)
                        yield Case(label, simd.decode(out.vec, slot_count),
                                   packing.slot_constants(window_sums(Z, kh, kw),
                                                          slot_count),
                                   consts.SUM_FOR_CONV_TOLERANCE)
                        yield Case(label + " rotations",
                                   ledger.snapshot().rotations,
                                   (kh - 1) + (kw - 1), 0)
                Z = rng.uniform(-1, 1, size=(rows, cols))
                pm = packing.pack_matrix(Z, slot_count)
                yield Case("sum_row_vec %dx%d" % (rows, cols),
                           packing.sum_row_vec(pm).decode(),
                           np.tile(Z.sum(axis=0), (rows, 1)), 1e-12)
                yield Case("sum_col_vec %dx%d" % (rows, cols),
                           packing.sum_col_vec(pm).decode(),
                           np.tile(Z.sum(axis=1)[:, np.newaxis], (1, cols)), 1e-12)


class MatmulSuite(Suite):

    sizes = (1, 2, 4, 8, 16)
    instances = 200

    def cases(self, rng, slot_count):
        for index in range(self.instances):
            n = int(rng.choice(self.sizes))
            f = int(rng.choice(self.sizes))
            m = int(rng.choice([d for d in range(1, n + 1) if n % d == 0]))
            A = rng.uniform(-1, 1, size=(n, f))
            B = rng.uniform(-1, 1, size=(f, m))
            ledger = simd.OpLedger()
            pa = packing.pack_matrix(A, slot_count, ledger)
            product = linalg.he_matmul(pa, linalg.pack_transposed(B, n, slot_count, ledger))
            label = "he_matmul #%d %dx%d by %dx%d" % (index, n, f, f, m)
            report = ledger.snapshot()
            yield Case(label, product.decode(), linalg.plain_matmul(A, B),
                       consts.MATMUL_TOLERANCE)
            yield Case(label + " cipher_mults", report.cipher_mults, m, 0)
            yield Case(label + " rotations", report.rotations,
                       linalg.he_matmul_rotations(n, f, m), 0)


class ConvSuite(Suite):

    instances = 49

    def _instance(self, rng, slot_count, h, w, kh, kw, batch, kernel_count):
        spec = conv.ConvSpec(h, w, rng.uniform(-1, 1, size=(kernel_count, kh, kw)),
                             rng.uniform(-1, 1, size=kernel_count), batch)
        images = rng.uniform(0, 1, size=(batch, h, w))
        ledger = simd.OpLedger()
        ct = packing.pack_matrix(images.reshape(batch * h, w), slot_count, ledger)
        maps = conv.he_conv2d(ct, spec)
        label = "he_conv2d %dx%d/%dx%d batch %d" % (h, w, kh, kw, batch)
        expected = conv.plain_conv2d(images, spec)
        for k, pm in enumerate(maps):
            region = pm.decode().reshape(batch, h, w)
            full = np.zeros((batch, h, w))
            full[:, :spec.out_h, :spec.out_w] = expected[:, k]
            yield Case("%s kernel %d" % (label, k), region, full,
                       consts.CONV_TOLERANCE)

        map_size = spec.out_h * spec.out_w
        before = ledger.snapshot()
        if batch * kernel_count * map_size <= slot_count:
            dense = conv.reconstruct_representation(maps, spec).decode()
            expected_rows = expected.reshape(batch, -1)
        else:
            dense = conv.reconstruct_representation(maps[:1], spec).decode()
            expected_rows = expected[:, 0].reshape(batch, -1)
        used = (ledger.snapshot() - before).rotations
        yield Case(label + " reconstruction", dense, expected_rows,
                   consts.CONV_TOLERANCE)
        budget = (spec.out_h + 1) * batch * kernel_count
        yield Case(label + " reconstruction budget", max(used - budget, 0), 0, 0)

    def cases(self, rng, slot_count):
        for index in range(self.instances):
            h = int(rng.integers(3, 9))
            w = int(rng.integers(3, 9))
            kh = int(rng.choice([2, 3]))
            kw = int(rng.choice([2, 3]))
            batch = int(rng.choice([1, 2]))
            yield from self._instance(rng, slot_count, h, w, kh, kw, batch, 2)
        side = consts.MNIST_SIDE
        if consts.MNIST_BATCH * side * side <= slot_count:
            yield from self._instance(rng, slot_count, side, side, 3, 3,
                                      consts.MNIST_BATCH, consts.CONV_KERNELS)
        else:
            logger.info("Skipping the 28x28 batch: %d slots are too few",
                        slot_count)


def random_lr_instance(rng, max_n=20, max_d=4, max_c=3, weight_range=None):
    n = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    c = int(rng.integers(2, max_c + 1))
    X = np.hstack([np.ones((n, 1)), rng.uniform(0, 1, size=(n, d))])
    y = rng.integers(0, c, size=n)
    if weight_range is None:
        W = rng.normal(size=(c, d + 1))
    else:
        W = rng.uniform(-weight_range, weight_range, size=(c, d + 1))
    return X, y, c, W


def numeric_gradient(X, Yh, W, step=1e-5):
    grad = np.zeros_like(W)
    for index in np.ndindex(*W.shape):
        bump = np.zeros_like(W)
        bump[index] = step
        grad[index] = (quadgrad.log_likelihood(X, Yh, W + bump)
                       - quadgrad.log_likelihood(X, Yh, W - bump)) / (2 * step)
    return grad


def numeric_hessian(X, Yh, W, step=1e-5):
    width = W.size
    H = np.zeros((width, width))
    for column, index in enumerate(np.ndindex(*W.shape)):
        bump = np.zeros_like(W)
        bump[index] = step
        upper = quadgrad.gradient(X, Yh, quadgrad.softmax_probs(X, W + bump))
        lower = quadgrad.gradient(X, Yh, quadgrad.softmax_probs(X, W - bump))
        H[:, column] = ((upper - lower) / (2 * step)).ravel()
    return H


class QuadgradSuite(Suite):

    def cases(self, rng, slot_count):
        for index in range(50):
            X, y, c, W = random_lr_instance(rng)
            Yh = quadgrad.one_hot(y, c)
            P = quadgrad.softmax_probs(X, W)
            yield Case("gradient #%d" % index, quadgrad.gradient(X, Yh, P),
                       numeric_gradient(X, Yh, W), 1e-5, relative=True)
            yield Case("exact_hessian #%d" % index, quadgrad.exact_hessian(X, P),
                       numeric_hessian(X, Yh, W), 1e-4, relative=True)
        for index in range(100):
            X, y, c, W = random_lr_instance(rng, weight_range=5.0)
            if index % 2:
                W = np.zeros_like(W)
            smallest, passed = quadgrad.dominance_check(X, W)
            yield Case("dominance #%d" % index, min(smallest, 0.0), 0.0,
                       consts.DOMINANCE_SLACK)


suites = [PackingSuite('packing', "SumForConv, SumRowVec and SumColVec"),
          MatmulSuite('matmul', "he_matmul against the plain product"),
          ConvSuite('conv', "he_conv2d and reconstruction"),
          QuadgradSuite('quadgrad', "gradient, Hessian and bound checks")]

suite_map = dict((suite.name, suite) for suite in suites)


def run_suite(name, run_config, inject_fault=False):
    """Run one suite, or every suite for 'all'."""
    if name != 'all':
        return suite_map[name].run(run_config, inject_fault)
    results = [suite.run(run_config, inject_fault) for suite in suites]
    return {'suite': 'all',
            'cases': sum(r['cases'] for r in results),
            'failures': sum(r['failures'] for r in results),
            'worst_err': max(r['worst_err'] for r in results)}
