import unittest

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.testing import assert_allclose, assert_array_equal

from volley import consts, misc, network, packing, simd
from volley.errors import ShapeMismatch, SlotOverflow


TOY = dict(h=8, w=8, kernel_count=2, hidden=8, classes=4)


def toy_batch(seed, count=4):
    rng = np.random.default_rng(seed)
    return network.Batch(rng.uniform(0, 1, size=(count, 8, 8)),
                         rng.integers(0, 4, size=count))


class TestPolyActivate(unittest.TestCase):
    def test_constant_terms(self):
        for coeffs in (consts.ACT1_COEFFS, consts.ACT2_COEFFS):
            pm = packing.pack_matrix(np.zeros((2, 2)), 8)
            out = network.poly_activate(pm, coeffs).decode()
            assert_array_equal(out, np.full((2, 2), coeffs[0]))
        self.assertEqual(consts.ACT1_COEFFS[0], -0.00015120704)
        self.assertEqual(consts.ACT2_COEFFS[0], -1.5650465)

    def test_identity_polynomial(self):
        values = np.random.default_rng(0).uniform(-3, 3, size=(4, 4))
        pm = packing.pack_matrix(values, 16)
        assert_array_equal(network.poly_activate(pm, (0, 1, 0, 0)).decode(), values)

    def test_two_cipher_mults(self):
        ledger = simd.OpLedger()
        pm = packing.pack_matrix(np.ones((3, 3)), 16, ledger)
        network.poly_activate(pm, consts.ACT1_COEFFS)
        self.assertEqual(ledger.snapshot().cipher_mults, 2)

    def test_matches_horner(self):
        x = np.linspace(-2, 2, 10000)
        pm = packing.pack_matrix(x.reshape(100, 100), 16384)
        for coeffs in (consts.ACT1_COEFFS, consts.ACT2_COEFFS):
            out = network.poly_activate(pm, coeffs).decode().ravel()
            assert_allclose(out, P.polyval(x, coeffs), rtol=1e-12, atol=1e-12)

    def test_slots_outside_stay_empty(self):
        pm = packing.pack_matrix(np.ones((2, 3)), 16)
        out = network.poly_activate(pm, consts.ACT2_COEFFS)
        assert_array_equal(simd.decode(out.vec, 16)[6:], 0)


class TestCnnModel(unittest.TestCase):
    def test_mnist_shapes(self):
        model = network.CnnModel.random(1)
        self.assertEqual(model.features, 2704)
        self.assertEqual((model.hidden, model.classes), (64, 10))
        self.assertEqual(model.act1, consts.ACT1_COEFFS)

    def test_wrong_fc1(self):
        with self.assertRaises(ShapeMismatch):
            network.CnnModel(np.zeros((4, 3, 3)), np.zeros((64, 2703)),
                             np.zeros((10, 64)))

    def test_wrong_fc2(self):
        with self.assertRaises(ShapeMismatch):
            network.CnnModel(np.zeros((4, 3, 3)), np.zeros((64, 2704)),
                             np.zeros((10, 63)))

    def test_wrong_bias_count(self):
        with self.assertRaises(ShapeMismatch):
            network.CnnModel(np.zeros((4, 3, 3)), np.zeros((64, 2704)),
                             np.zeros((10, 64)), conv_biases=[1, 2])

    def test_with_params(self):
        model = network.CnnModel.zeros(**TOY)
        changed = model.with_params(fc2_biases=np.ones(4))
        assert_array_equal(changed.fc2_biases, np.ones(4))
        assert_array_equal(model.fc2_biases, np.zeros(4))


class TestBatch(unittest.TestCase):
    def test_label_count(self):
        with self.assertRaises(ShapeMismatch):
            network.Batch(np.zeros((3, 4, 4)), [0, 1])

    def test_chunks(self):
        batch = network.Batch(np.zeros((5, 2, 2)), range(5))
        sizes = [len(chunk) for chunk in batch.chunks(2)]
        self.assertEqual(sizes, [2, 2, 1])


class TestForward(unittest.TestCase):
    def test_toy_network(self):
        model = network.CnnModel.random(3, **TOY)
        batch = toy_batch(4)
        ledger = simd.OpLedger()
        logits = network.he_forward(batch, model, slot_count=256, ledger=ledger)
        assert_allclose(logits, network.plaintext_forward(batch, model),
                        rtol=0, atol=1e-6)
        self.assertEqual(ledger.snapshot().cipher_mults, 32)
        self.assertEqual(network.forward_cipher_mults(model, 4), 32)

    def test_public_weights(self):
        model = network.CnnModel.random(5, **TOY)
        batch = toy_batch(6)
        ledger = simd.OpLedger()
        logits = network.he_forward(batch, model, weights_plain=True,
                                    slot_count=256, ledger=ledger)
        assert_allclose(logits, network.plaintext_forward(batch, model),
                        rtol=0, atol=1e-6)
        self.assertEqual(ledger.snapshot().cipher_mults,
                         network.forward_cipher_mults(model, 4, True))

    def test_seeded_models(self):
        rng = np.random.default_rng(20)
        for seed in range(20):
            model = network.CnnModel.random(seed)
            batch = network.Batch(rng.uniform(0, 1, size=(32, 28, 28)))
            ledger = simd.OpLedger()
            logits = network.he_forward(batch, model, ledger=ledger)
            expected = network.plaintext_forward(batch, model)
            assert_allclose(logits, expected, rtol=0, atol=1e-6)
            self.assertEqual(misc.argmax_rows(logits), misc.argmax_rows(expected))
            self.assertEqual(ledger.snapshot().cipher_mults, 300)

    def test_mnist_cipher_mults(self):
        model = network.CnnModel.zeros()
        self.assertEqual(network.forward_cipher_mults(model, 32), 300)
        self.assertEqual(network.forward_cipher_mults(model, 32, True), 12)

    def test_zero_images(self):
        model = network.CnnModel.random(7, **TOY)
        logits = network.he_forward(network.Batch(np.zeros((4, 8, 8))), model,
                                    slot_count=256)
        map_size = model.out_h * model.out_w
        a1 = np.repeat(P.polyval(model.conv_biases, model.act1), map_size)
        a2 = P.polyval(model.fc1 @ a1 + model.fc1_biases, model.act2)
        expected = model.fc2 @ a2 + model.fc2_biases
        assert_allclose(logits, np.tile(expected, (4, 1)), rtol=0, atol=1e-9)

    def test_zero_model_ties(self):
        model = network.CnnModel.zeros(**TOY)
        logits = network.he_forward(toy_batch(8), model, slot_count=256)
        self.assertEqual(misc.argmax_rows(logits), [0, 0, 0, 0])

    def test_batch_isolation(self):
        model = network.CnnModel.random(9)
        images = np.random.default_rng(9).uniform(0, 1, size=(32, 28, 28))
        changed = images.copy()
        changed[31] = np.random.default_rng(10).uniform(0, 1, size=(28, 28))
        before = network.he_forward(network.Batch(images), model)
        after = network.he_forward(network.Batch(changed), model)
        assert_array_equal(before[:31], after[:31])

    def test_workers(self):
        model = network.CnnModel.random(11, **TOY)
        batch = toy_batch(12)
        serial, threaded = simd.OpLedger(), simd.OpLedger()
        a = network.he_forward(batch, model, slot_count=256, ledger=serial)
        b = network.he_forward(batch, model, slot_count=256, ledger=threaded,
                               workers=4)
        assert_array_equal(a, b)
        self.assertEqual(serial.snapshot(), threaded.snapshot())

    def test_batch_too_large(self):
        model = network.CnnModel.random(13, **TOY)
        with self.assertRaises(SlotOverflow):
            network.he_forward(network.Batch(np.zeros((5, 8, 8))), model,
                               slot_count=256)

    def test_image_size_mismatch(self):
        model = network.CnnModel.random(13, **TOY)
        with self.assertRaises(ShapeMismatch):
            network.he_forward(network.Batch(np.zeros((4, 7, 7))), model,
                               slot_count=256)

    def test_feature_row_width(self):
        self.assertEqual(network.feature_row_width(32, 676), 1024)
        self.assertEqual(network.feature_row_width(48, 676), 676)
        with self.assertRaises(SlotOverflow):
            network.feature_row_width(64, 676)


class TestPlainTraining(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(30)
        self.model = network.CnnModel.random(31, h=5, w=5, kernel_count=2,
                                             kernel_side=2, hidden=3, classes=3)
        self.images = rng.uniform(0, 1, size=(4, 5, 5))
        self.labels = np.array([0, 1, 2, 1])

    def test_gradients_match_finite_differences(self):
        grads = network.plain_gradients(self.model, self.images, self.labels)
        step = 1e-6
        for name, value in self.model.params().items():
            numeric = np.zeros_like(value)
            for index in np.ndindex(*value.shape):
                bump = np.zeros_like(value)
                bump[index] = step
                up = self.model.with_params(**{name: value + bump})
                down = self.model.with_params(**{name: value - bump})
                numeric[index] = (network.plain_loss(up, self.images, self.labels)
                                  - network.plain_loss(down, self.images,
                                                       self.labels)) / (2 * step)
            assert_allclose(grads[name], numeric, rtol=0, atol=1e-6,
                            err_msg=name)

    def test_step_lowers_the_loss(self):
        before = network.plain_loss(self.model, self.images, self.labels)
        trained, losses = network.train_plain(self.model, self.images, self.labels,
                                              learning_rate=1e-3, batch_size=4)
        self.assertEqual(len(losses), 1)
        self.assertLess(losses[0], before)

    def test_deterministic(self):
        first = network.train_plain(self.model, self.images, self.labels,
                                    epochs=2, batch_size=2, seed=1)[1]
        second = network.train_plain(self.model, self.images, self.labels,
                                     epochs=2, batch_size=2, seed=1)[1]
        self.assertEqual(first, second)
