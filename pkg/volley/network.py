"""
The MNIST CNN: CONV (4 kernels 3x3, stride 1) -> ACT-1 -> FC-1 (2704 -> 64)
-> ACT-2 -> FC-2 (64 -> 10), with cubic polynomial activations.

he_forward runs a batch of images packed in one slot vector through the
layers using the slot primitives only; plaintext_forward is the same
computation on numpy arrays and serves as the reference. The flattened
features are ordered kernel first: feature k*out_h*out_w + r*out_w + c.

A batch of 32 images fills 32*2704 > 2^15 slots once convolved, so the dense
layers work map by map and on output blocks of at most `batch` columns, each
block one he_matmul, and sum the partial products.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import log_softmax, softmax

from volley import consts, conv, linalg, misc, packing, simd
from volley.errors import KernelTooLarge, ShapeMismatch, SlotOverflow


logger = logging.getLogger(__name__)


class CnnModel:
    """Weights of the network. Dense matrices are (outputs x inputs)."""

    __slots__ = ['kernels', 'conv_biases', 'fc1', 'fc1_biases', 'fc2',
                 'fc2_biases', 'act1', 'act2', 'h', 'w']

    def __init__(self, kernels, fc1, fc2, conv_biases=None, fc1_biases=None,
                 fc2_biases=None, act1=consts.ACT1_COEFFS,
                 act2=consts.ACT2_COEFFS, h=consts.MNIST_SIDE,
                 w=consts.MNIST_SIDE):
        kernels = np.asarray(kernels, dtype=np.float64)
        fc1 = np.atleast_2d(np.asarray(fc1, dtype=np.float64))
        fc2 = np.atleast_2d(np.asarray(fc2, dtype=np.float64))
        if kernels.ndim != 3 or kernels.shape[0] == 0:
            raise ShapeMismatch("kernels must be a (count, kh, kw) stack, got "
                                "shape %s" % (kernels.shape,))
        kh, kw = kernels.shape[1:]
        if kh > h or kw > w:
            raise KernelTooLarge("%dx%d kernel on %dx%d image" % (kh, kw, h, w))
        features = kernels.shape[0] * (h - kh + 1) * (w - kw + 1)
        if fc1.shape[1] != features:
            raise ShapeMismatch("fc1 is %dx%d, expected %d inputs" %
                                (fc1.shape + (features,)))
        if fc2.shape[1] != fc1.shape[0]:
            raise ShapeMismatch("fc2 is %dx%d, expected %d inputs" %
                                (fc2.shape + (fc1.shape[0],)))

        def biases(values, count, name):
            if values is None:
                return np.zeros(count)
            values = np.asarray(values, dtype=np.float64).ravel()
            if values.shape[0] != count:
                raise ShapeMismatch("%d %s biases, expected %d" %
                                    (values.shape[0], name, count))
            return values

        for name, coeffs in (('act1', act1), ('act2', act2)):
            if len(coeffs) != 4:
                raise ShapeMismatch("%s needs 4 coefficients, got %d" %
                                    (name, len(coeffs)))

        self.kernels = kernels
        self.conv_biases = biases(conv_biases, kernels.shape[0], "conv")
        self.fc1 = fc1
        self.fc1_biases = biases(fc1_biases, fc1.shape[0], "fc1")
        self.fc2 = fc2
        self.fc2_biases = biases(fc2_biases, fc2.shape[0], "fc2")
        self.act1 = tuple(float(c) for c in act1)
        self.act2 = tuple(float(c) for c in act2)
        self.h = h
        self.w = w

    def __repr__(self):
        return "<CnnModel %dx%d -> %d kernels %dx%d -> %d -> %d -> %d>" % (
            self.h, self.w, self.kernel_count, self.kernels.shape[1],
            self.kernels.shape[2], self.features, self.hidden, self.classes)

    @classmethod
    def random(cls, seed=consts.DEFAULT_SEED, h=consts.MNIST_SIDE,
               w=consts.MNIST_SIDE, kernel_count=consts.CONV_KERNELS,
               kernel_side=consts.CONV_KERNEL_SIDE,
               hidden=consts.FC1_OUTPUTS, classes=consts.FC2_OUTPUTS):
        """Uniform weights in +-1/sqrt(fan_in), default activations."""
        rng = np.random.default_rng(seed)
        features = kernel_count * (h - kernel_side + 1) * (w - kernel_side + 1)

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        fan_conv = kernel_side * kernel_side
        return cls(kernels=uniform(fan_conv, (kernel_count, kernel_side, kernel_side)),
                   conv_biases=uniform(fan_conv, kernel_count),
                   fc1=uniform(features, (hidden, features)),
                   fc1_biases=uniform(features, hidden),
                   fc2=uniform(hidden, (classes, hidden)),
                   fc2_biases=uniform(hidden, classes),
                   h=h, w=w)

    @classmethod
    def zeros(cls, h=consts.MNIST_SIDE, w=consts.MNIST_SIDE,
              kernel_count=consts.CONV_KERNELS,
              kernel_side=consts.CONV_KERNEL_SIDE, hidden=consts.FC1_OUTPUTS,
              classes=consts.FC2_OUTPUTS):
        features = kernel_count * (h - kernel_side + 1) * (w - kernel_side + 1)
        return cls(kernels=np.zeros((kernel_count, kernel_side, kernel_side)),
                   fc1=np.zeros((hidden, features)),
                   fc2=np.zeros((classes, hidden)), h=h, w=w)

    @property
    def kernel_count(self):
        return self.kernels.shape[0]

    @property
    def out_h(self):
        return self.h - self.kernels.shape[1] + 1

    @property
    def out_w(self):
        return self.w - self.kernels.shape[2] + 1

    @property
    def features(self):
        return self.fc1.shape[1]

    @property
    def hidden(self):
        return self.fc1.shape[0]

    @property
    def classes(self):
        return self.fc2.shape[0]

    def conv_spec(self, batch=1):
        return conv.ConvSpec(self.h, self.w, list(self.kernels),
                             self.conv_biases, batch)

    def params(self):
        return {'kernels': self.kernels, 'conv_biases': self.conv_biases,
                'fc1': self.fc1, 'fc1_biases': self.fc1_biases,
                'fc2': self.fc2, 'fc2_biases': self.fc2_biases}

    def with_params(self, **params):
        values = self.params()
        values.update(params)
        return CnnModel(act1=self.act1, act2=self.act2, h=self.h, w=self.w,
                        **values)


class Batch:
    """Images of one forward pass, with their labels when known."""

    __slots__ = ['images', 'labels']

    def __init__(self, images, labels=None):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or images.shape[0] == 0:
            raise ShapeMismatch("expected a (count, h, w) image stack, got "
                                "shape %s" % (images.shape,))
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).ravel()
            if labels.shape[0] != images.shape[0]:
                raise ShapeMismatch("%d labels for %d images" %
                                    (labels.shape[0], images.shape[0]))
        self.images = images
        self.labels = labels

    def __len__(self):
        return self.images.shape[0]

    def chunks(self, size):
        for start in range(0, len(self), size):
            labels = None if self.labels is None else self.labels[start:start + size]
            yield Batch(self.images[start:start + size], labels)


def poly_activate(ct, coeffs, mask=None):
    """c0 + c1*x + c2*x^2 + c3*x^3 on every slot of ct, with two ciphertext
    multiplications.

    The constants are multiplied by `mask` (by default the slots of the
    matrix), so slots outside it stay 0.
    """
    if len(coeffs) != 4:
        raise ShapeMismatch("expected 4 coefficients, got %d" % len(coeffs))
    c0, c1, c2, c3 = (float(c) for c in coeffs)
    if mask is None:
        mask = ct.constants(np.ones((ct.rows, ct.cols)))
    x = ct.vec
    x2 = simd.mul(x, x)
    x3 = simd.mul(x2, x)
    out = simd.cmul(x, c1 * mask)
    out = simd.add(out, simd.cmul(x2, c2 * mask))
    out = simd.add(out, simd.cmul(x3, c3 * mask))
    out = simd.add(out, simd.encode(c0 * mask, ct.slot_count, ct.ledger))
    return ct.with_vec(out)


def _ordered_map(function, items, workers):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers,
                                thread_name_prefix="forward") as pool:
            return list(pool.map(function, items))
    return [function(item) for item in items]


def feature_row_width(batch, map_size, slot_count=consts.DEFAULT_SLOTS):
    """Width of the reconstructed rows of one feature map: the next power of
    two when the batch still fits, so SumColVec runs in log steps."""
    padded = misc.next_power_of_two(map_size)
    if batch * padded <= slot_count:
        return padded
    if batch * map_size <= slot_count:
        return map_size
    raise SlotOverflow("%d rows of %d features do not fit in %d slots" %
                       (batch, map_size, slot_count))


def _dense_layer(inputs, weight, bias, weights_plain):
    # inputs: (PackedMatrix, feature indices of its first columns) pairs.
    # Returns the same kind of pairs, one per block of output columns.
    first = inputs[0][0]
    n = first.rows
    outputs = []
    for start, stop in linalg.column_blocks(n, weight.shape[0]):
        cols = np.arange(start, stop)
        total = None
        for pm, features in inputs:
            B = np.zeros((pm.cols, len(cols)))
            B[:len(features)] = weight[np.ix_(cols, features)].T
            if weights_plain:
                product = linalg.he_matmul_public(pm, B)
            else:
                product = linalg.he_matmul(
                    pm, linalg.pack_transposed(B, n, pm.slot_count, pm.ledger))
            total = product if total is None else total.with_vec(
                simd.add(total.vec, product.vec))
        shift = total.constants(np.tile(bias[cols], (n, 1)))
        total = total.with_vec(simd.add(
            total.vec, simd.encode(shift, total.slot_count, total.ledger)))
        outputs.append((total, cols))
    return outputs


def he_forward(batch, model, weights_plain=False,
               slot_count=consts.DEFAULT_SLOTS, ledger=None,
               workers=consts.DEFAULT_WORKERS):
    """Logits (batch x classes) of the slot-vector forward pass.

    Charges `ledger` (a fresh one if None) with every primitive used.
    """
    images = batch.images
    n = len(batch)
    if images.shape[1:] != (model.h, model.w):
        raise ShapeMismatch("model expects %dx%d images, got %dx%d" %
                            ((model.h, model.w) + images.shape[1:]))
    ledger = simd.OpLedger() if ledger is None else ledger
    started = time.monotonic()

    ct = packing.pack_matrix(images.reshape(n * model.h, model.w), slot_count,
                             ledger)
    spec = model.conv_spec(n)
    maps = conv.he_conv2d(ct, spec, workers)

    map_size = model.out_h * model.out_w
    row_width = feature_row_width(n, map_size, slot_count)
    act_mask = packing.make_region_mask(n, row_width, n, map_size,
                                        slot_count=slot_count)

    def activated_map(k):
        dense = conv.reconstruct_representation([maps[k]], spec, row_width)
        return poly_activate(dense, model.act1, act_mask)

    activated = _ordered_map(activated_map, range(model.kernel_count), workers)
    inputs = [(pm, np.arange(k * map_size, (k + 1) * map_size))
              for k, pm in enumerate(activated)]
    hidden = _dense_layer(inputs, model.fc1, model.fc1_biases, weights_plain)
    hidden = [(poly_activate(pm, model.act2), cols) for pm, cols in hidden]
    logits = _dense_layer(hidden, model.fc2, model.fc2_biases, weights_plain)
    result = np.hstack([pm.decode() for pm, cols in logits])

    logger.info("Forward pass of %d images in %.0f ms: %r", n,
                (time.monotonic() - started) * 1000, ledger.snapshot())
    return result


def forward_cipher_mults(model, batch_size, weights_plain=False):
    """Ciphertext multiplications of one he_forward pass."""
    def blocks(count):
        return [min(batch_size, count - start)
                for start in range(0, count, batch_size)]

    def matmuls(width):
        if weights_plain:
            return 0
        return sum(linalg.padded_columns(batch_size, m) for m in blocks(width))

    hidden_blocks = blocks(model.hidden)
    return (2 * model.kernel_count
            + model.kernel_count * matmuls(model.hidden)
            + 2 * len(hidden_blocks)
            + len(hidden_blocks) * matmuls(model.classes))


def _plain_layers(images, model):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != (model.h, model.w):
        raise ShapeMismatch("model expects (count, %d, %d) images, got "
                            "shape %s" % (model.h, model.w, images.shape))
    z1 = conv.plain_conv2d(images, model.conv_spec(images.shape[0]))
    z1 = z1.reshape(images.shape[0], -1)
    a1 = P.polyval(z1, model.act1)
    z2 = a1 @ model.fc1.T + model.fc1_biases
    a2 = P.polyval(z2, model.act2)
    z3 = a2 @ model.fc2.T + model.fc2_biases
    return z1, a1, z2, a2, z3


def plaintext_forward(batch, model):
    images = batch.images if isinstance(batch, Batch) else batch
    return _plain_layers(images, model)[-1]


def plain_loss(model, images, labels):
    """Mean softmax cross-entropy of the logits."""
    logits = _plain_layers(images, model)[-1]
    labels = np.asarray(labels, dtype=np.int64)
    return -np.mean(log_softmax(logits, axis=1)[np.arange(len(labels)), labels])


def plain_gradients(model, images, labels):
    """Gradients of plain_loss, keyed like CnnModel.params()."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    count = images.shape[0]
    z1, a1, z2, a2, z3 = _plain_layers(images, model)

    d3 = softmax(z3, axis=1)
    d3[np.arange(count), labels] -= 1.0
    d3 /= count
    d2 = (d3 @ model.fc2) * P.polyval(z2, P.polyder(model.act2))
    d1 = (d2 @ model.fc1) * P.polyval(z1, P.polyder(model.act1))
    d1 = d1.reshape(count, model.kernel_count, model.out_h, model.out_w)

    kh, kw = model.kernels.shape[1:]
    windows = np.lib.stride_tricks.sliding_window_view(images, (kh, kw),
                                                       axis=(1, 2))
    return {'kernels': np.einsum('brcpq,bkrc->kpq', windows, d1),
            'conv_biases': d1.sum(axis=(0, 2, 3)),
            'fc1': d2.T @ a1, 'fc1_biases': d2.sum(axis=0),
            'fc2': d3.T @ a2, 'fc2_biases': d3.sum(axis=0)}


def train_plain(model, images, labels, epochs=1, learning_rate=0.01,
                batch_size=consts.MNIST_BATCH, seed=consts.DEFAULT_SEED):
    """Mini-batch SGD on the plaintext network.

    Returns the trained model and the loss of every step.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(images.shape[0])
        for start in range(0, len(order), batch_size):
            chosen = order[start:start + batch_size]
            grads = plain_gradients(model, images[chosen], labels[chosen])
            model = model.with_params(**{
                name: value - learning_rate * grads[name]
                for name, value in model.params().items()})
            losses.append(plain_loss(model, images[chosen], labels[chosen]))
            logger.debug("epoch %d step %d: loss %.6f", epoch,
                         start // batch_size, losses[-1])
    return model, losses
