"""
Multiclass logistic regression trained with the quadratic gradient.

The log-likelihood Hessian is bounded, at every W, by the diagonal matrix B̄
whose entries are eps + the absolute row sums of ½XᵀX, repeated for each
class. Scaling the gradient by B̄⁻¹ (element-wise, since B̄ is diagonal)
gives the quadratic gradient G, which replaces the raw gradient in Nesterov's
accelerated gradient and in Adagrad.

Weights are c x (1+d) matrices; column 0 multiplies the bias feature.
Flattened weights and Hessians are ordered class first: index j*(1+d) + l.

Example usage:
from volley import quadgrad
ds = quadgrad.load_libsvm("iris.scale")
W, trace = quadgrad.train_nag(ds, 50)
quadgrad.accuracy(ds, W)
"""

import logging
import os

import numpy as np
from scipy.linalg import eigvalsh
from scipy.special import logsumexp, softmax
from sklearn.datasets import load_svmlight_file
from sklearn.model_selection import StratifiedKFold

from volley import consts, misc
from volley.errors import LabelOutOfRange, MissingFile, ParseError, ShapeMismatch


logger = logging.getLogger(__name__)


class LrDataset:
    """Features with a leading bias column, normalized into [0, 1], and
    labels in 0 .. c-1."""

    __slots__ = ['X', 'y', 'c']

    def __init__(self, X, y, c):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.int64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ShapeMismatch("%d labels for %d records" % (y.shape[0], X.shape[0]))
        if not np.all(X[:, 0] == 1.0):
            raise ShapeMismatch("column 0 must be the bias feature 1")
        if X.min() < 0.0 or X.max() > 1.0:
            raise ShapeMismatch("features must be normalized into [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= c):
            raise LabelOutOfRange("labels must lie in [0, %d)" % c)
        self.X = X
        self.y = y
        self.c = c

    def __repr__(self):
        return "<LrDataset n=%d d=%d c=%d>" % (self.n, self.d, self.c)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1] - 1

    @property
    def Yh(self):
        return one_hot(self.y, self.c)

    def subset(self, indices):
        return LrDataset(self.X[indices], self.y[indices], self.c)


class TrainState:
    """Everything an optimizer carries from one iteration to the next."""

    __slots__ = ['W', 'V', 'BbarInv', 'Gt', 'alpha0', 'alpha1', 'epsilon']

    def __init__(self, ds, epsilon=consts.EPSILON):
        shape = (ds.c, ds.d + 1)
        self.W = np.zeros(shape)
        self.V = np.zeros(shape)
        self.BbarInv = build_bbar_inv(ds.X, ds.c, epsilon)
        self.Gt = np.zeros(shape)
        self.alpha0 = consts.NAG_ALPHA0
        self.alpha1 = next_alpha(self.alpha0)
        self.epsilon = epsilon

    def advance_momentum(self):
        self.alpha0 = self.alpha1
        self.alpha1 = next_alpha(self.alpha0)


def next_alpha(alpha):
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * alpha * alpha))


def one_hot(y, c):
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelOutOfRange("labels must lie in [0, %d), got %d..%d" %
                              (c, y.min(), y.max()))
    Yh = np.zeros((y.shape[0], c))
    Yh[np.arange(y.shape[0]), y] = 1.0
    return Yh


def _logits(X, W):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if X.shape[1] != W.shape[1]:
        raise ShapeMismatch("X has %d columns, W has %d" % (X.shape[1], W.shape[1]))
    return X @ W.T


def softmax_probs(X, W):
    # scipy subtracts the row maximum before exponentiating
    return softmax(_logits(X, W), axis=1)


def log_likelihood(X, Yh, W):
    Z = _logits(X, W)
    Yh = np.asarray(Yh, dtype=np.float64)
    if Yh.shape != Z.shape:
        raise ShapeMismatch("one-hot labels are %s, logits %s" % (Yh.shape, Z.shape))
    return float(np.sum(Yh * Z) - np.sum(logsumexp(Z, axis=1)))


def gradient(X, Yh, P):
    Yh = np.asarray(Yh, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Yh.shape != P.shape or X.shape[0] != P.shape[0]:
        raise ShapeMismatch("shapes %s, %s and %s do not agree" %
                            (X.shape, Yh.shape, P.shape))
    return (Yh - P).T @ X


def build_bbar(X, c, epsilon=consts.EPSILON):
    """The bound B̄ itself (c x (1+d)), before taking reciprocals."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Hbar = -0.5 * X.T @ X
    row = epsilon + np.abs(Hbar).sum(axis=0)
    return np.tile(row, (c, 1))


def build_bbar_inv(X, c, epsilon=consts.EPSILON):
    return 1.0 / build_bbar(X, c, epsilon)


def quadratic_gradient(g, BbarInv):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != np.shape(BbarInv):
        raise ShapeMismatch("gradient is %s, bound is %s" % (g.shape, np.shape(BbarInv)))
    return BbarInv * g


def _trace_entry(ds, Yh, W, iteration):
    g = gradient(ds.X, Yh, softmax_probs(ds.X, W))
    entry = {'iter': iteration, 'loglik': log_likelihood(ds.X, Yh, W),
             'grad_maxnorm': float(np.max(np.abs(g)))}
    logger.debug("iteration %d: loglik %.12g, gradient max-norm %.6g",
                 iteration, entry['loglik'], entry['grad_maxnorm'])
    return entry


def _check_kappa(kappa):
    if kappa < 1:
        raise ValueError("at least one iteration is needed, got %r" % (kappa,))


def train_nag(ds, kappa, epsilon=consts.EPSILON):
    """Nesterov's accelerated gradient driven by the quadratic gradient.

    Returns W and the trace of the kappa+1 weights W took (W = 0 first).
    """
    _check_kappa(kappa)
    Yh = ds.Yh
    state = TrainState(ds, epsilon)
    trace = [_trace_entry(ds, Yh, state.W, 0)]
    for count in range(1, kappa + 1):
        P = softmax_probs(ds.X, state.V)
        G = quadratic_gradient(gradient(ds.X, Yh, P), state.BbarInv)
        eta = (1.0 - state.alpha0) / state.alpha1
        gamma = 1.0 / (ds.n * count)
        w_temp = state.W + (1.0 + gamma) * G
        state.W = (1.0 - eta) * w_temp + eta * state.V
        state.V = w_temp
        state.advance_momentum()
        trace.append(_trace_entry(ds, Yh, state.W, count))
    return state.W, trace


def train_adagrad(ds, kappa, epsilon=consts.EPSILON,
                  adagrad_epsilon=consts.EPSILON):
    """Adagrad driven by the quadratic gradient, learning rate 1.01."""
    _check_kappa(kappa)
    Yh = ds.Yh
    state = TrainState(ds, epsilon)
    trace = [_trace_entry(ds, Yh, state.W, 0)]
    for count in range(1, kappa + 1):
        P = softmax_probs(ds.X, state.W)
        G = quadratic_gradient(gradient(ds.X, Yh, P), state.BbarInv)
        state.Gt = state.Gt + G * G
        Gamma = consts.ADAGRAD_RATE / np.sqrt(adagrad_epsilon + state.Gt)
        state.W = state.W + Gamma * G
        trace.append(_trace_entry(ds, Yh, state.W, count))
    return state.W, trace


def train_fixed_hessian(ds, kappa, epsilon=consts.EPSILON):
    """Plain ascent W <- W + B̄⁻¹ ⊙ g; the log-likelihood never decreases."""
    _check_kappa(kappa)
    Yh = ds.Yh
    state = TrainState(ds, epsilon)
    trace = [_trace_entry(ds, Yh, state.W, 0)]
    for count in range(1, kappa + 1):
        P = softmax_probs(ds.X, state.W)
        state.W = state.W + quadratic_gradient(gradient(ds.X, Yh, P), state.BbarInv)
        trace.append(_trace_entry(ds, Yh, state.W, count))
    return state.W, trace


OPTIMIZERS = {
    'nag': train_nag,
    'adagrad': train_adagrad,
    'fixed': train_fixed_hessian,
}


def exact_hessian(X, P):
    """Hessian of the log-likelihood, sum over records of
    (p pᵀ - diag p) ⊗ x xᵀ; order c*(1+d), class first."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if X.shape[0] != P.shape[0]:
        raise ShapeMismatch("%d records but %d probability rows" %
                            (X.shape[0], P.shape[0]))
    n, width = X.shape
    c = P.shape[1]
    H = np.einsum('ij,ik,il,im->jlkm', P, P, X, X, optimize=True)
    diagonal = np.einsum('ij,il,im->jlm', P, X, X, optimize=True)
    for j in range(c):
        H[j, :, j, :] -= diagonal[j]
    return H.reshape(c * width, c * width)


def aggregate_kronecker_hessian(X, P):
    """[PᵀP - diag(Σp)] ⊗ XᵀX. Differs from exact_hessian as soon as the
    records have different probabilities: a sum of Kronecker products is
    not the Kronecker product of the sums."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    return np.kron(P.T @ P - np.diag(P.sum(axis=0)), X.T @ X)


def dominance_check(X, W, epsilon=consts.EPSILON):
    """Smallest eigenvalue of diag(B̄) + H at W, and whether it is >= -1e-8."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    H = exact_hessian(X, softmax_probs(X, W))
    bound = np.diag(build_bbar(X, W.shape[0], epsilon).ravel())
    smallest = float(eigvalsh(bound + H)[0])
    return smallest, smallest >= -consts.DOMINANCE_SLACK


def predict(X, W):
    # ties go to the lowest class
    return np.array(misc.argmax_rows(_logits(X, W)), dtype=np.int64)


def accuracy(ds, W):
    return float(np.mean(predict(ds.X, W) == ds.y))


def cross_validate(ds, optimizer, kappa, folds=5, seed=consts.DEFAULT_SEED,
                   epsilon=consts.EPSILON):
    """Accuracy on each held-out fold of a stratified k-fold split."""
    train = OPTIMIZERS[optimizer]
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    scores = []
    for fold, (train_idx, test_idx) in enumerate(splitter.split(ds.X, ds.y)):
        W, _trace = train(ds.subset(train_idx), kappa, epsilon=epsilon)
        scores.append(accuracy(ds.subset(test_idx), W))
        logger.info("fold %d/%d: accuracy %.4f", fold + 1, folds, scores[-1])
    return scores


def normalize_features(features):
    """Min-max scale every column into [0, 1]; constant columns become 0."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    low = features.min(axis=0)
    span = features.max(axis=0) - low
    span[span == 0] = 1.0
    return (features - low) / span


def make_dataset(features, raw_labels, c=None, normalize=True):
    """Prepend the bias column to the (normalized) features and remap the
    labels to 0..c-1 in the sorted order of their distinct values."""
    distinct, y = np.unique(np.asarray(raw_labels), return_inverse=True)
    c = len(distinct) if c is None else c
    if len(distinct) > c:
        raise LabelOutOfRange("%d distinct labels for %d classes" % (len(distinct), c))
    if normalize:
        features = normalize_features(features)
    X = np.hstack([np.ones((features.shape[0], 1)), features])
    return LrDataset(X, y, c)


def load_libsvm(path, c=None, d=None, normalize=True):
    """Read "label idx:val ..." lines, indices counted from 1."""
    if not os.path.exists(path):
        raise MissingFile("No such file: %s" % path)
    try:
        features, raw_labels = load_svmlight_file(path, n_features=d,
                                                  zero_based=False)
    except ValueError as e:
        raise ParseError("%s: %s" % (path, e))
    return make_dataset(features.toarray(), raw_labels, c, normalize)
