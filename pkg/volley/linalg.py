"""
Matrix multiplication on packed matrices, Volley Revolver style.

The left operand A (n x f) is packed row by row. The right operand B (f x m)
is packed transposed and cyclically extended to n rows, so row r of the pack
holds column (r mod m) of B. Iteration k multiplies A by the pack shifted k
rows (RowShifter), sums every row (SumColVec), and keeps the scalar of row i
as C[i][(i+k) mod m]. After m iterations every entry of C = A x B is known.

The result is row-major n x m, obtained from the stride-f working layout by
a row relayout at the end.

Example usage:
from volley import linalg, packing, simd
ledger = simd.OpLedger()
a = packing.pack_matrix(A, ledger=ledger)
t = linalg.pack_transposed(B, a.rows, ledger=ledger)
c = linalg.he_matmul(a, t).decode()
"""

import logging

import numpy as np

from volley import consts, misc, packing, simd
from volley.errors import ShapeMismatch, SlotOverflow


logger = logging.getLogger(__name__)


class TransposedPack:
    """Bᵀ cyclically extended to n rows, packed row by row.

    m is the column count of B, padded_m the divisor of n it was padded to
    with zero columns. Row r of pm holds row (r mod padded_m) of Bᵀ.
    """

    __slots__ = ['pm', 'm', 'f', 'n', 'padded_m']

    def __init__(self, pm, m, f, n, padded_m):
        self.pm = pm
        self.m = m
        self.f = f
        self.n = n
        self.padded_m = padded_m

    def __repr__(self):
        return "<TransposedPack n=%d f=%d m=%d (padded %d)>" % (
            self.n, self.f, self.m, self.padded_m)

    def with_pm(self, pm):
        return TransposedPack(pm, self.m, self.f, self.n, self.padded_m)


def padded_columns(n, m):
    """Column count B is padded to so that it divides n."""
    padded = misc.smallest_divisor_at_least(n, m)
    if padded is None:
        raise ShapeMismatch("B has %d columns, more than the %d rows of A; "
                            "split B into column blocks" % (m, n))
    return padded


def extended_transpose(B, n, shift=0):
    """Plaintext n x f matrix whose row r is row (r + shift) mod padded_m
    of Bᵀ padded with zero rows."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    f, m = B.shape
    padded_m = padded_columns(n, m)
    bt = np.zeros((padded_m, f))
    bt[:m, :] = B.T
    return bt[(np.arange(n) + shift) % padded_m, :]


def pack_transposed(B, n, slot_count=consts.DEFAULT_SLOTS, ledger=None):
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    f, m = B.shape
    padded_m = padded_columns(n, m)
    if n * f > slot_count:
        raise SlotOverflow("transposed pack of %d rows x %d does not fit in "
                           "%d slots" % (n, f, slot_count))
    pm = packing.pack_matrix(extended_transpose(B, n), slot_count, ledger)
    return TransposedPack(pm, m, f, n, padded_m)


def row_shifter(T):
    """Shift the rows of the pack up by one, row 1 wrapping to row n.

    The rows wrap inside the n-row block (two rotations, two masks) so the
    result does not depend on whether the pack fills the slot vector.
    """
    if T.n == 1:
        return T
    pm = T.pm
    upper = np.zeros((T.n, T.f))
    upper[:-1, :] = 1.0
    last = 1.0 - upper
    moved = simd.cmul(simd.rot(pm.vec, T.f), pm.constants(upper))
    wrapped = simd.cmul(simd.rot(pm.vec, -(T.n - 1) * T.f), pm.constants(last))
    return T.with_pm(pm.with_vec(simd.add(moved, wrapped)))


def _check_operands(A, n, f, m):
    if A.rows != n or A.cols != f:
        raise ShapeMismatch("A is %dx%d, the pack expects %dx%d" %
                            (A.rows, A.cols, n, f))
    if A.origin != 0:
        raise ShapeMismatch("A must be packed at slot 0, not %d" % A.origin)
    if n * m > A.slot_count:
        raise SlotOverflow("%dx%d product does not fit in %d slots" %
                           (n, m, A.slot_count))


def _selector(n, f, m, padded_m, k, group):
    # Row i of iteration k holds C[i][(i+k) mod padded_m]; column j lands
    # in group j // f at offset j % f
    sel = np.zeros((n, f))
    for i in range(n):
        j = (i + k) % padded_m
        if j < m and j // f == group:
            sel[i, j - group * f] = 1.0
    return sel


def _relayout(vec, n, f, m, group):
    # Move row i of a stride-f accumulator (columns group*f ...) to its
    # place in the n x m result
    by_shift = {}
    for i in range(n):
        shift = i * f - (i * m + group * f)
        by_shift.setdefault(shift, []).append(i)
    if list(by_shift) == [0]:
        return vec
    width = min(f, m - group * f)
    moved = None
    for shift, rows in sorted(by_shift.items()):
        sel = np.zeros((n, f))
        sel[rows, :width] = 1.0
        part = simd.rot(simd.cmul(vec, packing.slot_constants(sel, vec.slot_count)),
                        shift)
        moved = part if moved is None else simd.add(moved, part)
    return moved


def _diagonal_product(A, products, m, padded_m):
    n, f = A.rows, A.cols
    groups = -(-m // f)
    acc = [None] * groups
    for k, product in enumerate(products):
        sums = packing.sum_col_vec(packing.PackedMatrix(product, n, f))
        for group in range(groups):
            sel = _selector(n, f, m, padded_m, k, group)
            if not sel.any():
                continue
            picked = simd.cmul(sums.vec, sums.constants(sel))
            acc[group] = picked if acc[group] is None else simd.add(acc[group], picked)

    result = None
    for group, vec in enumerate(acc):
        if vec is None:
            continue
        moved = _relayout(vec, n, f, m, group)
        result = moved if result is None else simd.add(result, moved)
    return packing.PackedMatrix(result, n, m)


def he_matmul(A, T):
    """Product of the packed A (n x f) by the matrix packed in T.

    Uses exactly padded_m ciphertext multiplications (m when m divides n).
    """
    _check_operands(A, T.n, T.f, T.m)
    if T.pm.slot_count != A.slot_count:
        raise ShapeMismatch("slot counts differ: %d != %d" %
                            (A.slot_count, T.pm.slot_count))
    shifted = [T]
    for _ in range(1, T.padded_m):
        shifted.append(row_shifter(shifted[-1]))
    products = (simd.mul(A.vec, s.pm.vec) for s in shifted)
    return _diagonal_product(A, products, T.m, T.padded_m)


def he_matmul_public(A, B):
    """Same as he_matmul when B is public: the shifted packs are built as
    constants and multiplied with cmul, so no rotation is spent on B."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    f, m = B.shape
    n = A.rows
    padded_m = padded_columns(n, m)
    _check_operands(A, n, f, m)
    products = (simd.cmul(A.vec, A.constants(extended_transpose(B, n, k)))
                for k in range(padded_m))
    return _diagonal_product(A, products, m, padded_m)


def column_blocks(n, m):
    """(start, stop) ranges splitting m columns into blocks of at most n."""
    return [(start, min(start + n, m)) for start in range(0, m, n)]


def he_matmul_blocks(A, B, public=False):
    """Product of the packed A (n x f) by a plaintext f x m matrix B of any
    width, one he_matmul per block of at most n columns of B.

    Returns the list of ((start, stop), PackedMatrix) blocks; hstacking the
    decoded blocks gives A x B.
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if B.shape[0] != A.cols:
        raise ShapeMismatch("cannot multiply %dx%d by %dx%d" %
                            ((A.rows, A.cols) + B.shape))
    blocks = []
    for start, stop in column_blocks(A.rows, B.shape[1]):
        part = B[:, start:stop]
        if public:
            product = he_matmul_public(A, part)
        else:
            product = he_matmul(A, pack_transposed(part, A.rows, A.slot_count,
                                                   A.ledger))
        blocks.append(((start, stop), product))
    if len(blocks) > 1:
        logger.debug("%dx%d by %dx%d split into %d column blocks",
                     A.rows, A.cols, B.shape[0], B.shape[1], len(blocks))
    return blocks


def he_matmul_cipher_mults(n, m):
    """Ciphertext multiplications charged by he_matmul_blocks for m columns."""
    return sum(padded_columns(n, stop - start)
               for start, stop in column_blocks(n, m))


def he_matmul_rotations(n, f, m, public=False):
    """Closed form of the rotations charged by he_matmul(n x f, f x m).

    (padded_m - 1) row shifts of 2 rotations each (none for n = 1 or a
    public B), padded_m SumColVec, and one rotation per row of the final
    relayout whose source and target slots differ. A B wider than n is
    charged block by block.
    """
    if m > n:
        return sum(he_matmul_rotations(n, f, stop - start, public)
                   for start, stop in column_blocks(n, m))
    padded_m = padded_columns(n, m)
    shifts = 0 if (public or n == 1) else 2 * (padded_m - 1)
    sums = padded_m * packing.sum_col_vec_rotations(f)
    relayout = 0
    if f != m:
        for group in range(-(-m // f)):
            relayout += sum(1 for i in range(n) if i * (f - m) != group * f)
    return shifts + sums + relayout


def plain_matmul(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[0]:
        raise ShapeMismatch("cannot multiply %dx%d by %dx%d" %
                            (A.shape + B.shape))
    return A @ B
