"""
This module implements the row-by-row (database) encoding of a matrix into a
slot vector, and the shifting and summation procedures built on top of it.

Matrix element [i][j] (1-based, as in the documentation of each procedure)
lives in slot origin + (i-1)*cols + (j-1). Everything here goes through the
primitives of volley.simd; the only numpy arrays built locally are public
constants (masks).

Example usage:
from volley import packing
pm = packing.pack_matrix([[1, 2], [3, 4]], slot_count=8)
packing.sum_col_vec(pm).decode()    # [[3, 3], [7, 7]]
"""

import logging

import numpy as np

from volley import consts, misc, simd
from volley.errors import KernelTooLarge, ShapeMismatch, SlotOverflow


logger = logging.getLogger(__name__)


class PackedMatrix:
    """A slot vector plus the (rows, cols, origin) layout of a matrix."""

    __slots__ = ['vec', 'rows', 'cols', 'origin']

    def __init__(self, vec, rows, cols, origin=0):
        if rows <= 0 or cols <= 0:
            raise ShapeMismatch("matrix dimensions must be positive, got "
                                "%dx%d" % (rows, cols))
        if origin < 0 or origin + rows * cols > vec.slot_count:
            raise SlotOverflow("%dx%d matrix at slot %d does not fit in %d "
                               "slots" % (rows, cols, origin, vec.slot_count))
        self.vec = vec
        self.rows = rows
        self.cols = cols
        self.origin = origin

    def __repr__(self):
        return "<PackedMatrix %dx%d origin=%d slot_count=%d>" % (
            self.rows, self.cols, self.origin, self.slot_count)

    @property
    def slot_count(self):
        return self.vec.slot_count

    @property
    def ledger(self):
        return self.vec.ledger

    @property
    def size(self):
        return self.rows * self.cols

    def with_vec(self, vec):
        return PackedMatrix(vec, self.rows, self.cols, self.origin)

    def decode(self):
        """Decrypt and return the rows x cols matrix."""
        flat = simd.decode(self.vec, self.origin + self.size)
        return flat[self.origin:].reshape(self.rows, self.cols)

    def constants(self, values):
        """Lay out a rows x cols plaintext matrix as slot constants."""
        return slot_constants(values, self.slot_count, self.origin)


def slot_constants(values, slot_count, origin=0):
    values = np.asarray(values, dtype=np.float64).ravel()
    if origin + values.shape[0] > slot_count:
        raise SlotOverflow("%d constants at slot %d do not fit in %d slots"
                           % (values.shape[0], origin, slot_count))
    constants = np.zeros(slot_count, dtype=np.float64)
    constants[origin:origin + values.shape[0]] = values
    return constants


def pack_matrix(Z, slot_count=consts.DEFAULT_SLOTS, ledger=None, origin=0):
    """Encode the matrix Z row by row, starting at slot `origin`."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.ndim != 2:
        raise ShapeMismatch("expected a matrix, got shape %s" % (Z.shape,))
    rows, cols = Z.shape
    if origin + rows * cols > slot_count:
        raise SlotOverflow("%dx%d matrix does not fit in %d slots" %
                           (rows, cols, slot_count))
    vec = simd.encode(slot_constants(Z, origin + rows * cols, origin),
                      slot_count, ledger)
    return PackedMatrix(vec, rows, cols, origin)


def _cyclic_rot(P, step):
    # Rotate the rows x cols block left by `step` slots, wrapping inside the
    # block: the literal rotation when the matrix fills the vector, otherwise
    # two rotations and two masks
    if P.size == step:
        return P
    if P.origin == 0 and P.size == P.slot_count:
        return P.with_vec(simd.rot(P.vec, step))
    keep = np.zeros(P.size)
    keep[:P.size - step] = 1.0
    moved = simd.cmul(simd.rot(P.vec, step), P.constants(keep))
    wrapped = simd.cmul(simd.rot(P.vec, step - P.size), P.constants(1.0 - keep))
    return P.with_vec(simd.add(moved, wrapped))


def incomplete_column_shift(P):
    """Move every element one column left; column 1 wraps to the previous
    row's last column, z[1][1] to [n][f].

    One rotation when the matrix fills the slot vector, two rotations and two
    masks otherwise.
    """
    return _cyclic_rot(P, 1)


def row_shift(P):
    """Row i takes the content of row i+1, row n that of row 1.

    Costs as incomplete_column_shift.
    """
    return _cyclic_rot(P, P.cols)


def _broadcast(v, stride, count):
    # Copy the values at offset 0 of each group to offsets stride .. (count-1)*stride
    if misc.is_power_of_two(count):
        step = 1
        while step < count:
            v = simd.add(v, simd.rot(v, -step * stride))
            step *= 2
        return v
    spread = v
    for t in range(1, count):
        spread = simd.add(spread, simd.rot(v, -t * stride))
    return spread


def _accumulate(v, stride, count):
    # Offset 0 of each group receives the sum of the `count` values
    # at offsets 0, stride, ..., (count-1)*stride
    if misc.is_power_of_two(count):
        step = 1
        while step < count:
            v = simd.add(v, simd.rot(v, step * stride))
            step *= 2
        return v
    total = v
    for t in range(1, count):
        total = simd.add(total, simd.rot(v, t * stride))
    return total


def sum_row_vec(P):
    """Every row of the result is the vector of column sums of P.

    Rows are summed into row 1, which is masked and copied down again.
    Requires the slots after the matrix to be zero.
    """
    first_row = np.zeros((P.rows, P.cols))
    first_row[0, :] = 1.0
    total = _accumulate(P.vec, P.cols, P.rows)
    total = simd.cmul(total, P.constants(first_row))
    return P.with_vec(_broadcast(total, P.cols, P.rows))


def sum_col_vec(P):
    """Every entry of row i of the result is the sum of row i of P."""
    first_col = np.zeros((P.rows, P.cols))
    first_col[:, 0] = 1.0
    total = _accumulate(P.vec, 1, P.cols)
    total = simd.cmul(total, P.constants(first_col))
    return P.with_vec(_broadcast(total, 1, P.cols))


def sum_col_vec_rotations(cols):
    """Rotations charged by sum_col_vec on a matrix with `cols` columns.

    Powers of two accumulate and broadcast in log2 steps each; other widths
    take cols - 1 rotations for each.
    """
    if misc.is_power_of_two(cols):
        return 2 * (cols.bit_length() - 1)
    return 2 * (cols - 1)


def make_region_mask(rows, cols, valid_rows, valid_cols, batch=1,
                     image_stride=None, slot_count=None, origin=0):
    """Constants equal to 1 on the top-left valid_rows x valid_cols region of
    each of the `batch` rows x cols image blocks, 0 elsewhere.

    Image b starts at slot origin + b * image_stride.
    """
    if image_stride is None:
        image_stride = rows * cols
    if not (0 <= valid_rows <= rows and 0 <= valid_cols <= cols):
        raise ShapeMismatch("valid region %dx%d exceeds %dx%d" %
                            (valid_rows, valid_cols, rows, cols))
    if image_stride < rows * cols or batch <= 0:
        raise ShapeMismatch("image stride %d cannot hold %dx%d images" %
                            (image_stride, rows, cols))
    if slot_count is None:
        slot_count = origin + batch * image_stride
    if origin + (batch - 1) * image_stride + rows * cols > slot_count:
        raise SlotOverflow("%d image blocks of %d slots do not fit in %d "
                           "slots" % (batch, image_stride, slot_count))
    block = np.zeros(image_stride)
    block[:rows * cols].reshape(rows, cols)[:valid_rows, :valid_cols] = 1.0
    mask = np.tile(block, batch)[:slot_count - origin]
    return slot_constants(mask, slot_count, origin)


def sum_for_conv(P, kh, kw, image_rows=None):
    """Place the sum of each kh x kw window at the window's top-left entry.

    Entry [i][j] = sum of z[p][q] for i <= p < i+kh, j <= q < j+kw, for
    1 <= i <= rows-kh+1 and 1 <= j <= cols-kw+1; every other entry is 0.
    When image_rows is given, P is a vertical stack of images of image_rows
    rows each and the windows never cross two images.

    Costs (kw-1)+(kh-1) rotations and one constant multiplication.
    """
    image_rows = P.rows if image_rows is None else image_rows
    if P.rows % image_rows:
        raise ShapeMismatch("%d rows do not split into images of %d rows" %
                            (P.rows, image_rows))
    if kh > image_rows or kw > P.cols:
        raise KernelTooLarge("%dx%d kernel on %dx%d matrix" %
                             (kh, kw, image_rows, P.cols))
    if kh <= 0 or kw <= 0:
        raise KernelTooLarge("kernel dimensions must be positive")

    # Step 1: incomplete column shifts
    step1 = simd.rot(P.vec, 0)
    for q in range(1, kw):
        step1 = simd.add(step1, simd.rot(P.vec, q))
    # Step 2: row shifts
    step2 = step1
    for p in range(1, kh):
        step2 = simd.add(step2, simd.rot(step1, p * P.cols))
    # Step 3: filter out the garbage
    batch = P.rows // image_rows
    mask = make_region_mask(image_rows, P.cols, image_rows - kh + 1,
                            P.cols - kw + 1, batch, image_rows * P.cols,
                            P.slot_count, P.origin)
    return P.with_vec(simd.cmul(step2, mask))
