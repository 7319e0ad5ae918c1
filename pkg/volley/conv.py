"""
Stride-1 valid convolution over a batch of images packed in one slot vector.

The batch is packed as a (batch*h) x w matrix, image after image. For every
kernel offset (a, b) the images are multiplied by the kernel tiled with that
offset, SumForConv adds each kh x kw window into its top-left pixel, and a
selector keeps the windows whose top-left pixel lines up with the tile
(row = -a mod kh, column = -b mod kw). The kh*kw partial maps are disjoint
and together cover the whole (h-kh+1) x (w-kw+1) output.

Outputs keep the input layout (garbage squeezed to 0), so
reconstruct_representation repacks them into the dense rows the next layer
reads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from volley import consts, packing, simd
from volley.errors import KernelTooLarge, ShapeMismatch, SlotOverflow, StrideUnsupported


logger = logging.getLogger(__name__)


class ConvSpec:
    """Shapes and public weights of one convolution layer."""

    __slots__ = ['h', 'w', 'kh', 'kw', 'batch', 'kernels', 'biases', 'stride']

    def __init__(self, h, w, kernels, biases=None, batch=1, stride=1):
        kernels = [np.atleast_2d(np.asarray(k, dtype=np.float64)) for k in kernels]
        if not kernels:
            raise ShapeMismatch("a convolution needs at least one kernel")
        kh, kw = kernels[0].shape
        if any(k.shape != (kh, kw) for k in kernels):
            raise ShapeMismatch("kernels of different shapes: %s" %
                                sorted(set(k.shape for k in kernels)))
        if stride != 1:
            # Every extra stride step costs about h*w rotations to squeeze
            # the skipped windows out
            raise StrideUnsupported("only stride 1 is supported, got %r" % (stride,))
        if kh > h or kw > w:
            raise KernelTooLarge("%dx%d kernel on %dx%d image" % (kh, kw, h, w))
        if biases is None:
            biases = [0.0] * len(kernels)
        biases = [float(b) for b in biases]
        if len(biases) != len(kernels):
            raise ShapeMismatch("%d biases for %d kernels" %
                                (len(biases), len(kernels)))
        if batch <= 0:
            raise ShapeMismatch("batch must be positive, got %d" % batch)
        self.h = h
        self.w = w
        self.kh = kh
        self.kw = kw
        self.batch = batch
        self.kernels = kernels
        self.biases = biases
        self.stride = stride

    def __repr__(self):
        return "<ConvSpec %dx%d image, %d kernels %dx%d, batch %d>" % (
            self.h, self.w, self.kernel_count, self.kh, self.kw, self.batch)

    @property
    def kernel_count(self):
        return len(self.kernels)

    @property
    def out_h(self):
        return self.h - self.kh + 1

    @property
    def out_w(self):
        return self.w - self.kw + 1

    @property
    def image_slots(self):
        return self.h * self.w

    def with_batch(self, batch):
        return ConvSpec(self.h, self.w, self.kernels, self.biases, batch,
                        self.stride)


class FilterConstants:
    """The kh*kw tiled copies of one kernel, keyed by offset (a, b)."""

    __slots__ = ['kernel_index', 'offsets']

    def __init__(self, kernel_index, offsets):
        self.kernel_index = kernel_index
        self.offsets = offsets

    def __getitem__(self, offset):
        return self.offsets[offset]

    def __iter__(self):
        return iter(sorted(self.offsets))


def build_filter_constants(spec, kernel_index, slot_count=consts.DEFAULT_SLOTS):
    if not 0 <= kernel_index < spec.kernel_count:
        raise ShapeMismatch("kernel %d out of %d" %
                            (kernel_index, spec.kernel_count))
    if spec.batch * spec.image_slots > slot_count:
        raise SlotOverflow("%d images of %dx%d do not fit in %d slots" %
                           (spec.batch, spec.h, spec.w, slot_count))
    kernel = spec.kernels[kernel_index]
    rows = np.arange(spec.h)
    cols = np.arange(spec.w)
    offsets = {}
    for a in range(spec.kh):
        for b in range(spec.kw):
            tile = kernel[np.ix_((rows + a) % spec.kh, (cols + b) % spec.kw)]
            offsets[(a, b)] = packing.slot_constants(
                np.tile(tile.ravel(), spec.batch), slot_count)
    return FilterConstants(kernel_index, offsets)


def offset_selector(spec, a, b, slot_count=consts.DEFAULT_SLOTS):
    """1 on the valid output positions (r, c) of every image with
    r = -a mod kh and c = -b mod kw, 0 elsewhere."""
    block = np.zeros((spec.h, spec.w))
    rows = np.arange(spec.out_h)
    cols = np.arange(spec.out_w)
    keep_rows = rows[rows % spec.kh == (-a) % spec.kh]
    keep_cols = cols[cols % spec.kw == (-b) % spec.kw]
    block[np.ix_(keep_rows, keep_cols)] = 1.0
    return packing.slot_constants(np.tile(block.ravel(), spec.batch), slot_count)


def valid_mask(spec, slot_count=consts.DEFAULT_SLOTS):
    return packing.make_region_mask(spec.h, spec.w, spec.out_h, spec.out_w,
                                    spec.batch, spec.image_slots, slot_count)


def _check_input(ct, spec):
    if ct.rows != spec.batch * spec.h or ct.cols != spec.w or ct.origin != 0:
        raise ShapeMismatch("expected %d images of %dx%d at slot 0, got %r" %
                            (spec.batch, spec.h, spec.w, ct))


def _convolve_kernel(ct, spec, kernel_index):
    filters = build_filter_constants(spec, kernel_index, ct.slot_count)
    total = None
    for a, b in filters:
        weighted = ct.with_vec(simd.cmul(ct.vec, filters[(a, b)]))
        windows = packing.sum_for_conv(weighted, spec.kh, spec.kw,
                                       image_rows=spec.h)
        partial = simd.cmul(windows.vec, offset_selector(spec, a, b, ct.slot_count))
        total = partial if total is None else simd.add(total, partial)
    bias = spec.biases[kernel_index] * valid_mask(spec, ct.slot_count)
    total = simd.add(total, simd.encode(bias, ct.slot_count, ct.ledger))
    return ct.with_vec(total)


def he_conv2d(ct, spec, workers=consts.DEFAULT_WORKERS):
    """One output map per kernel, in the layout of ct.

    Kernel maps run on `workers` threads; results come back in kernel order.
    """
    _check_input(ct, spec)
    logger.debug("convolving %r", spec)
    if workers > 1 and spec.kernel_count > 1:
        with ThreadPoolExecutor(max_workers=workers,
                                thread_name_prefix="conv") as pool:
            return list(pool.map(lambda k: _convolve_kernel(ct, spec, k),
                                 range(spec.kernel_count)))
    return [_convolve_kernel(ct, spec, k) for k in range(spec.kernel_count)]


def _row_shifts(spec):
    # Stage 1: valid row r of every image moves next to row r-1
    return [r * (spec.w - spec.out_w) for r in range(spec.out_h)]


def _block_shifts(spec, map_index, row_width):
    # Stage 2: the compact block of image b goes to row b, column offset
    # map_index*out_h*out_w
    map_size = spec.out_h * spec.out_w
    return [b * spec.image_slots - (b * row_width + map_index * map_size)
            for b in range(spec.batch)]


def _move_groups(vec, shifts, mask_for):
    # Rotate each group of parts sharing a shift; a single group needs no mask
    groups = {}
    for part, shift in enumerate(shifts):
        groups.setdefault(shift, []).append(part)
    if len(groups) == 1:
        return simd.rot(vec, shifts[0])
    moved = None
    for shift, parts in sorted(groups.items()):
        piece = simd.rot(simd.cmul(vec, mask_for(parts)), shift)
        moved = piece if moved is None else simd.add(moved, piece)
    return moved


def reconstruct_representation(cts, spec, row_width=None):
    """Repack the output maps into a batch x row_width matrix.

    Row b holds map 0 of image b flattened row by row, then map 1, and so
    on; row_width defaults to len(cts)*out_h*out_w (no gaps), a wider row
    leaves zero columns at the end.
    """
    map_size = spec.out_h * spec.out_w
    width = len(cts) * map_size
    row_width = width if row_width is None else row_width
    if row_width < width:
        raise ShapeMismatch("%d maps of %d values do not fit a row of %d" %
                            (len(cts), map_size, row_width))
    if not cts:
        raise ShapeMismatch("nothing to reconstruct")
    slot_count = cts[0].slot_count
    if spec.batch * row_width > slot_count:
        raise SlotOverflow("%dx%d representation does not fit in %d slots" %
                           (spec.batch, row_width, slot_count))

    def row_mask(rows):
        block = np.zeros((spec.h, spec.w))
        block[rows, :spec.out_w] = 1.0
        return packing.slot_constants(np.tile(block.ravel(), spec.batch),
                                      slot_count)

    def block_mask(images):
        flat = np.zeros(spec.batch * spec.image_slots)
        for b in images:
            start = b * spec.image_slots
            flat[start:start + map_size] = 1.0
        return packing.slot_constants(flat, slot_count)

    result = None
    for k, ct in enumerate(cts):
        _check_input(ct, spec)
        compact = _move_groups(ct.vec, _row_shifts(spec), row_mask)
        placed = _move_groups(compact, _block_shifts(spec, k, row_width),
                              block_mask)
        result = placed if result is None else simd.add(result, placed)
    return packing.PackedMatrix(result, spec.batch, row_width)


def conv_rotations(spec):
    """Rotations charged by he_conv2d."""
    return spec.kernel_count * spec.kh * spec.kw * (spec.kh + spec.kw - 2)


def conv_const_mults(spec):
    """Filter, SumForConv mask and selector per offset."""
    return spec.kernel_count * spec.kh * spec.kw * 3


def reconstruct_rotations(spec, map_count=None, row_width=None):
    """Rotations charged by reconstruct_representation."""
    map_count = spec.kernel_count if map_count is None else map_count
    map_size = spec.out_h * spec.out_w
    row_width = map_count * map_size if row_width is None else row_width

    def moves(shifts):
        distinct = set(shifts)
        if len(distinct) == 1:
            return 0 if shifts[0] == 0 else 1
        return len(distinct - {0})

    total = 0
    for k in range(map_count):
        total += moves(_row_shifts(spec))
        total += moves(_block_shifts(spec, k, row_width))
    return total


def plain_conv2d(images, spec):
    """Valid cross-correlation of a (batch, h, w) stack with every kernel,
    bias added: a (batch, kernel_count, out_h, out_w) array."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[np.newaxis]
    if images.ndim != 3 or images.shape[1:] != (spec.h, spec.w):
        raise ShapeMismatch("expected images of %dx%d, got shape %s" %
                            (spec.h, spec.w, images.shape))
    windows = sliding_window_view(images, (spec.kh, spec.kw), axis=(1, 2))
    kernels = np.stack(spec.kernels)
    out = np.einsum('brcpq,kpq->bkrc', windows, kernels)
    return out + np.asarray(spec.biases)[np.newaxis, :, np.newaxis, np.newaxis]
