"""
The slot-vector machine: the five primitives every other module may use on
"encrypted" data, and the ledger that counts what they cost.

A SlotVector stands in for a ciphertext. Encryption and decryption degenerate
to encode/decode, and rescaling is ignored, so slots are plain doubles.

Example usage:
from volley import simd
ledger = simd.OpLedger()
v = simd.encode([1, 2, 3, 4], 4, ledger)
w = simd.add(simd.rot(v, 1), v)
simd.decode(w, 4)            # [3.0, 5.0, 7.0, 5.0]
simd.ledger_report(ledger)   # <LedgerReport rotations=1, ... adds=1>
"""

import logging
import threading

import numpy as np

from volley import consts
from volley.errors import ShapeMismatch, SlotOverflow


logger = logging.getLogger(__name__)


class LedgerReport:
    """Snapshot of the counters of an OpLedger"""

    __slots__ = ['rotations', 'cipher_mults', 'const_mults', 'adds']

    def __init__(self, rotations=0, cipher_mults=0, const_mults=0, adds=0):
        self.rotations = rotations
        self.cipher_mults = cipher_mults
        self.const_mults = const_mults
        self.adds = adds

    def __repr__(self):
        return ("<LedgerReport rotations=%d, cipher_mults=%d, const_mults=%d,"
                " adds=%d>" % tuple(self))

    def __iter__(self):
        for name in self.__slots__:
            yield getattr(self, name)

    def __eq__(self, other):
        return tuple(self) == tuple(other)

    def __ne__(self, other):
        return not self == other

    def __sub__(self, other):
        return LedgerReport(*(a - b for a, b in zip(self, other)))

    def as_dict(self):
        return dict(zip(self.__slots__, self))


class OpLedger:
    """Counters of the primitive operations charged to a computation.

    Increments are serialized by a lock, so threads sharing a ledger always
    end with the same totals whatever the scheduling.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(LedgerReport.__slots__, 0)

    def charge(self, counter, amount=1):
        with self._lock:
            self._counts[counter] += amount

    def snapshot(self):
        with self._lock:
            return LedgerReport(**self._counts)


class SlotVector:
    """A fixed-width vector of real slots, immutable once built."""

    __slots__ = ['_slots', 'ledger']

    def __init__(self, slots, ledger):
        slots = np.array(slots, dtype=np.float64)
        slots.flags.writeable = False
        self._slots = slots
        self.ledger = ledger

    @property
    def slot_count(self):
        return self._slots.shape[0]

    def __repr__(self):
        return "<SlotVector slot_count=%d>" % self.slot_count


def _check_pair(a, b):
    if a.slot_count != b.slot_count:
        raise ShapeMismatch("slot counts differ: %d != %d" %
                            (a.slot_count, b.slot_count))


def encode(values, slot_count=consts.DEFAULT_SLOTS, ledger=None):
    """Embed values in the first slots of a new vector, zeros elsewhere."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if slot_count <= 0:
        raise ShapeMismatch("slot_count must be positive, got %d" % slot_count)
    if values.shape[0] > slot_count:
        raise SlotOverflow("%d values do not fit in %d slots" %
                           (values.shape[0], slot_count))
    slots = np.zeros(slot_count, dtype=np.float64)
    slots[:values.shape[0]] = values
    return SlotVector(slots, ledger if ledger is not None else OpLedger())


def decode(v, n):
    """Return the first n slots as a numpy array."""
    if n < 0 or n > v.slot_count:
        raise SlotOverflow("cannot decode %d slots out of %d" %
                           (n, v.slot_count))
    return np.array(v._slots[:n])


def rot(v, l):
    """Rotate left by l positions; a negative l rotates right.

    Rotating by a multiple of slot_count is free.
    """
    l = l % v.slot_count
    if l == 0:
        return v
    v.ledger.charge('rotations')
    return SlotVector(np.roll(v._slots, -l), v.ledger)


def add(a, b):
    _check_pair(a, b)
    a.ledger.charge('adds')
    return SlotVector(a._slots + b._slots, a.ledger)


def mul(a, b):
    """Ciphertext by ciphertext multiplication"""
    _check_pair(a, b)
    a.ledger.charge('cipher_mults')
    return SlotVector(a._slots * b._slots, a.ledger)


def cmul(v, constants):
    """Multiplication by public constants (one per slot)"""
    constants = np.asarray(constants, dtype=np.float64)
    if constants.shape != (v.slot_count,):
        raise ShapeMismatch("expected %d constants, got shape %s" %
                            (v.slot_count, constants.shape))
    v.ledger.charge('const_mults')
    return SlotVector(v._slots * constants, v.ledger)


def ledger_report(ledger):
    return ledger.snapshot()
