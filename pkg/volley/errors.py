"""
This module contains the exceptions raised by Volley. Any other module can
import it without risk of cyclic imports.

Each error also derives from the closest builtin exception, so callers that
only know about OverflowError or ValueError still catch them.

Example usage:
from volley.errors import ShapeMismatch
...
if a.slot_count != b.slot_count:
    raise ShapeMismatch("slot counts differ: %d != %d" % (...))
"""


class VolleyError(Exception):
    """Base class of every error raised on purpose by Volley"""


class SlotOverflow(VolleyError, OverflowError):
    """The data does not fit in the slots of a single vector"""


class ShapeMismatch(VolleyError, ValueError):
    pass


class KernelTooLarge(VolleyError, ValueError):
    pass


class StrideUnsupported(VolleyError, ValueError):
    pass


class BadMagic(VolleyError, ValueError):
    pass


class TruncatedFile(VolleyError, ValueError):
    pass


class MissingFile(VolleyError, FileNotFoundError):
    pass


class ParseError(VolleyError, ValueError):
    pass


class LabelOutOfRange(VolleyError, ValueError):
    pass


class UsageError(VolleyError):
    """Bad command line usage, reported with exit code 1"""
