# -*- coding: utf-8 -*-
"""Exceptions raised by starflow.

Every exception derives from :exc:`StarFlowError` and from the builtin
exception a caller would naturally expect (:exc:`ValueError` for bad input,
:exc:`IOError` for bad files, :exc:`ArithmeticError` for numerical failure).

"""


class StarFlowError(Exception):
    """Base class for all starflow errors."""


class ContractError(StarFlowError, ValueError):
    """Raised when a precondition of an operation is violated."""


class ConfigError(ContractError):
    """Raised when a configuration value or key is invalid.

    :param str message: A description of the problem.
    :param str key: The offending configuration key (dotted path), if known.

    """

    def __init__(self, message, key=None):
        self.key = key
        super(ConfigError, self).__init__(message)


class ShapeError(StarFlowError, ValueError):
    """Raised when tensor or array shapes do not agree.

    :param str op: The name of the operation that rejected its inputs.
    :param tuple axes: The names of the axes that disagree.
    :param expected: The expected size(s) or shape.
    :param actual: The size(s) or shape actually received.

    """

    def __init__(self, op, axes, expected, actual):
        self.op = op
        self.axes = tuple(axes)
        self.expected = expected
        self.actual = actual
        message = "%s: mismatch on axis %s (expected %s, got %s)" % (
            op, '/'.join(self.axes), expected, actual)
        super(ShapeError, self).__init__(message)


class OutOfHistoryError(ContractError):
    """Raised when a frame index reaches before the start of a series.

    :param int t: The requested target interval.
    :param int required: The smallest target interval that has enough
        history.

    """

    def __init__(self, t, required, detail=None):
        self.t = t
        self.required = required
        message = ("not enough history for interval %d: the first valid "
                   "interval is %d" % (t, required))
        if detail:
            message += " (%s)" % detail
        super(OutOfHistoryError, self).__init__(message)


class ParseError(StarFlowError, ValueError):
    """Raised in strict mode when a trajectory line cannot be parsed."""

    def __init__(self, line_number, line, reason):
        self.line_number = line_number
        self.line = line
        super(ParseError, self).__init__(
            "line %d: %s: %r" % (line_number, reason, line))


class FormatError(StarFlowError, IOError):
    """Base class for errors reading binary series and checkpoint files."""


class BadMagicError(FormatError):
    """Raised when a file does not start with the expected magic bytes."""

    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super(BadMagicError, self).__init__(
            "bad magic: expected %r, got %r" % (expected, actual))


class VersionMismatchError(FormatError):
    """Raised when a file's format version is not supported."""

    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super(VersionMismatchError, self).__init__(
            "unsupported format version %d (expected %d)" % (actual, expected))


class TruncationError(FormatError):
    """Raised when a file ends before its declared contents."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super(TruncationError, self).__init__(
            "truncated %s: expected %d, got %d" % (what, expected, actual))


class NameCollisionError(FormatError):
    """Raised when a checkpoint contains the same parameter name twice."""

    def __init__(self, name):
        self.name = name
        super(NameCollisionError, self).__init__(
            "duplicate parameter record: '%s'" % name)


class CheckpointShapeError(FormatError, ShapeError):
    """Raised when a checkpoint record disagrees with its stored config."""

    def __init__(self, name, expected, actual):
        self.name = name
        ShapeError.__init__(self, 'load_checkpoint', (name,), expected,
                            actual)


class DivergenceError(StarFlowError, ArithmeticError):
    """Raised when the training loss becomes NaN or infinite."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super(DivergenceError, self).__init__(
            "training diverged in epoch %d (loss=%r)" % (epoch, loss))
