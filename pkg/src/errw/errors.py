"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class ErrwError(Exception):
    """Base class for all errors raised by errw."""


# graphs
class SelfLoop(ErrwError, ValueError):
    pass


class NotAdjacent(ErrwError, ValueError):
    pass


class UnknownVertex(ErrwError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class UnsupportedProvider(ErrwError, TypeError):
    pass


class DegreeBoundViolation(ErrwError, RuntimeError):
    pass


# weights
class DomainError(ErrwError, ValueError):
    pass


class NonPositiveWeight(ErrwError, ValueError):
    pass


class TailUnbounded(ErrwError, ArithmeticError):
    pass


class DegenerateBound(ErrwError, ArithmeticError):
    pass


# walk
class BadInitialWeight(ErrwError, ValueError):
    pass


class IsolatedVertex(ErrwError, RuntimeError):
    pass


# diagnostics
class NotACycle(ErrwError, TypeError):
    pass


class WindowTooShort(ErrwError, ValueError):
    pass


# harness
class ConfigError(ErrwError, ValueError):
    pass


class UnknownPreset(ConfigError):
    pass


class WrongGraph(ErrwError, ValueError):
    pass
