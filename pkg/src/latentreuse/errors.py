"""Exception types raised across the package."""


class LatentReuseError(Exception):
    """Base class for all package errors."""


class RankDeficient(LatentReuseError, ValueError):
    pass


class NotOrthonormal(LatentReuseError, ValueError):
    pass


class DimensionMismatch(LatentReuseError, ValueError):
    pass


class InfeasibleAngles(LatentReuseError, ValueError):
    pass


class NegativeTime(LatentReuseError, ValueError):
    pass


class NonFiniteIntegrand(LatentReuseError, ArithmeticError):
    def __init__(self, node, value):
        super().__init__(f"integrand is {value!r} at node t={node!r}")
        self.node = node
        self.value = value


class SingularCovariance(LatentReuseError, ArithmeticError):
    pass


class NotGaussian(LatentReuseError, TypeError):
    pass


class RankConditionViolated(LatentReuseError, ValueError):
    def __init__(self, branch, rank, required):
        super().__init__(
            f"branch {branch!r} needs rank(B) = {required}, got {rank}"
        )
        self.branch = branch
        self.rank = rank
        self.required = required


class IllConditioned(LatentReuseError, ArithmeticError):
    pass


class KOutOfRange(LatentReuseError, ValueError):
    pass


class Diverged(LatentReuseError, ArithmeticError):
    pass


class ConfigInvalid(LatentReuseError, ValueError):
    """``path`` is the schema path (``/``-joined) of the violated rule."""

    def __init__(self, message, path=""):
        super().__init__(message)
        self.path = path if isinstance(path, str) else "/".join(str(p) for p in path)
