"""
Exceptions raised by the numerical parts of :mod:`cssl`.

Invalid input is reported with :class:`django.core.exceptions.ValidationError`
throughout the package, the same exception the configuration forms raise.
The classes below cover the failures that are not about malformed input.
"""


class NotPositiveDefiniteError(ValueError):
    """
    A matrix that has to be positive definite is not, e.g. a precision
    passed to the log-likelihood or a singular covariance passed to the
    maximum likelihood estimator.
    """


class InfeasibleProjectionError(ValueError):
    """
    A projection or knapsack problem has an empty feasible set.
    """


class ConvergenceError(RuntimeError):
    """
    The solver reached ``max_iter`` without meeting either stopping rule.

    The best iterate seen so far is attached as ``decomposition`` together
    with the ``diagnostics`` of the run, so callers can still export it.
    """

    def __init__(self, message, decomposition=None, diagnostics=None):
        super(ConvergenceError, self).__init__(message)
        self.decomposition = decomposition
        self.diagnostics = diagnostics
