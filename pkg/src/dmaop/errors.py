"""Exception types shared across the package."""


class InputError(ValueError):
    """Rejected input: malformed config, degenerate geometry, bad arguments."""


class DegenerateSimplexError(InputError):
    """A simplex has affinely dependent vertices (|det A_i| = 0)."""

    def __init__(self, index, detail=""):
        self.index = index
        msg = f"degenerate simplex {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class BarrierDomainError(ArithmeticError):
    """Evaluation outside the barrier domain (e.g. log of det H <= 0).

    Distinct from an infeasibility report: this is a hard domain error of the
    logarithmic penalty, not a constraint residual.
    """

    def __init__(self, index, detail=""):
        self.index = index
        msg = f"simplex {index} outside penalty domain"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
