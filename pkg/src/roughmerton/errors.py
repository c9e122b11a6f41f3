"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (blow-up, divergence, singular step).

    Carries optional context so callers can report where the failure
    happened (grid node, path index, maturity).
    """

    def __init__(self, message, *, node=None, path=None, maturity=None):
        super().__init__(message)
        self.node = node
        self.path = path
        self.maturity = maturity

    def __str__(self):
        base = super().__str__()
        tags = []
        if self.node is not None:
            tags.append(f"node={self.node}")
        if self.path is not None:
            tags.append(f"path={self.path}")
        if self.maturity is not None:
            tags.append(f"maturity={self.maturity}")
        return f"{base} ({', '.join(tags)})" if tags else base


class GridMismatchError(ValueError):
    """Operands were sampled on different time grids."""
