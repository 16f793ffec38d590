"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid game, price or sweep configuration."""


class ReserveExhausted(ArithmeticError):
    """Total imbalance exceeded the capacity of the reserve ladder."""

    def __init__(self, x, capacity):
        self.x = float(x)
        self.capacity = float(capacity)
        self.overshoot = abs(self.x) - self.capacity
        super().__init__(
            f"reserve exhausted: |x|={abs(self.x):.6g} exceeds capacity "
            f"{self.capacity:.6g} by {self.overshoot:.6g}"
        )


class SaturatedEquilibrium(ArithmeticError):
    """No interior root of I = R(A + eta): every agent arbitrages the same way.

    ``case`` is 1 when all agents sell (p = 1) and 2 when all buy (p = 0);
    ``a_star`` is the bracket end the solution is pinned to.
    """

    def __init__(self, case, a_star):
        self.case = case
        self.a_star = float(a_star)
        super().__init__(f"saturated equilibrium (case {case}), A* pinned at {a_star:.6g}")
