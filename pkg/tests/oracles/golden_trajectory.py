"""Independent scalar re-implementation of the game step, used once to freeze
the golden U trajectory in test_engine.py.

    python3 tests/oracles/golden_trajectory.py

Only numpy's seeded generators are shared with the package (the same
SeedSequence spawn keys), everything else is written out by hand.
"""

import numpy as np

SEED = 2024
SIGNAL, TIES = 1, 3
# strategies[i][s][mu-1]
STRATEGIES = [
    [[+1, -1], [+1, +1]],
    [[-1, -1], [+1, -1]],
    [[+1, +1], [-1, +1]],
]
WEIGHTS = [1.0, 2.0, 0.5]
INTRADAY = 0.0
STEPS = 5


def stream(*key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(SEED, spawn_key=key)))


def main():
    mus = stream(SIGNAL).integers(0, 2, size=STEPS)
    ties = stream(TIES)
    U = [[0.0, 0.0] for _ in STRATEGIES]
    for t in range(STEPS):
        mu = int(mus[t])
        A = 0.0
        for i, strat in enumerate(STRATEGIES):
            u0, u1 = U[i]
            if u0 == u1:
                best = 1 if ties.random() * 2.0 < 1.0 else 0
            else:
                best = 1 if u1 > u0 else 0
            A += WEIGHTS[i] * strat[best][mu]
        price = A  # identity price, no noise
        for i, strat in enumerate(STRATEGIES):
            for s in range(2):
                U[i][s] += strat[s][mu] * (INTRADAY - price)
        print(f"t={t + 1} mu={mu + 1} A={A!r} U={U!r}")


if __name__ == "__main__":
    main()
