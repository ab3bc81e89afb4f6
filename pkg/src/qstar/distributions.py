"""Finite reward and transition laws.

Laws are explicit finite distributions (point masses, Bernoullis, general
finite support) so that means, point probabilities, and likelihood ratios are
exact, in addition to supporting sampling.
"""

from dataclasses import dataclass

import numpy as np

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteDist:
    """Finitely supported distribution over floats or arbitrary hashables."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs must have equal length")
        if not self.probs:
            raise ValueError("distribution needs at least one atom")
        p = np.asarray(self.probs, dtype=float)
        if (p < -_PROB_TOL).any():
            raise ValueError(f"negative probability in {self.probs}")
        if abs(float(p.sum()) - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")

    @classmethod
    def point(cls, value) -> "FiniteDist":
        return cls((value,), (1.0,))

    @classmethod
    def bernoulli(cls, p: float) -> "FiniteDist":
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"Bernoulli mean {p} outside [0, 1]")
        return cls((0.0, 1.0), (1.0 - p, p))

    @property
    def is_point(self) -> bool:
        return len(self.support()) == 1

    def support(self) -> list:
        return [v for v, p in zip(self.values, self.probs) if p > 0.0]

    def mean(self) -> float:
        return float(np.dot(np.asarray(self.values, dtype=float), self.probs))

    def prob_of(self, value) -> float:
        return float(sum(p for v, p in zip(self.values, self.probs) if v == value))

    def sample(self, rng: np.random.Generator):
        if len(self.values) == 1:
            return self.values[0]
        i = rng.choice(len(self.values), p=np.asarray(self.probs, dtype=float))
        return self.values[int(i)]

    def sample_counts(self, rng: np.random.Generator, n: int) -> list:
        """Aggregate n i.i.d. draws as [(value, count), ...]; faithful to n single draws."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        if len(self.values) == 1:
            return [(self.values[0], n)]
        counts = rng.multinomial(n, np.asarray(self.probs, dtype=float))
        return [(v, int(c)) for v, c in zip(self.values, counts) if c > 0]

    def sample_mean(self, rng: np.random.Generator, n: int) -> float:
        """Mean of n i.i.d. draws (numeric values only)."""
        if n <= 0:
            raise ValueError("n must be positive")
        total = sum(float(v) * c for v, c in self.sample_counts(rng, n))
        return total / n

    def same_as(self, other: "FiniteDist", tol: float = 0.0) -> bool:
        """Equality as distributions (atoms merged, zero-probability atoms ignored)."""
        return _atoms(self, tol) == _atoms(other, tol) if tol == 0.0 else _close(self, other, tol)


def _atoms(dist: FiniteDist, tol: float) -> dict:
    out: dict = {}
    for v, p in zip(dist.values, dist.probs):
        if p > 0.0:
            out[v] = out.get(v, 0.0) + p
    return out


def _close(a: FiniteDist, b: FiniteDist, tol: float) -> bool:
    aa, bb = _atoms(a, tol), _atoms(b, tol)
    if set(aa) != set(bb):
        return False
    return all(abs(aa[v] - bb[v]) <= tol for v in aa)
