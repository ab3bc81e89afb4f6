"""Near-orthogonal unit-vector families (Johnson-Lindenstrauss style).

A family is k unit vectors in R^{d'} with all pairwise inner products bounded
by gamma in absolute value. Generation is sample-normalize-reject over whole
families; an exactly orthonormal stand-in is provided for desk-scale tests.
"""

import math
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12


class GenerationError(RuntimeError):
    """Rejection sampling exhausted its retries."""


@dataclass(frozen=True)
class VectorFamily:
    """k unit rows in R^{d'} with pairwise |<v_a, v_b>| <= gamma."""

    vectors: np.ndarray
    gamma: float

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("vectors must be a (k, d') array with k >= 1")
        if not 0.0 < self.gamma <= 0.25:
            raise ValueError(f"gamma must lie in (0, 1/4], got {self.gamma}")
        object.__setattr__(self, "vectors", v)
        v.setflags(write=False)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_prime(self) -> int:
        return self.vectors.shape[1]

    def dot(self, a: int, b: int) -> float:
        """Inner product <v_a, v_b> for 1-based action indices."""
        return float(self.vectors[a - 1] @ self.vectors[b - 1])


@dataclass(frozen=True)
class FamilyReport:
    max_overlap: float
    max_norm_dev: float


def feasibility_bound(k: int, gamma: float) -> int:
    """Smallest admissible dimension ceil(8 ln(k) / gamma^2)."""
    return math.ceil(8.0 * math.log(k) / gamma**2) if k > 1 else 0


def verify_family(family: VectorFamily) -> FamilyReport:
    """Exact maxima of pairwise overlap and unit-norm deviation."""
    v = family.vectors
    norms = np.linalg.norm(v, axis=1)
    gram = v @ v.T
    off = np.abs(gram - np.diag(np.diag(gram)))
    max_overlap = float(off.max()) if family.k > 1 else 0.0
    return FamilyReport(max_overlap=max_overlap, max_norm_dev=float(np.abs(norms - 1.0).max()))


def family_ok(family: VectorFamily) -> bool:
    rep = verify_family(family)
    return rep.max_overlap <= family.gamma + NORM_TOL and rep.max_norm_dev <= NORM_TOL


def generate_family(
    d_prime: int,
    k: int,
    gamma: float,
    rng: np.random.Generator,
    max_retries: int = 1000,
) -> VectorFamily:
    """Sample-normalize-reject whole Gaussian families until pairwise bound holds."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    bound = feasibility_bound(k, gamma)
    if d_prime < max(bound, 1):
        raise ValueError(
            f"d'={d_prime} below the feasibility bound ceil(8 ln(k)/gamma^2) = {bound}"
        )
    best = math.inf
    for _ in range(max_retries):
        v = rng.standard_normal((k, d_prime))
        norms = np.linalg.norm(v, axis=1)
        if (norms == 0.0).any():
            continue
        v /= norms[:, None]
        fam = VectorFamily(vectors=v, gamma=gamma)
        overlap = verify_family(fam).max_overlap
        best = min(best, overlap)
        if overlap <= gamma:
            return fam
    raise GenerationError(
        f"no family with pairwise overlap <= {gamma} in {max_retries} retries "
        f"(best attempt reached {best:.6g})"
    )


def orthonormal_family(d_prime: int, k: int, gamma: float = 0.25) -> VectorFamily:
    """Standard basis vectors e_1..e_k: overlaps exactly 0, any gamma is honored."""
    if k > d_prime:
        raise ValueError(f"orthonormal family needs k <= d', got k={k} > d'={d_prime}")
    return VectorFamily(vectors=np.eye(d_prime)[:k].copy(), gamma=gamma)


def save_family(family: VectorFamily, path) -> None:
    """Flat text format: `d_prime k gamma`, then k lines of d' floats."""
    with open(path, "w") as fh:
        fh.write(f"{family.d_prime} {family.k} {family.gamma:.17g}\n")
        for row in family.vectors:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_family(path) -> VectorFamily:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header {header!r}")
        d_prime, k, gamma = int(header[0]), int(header[1]), float(header[2])
        rows = [[float(tok) for tok in fh.readline().split()] for _ in range(k)]
    v = np.array(rows)
    if v.shape != (k, d_prime):
        raise ValueError(f"{path}: expected {k} rows of {d_prime} floats, got {v.shape}")
    return VectorFamily(vectors=v, gamma=gamma)
