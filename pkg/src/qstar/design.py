"""Near-G-optimal experimental design and the associated least-squares estimator.

Frank-Wolfe ascent on log det G(rho) from the uniform design; by the
Kiefer-Wolfowitz theorem the minimal worst-case leverage equals the rank of
the candidate set, so the loop stops once the maximum leverage falls below
min(2d, (1+tolerance) * rank), after which tiny weights are pruned and the
<= 2d condition is re-verified. Rank-deficient candidate sets are handled by
working in an orthonormal basis of their span (pseudo-inverse leverages).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

_RANK_RCOND = 1e-12
WEIGHT_FLOOR = 1e-6


class DesignError(RuntimeError):
    """Design construction failed (empty candidates or non-convergence)."""


@dataclass
class Design:
    """Finitely supported design over feature points with its information matrix."""

    features: np.ndarray  # (m, d) support rows
    weights: np.ndarray  # (m,) positive, sums to 1
    support_indices: np.ndarray  # indices into the original candidate array
    keys: list | None  # caller's labels for the support points
    info_matrix: np.ndarray  # G(rho), d x d, PSD with rank `rank`
    rank: int
    max_leverage: float  # over all nonzero candidates, after pruning
    iterations: int
    candidate_count: int

    @property
    def support_size(self) -> int:
        return len(self.weights)

    @property
    def support_benchmark(self) -> float:
        """Reported (not asserted) Kiefer-Wolfowitz support bound 4d lnln(max(d,3)) + 16."""
        d = self.features.shape[1]
        return 4.0 * d * math.log(math.log(max(d, 3))) + 16.0

    @property
    def used_pinv(self) -> bool:
        return self.rank < self.features.shape[1]


def _leverages(Z: np.ndarray, G: np.ndarray) -> np.ndarray:
    try:
        M = np.linalg.solve(G, Z.T)
    except np.linalg.LinAlgError:
        M = np.linalg.pinv(G, hermitian=True) @ Z.T
    return np.einsum("ij,ji->i", Z, M)


def g_optimal_design(
    features,
    keys: list | None = None,
    tolerance: float = 0.05,
    max_iters: int = 10_000,
) -> Design:
    """Near-G-optimal design over a finite candidate feature set.

    Zero feature vectors are excluded from candidacy (their predictions are
    identically zero under any estimator).
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DesignError("candidate set must be a nonempty (n, d) array")
    if tolerance < 0.0:
        raise ValueError("tolerance must be nonnegative")
    d = X.shape[1]
    norms = np.linalg.norm(X, axis=1)
    nonzero = np.flatnonzero(norms > 0.0)
    if nonzero.size == 0:
        raise DesignError("all candidate feature vectors are zero")
    # bit-identical rows share any design mass; keep the first occurrence only
    seen: dict = {}
    reps = [i for i in nonzero if seen.setdefault(X[i].tobytes(), i) == i]
    nonzero = np.asarray(reps)
    Xn = X[nonzero]

    # orthonormal basis of the candidate span; leverages live in this subspace
    _, svals, vt = np.linalg.svd(Xn, full_matrices=False)
    rank = int((svals > svals[0] * _RANK_RCOND).sum())
    basis = vt[:rank].T  # (d, r)
    Z = Xn @ basis

    n = Z.shape[0]
    w = np.full(n, 1.0 / n)
    target = min(2.0 * d, (1.0 + tolerance) * rank)
    iterations = 0
    lev_max = math.inf
    while iterations <= max_iters:
        G = Z.T @ (w[:, None] * Z)
        lev = _leverages(Z, G)
        j = int(np.argmax(lev))
        lev_max = float(lev[j])
        if lev_max <= target:
            break
        step = (lev_max / rank - 1.0) / (lev_max - 1.0)
        w *= 1.0 - step
        w[j] += step
        iterations += 1
    else:
        raise DesignError(
            f"Frank-Wolfe did not reach max leverage <= {target:.6g} in {max_iters} "
            f"iterations (final max leverage {lev_max:.6g})"
        )

    keep = w >= WEIGHT_FLOOR / np.count_nonzero(w)
    w = w[keep] / w[keep].sum()
    Zs = Z[keep]
    G = Zs.T @ (w[:, None] * Zs)
    final_lev = float(_leverages(Z, G).max())
    if final_lev > 2.0 * d + 1e-9:
        raise DesignError(
            f"pruning pushed the max leverage to {final_lev:.6g} > 2d = {2 * d}"
        )

    support = nonzero[keep]
    info = basis @ G @ basis.T
    return Design(
        features=X[support],
        weights=w,
        support_indices=support,
        keys=[keys[i] for i in support] if keys is not None else None,
        info_matrix=info,
        rank=rank,
        max_leverage=final_lev,
        iterations=iterations,
        candidate_count=X.shape[0],
    )


def leverage_scores(features, design: Design) -> np.ndarray:
    """phi^T G(rho)^+ phi for each row of ``features`` (exhaustive check helper)."""
    X = np.asarray(features, dtype=float)
    Ginv = np.linalg.pinv(design.info_matrix, hermitian=True)
    return np.einsum("ij,jk,ik->i", X, Ginv, X)


def least_squares(design: Design, responses) -> np.ndarray:
    """theta_hat = G(rho)^+ sum_x rho(x) r(x) phi(x).

    Responses may be an array aligned with the design support or a dict keyed
    by the design's keys. A rank-deficient G falls back to the subspace
    pseudo-inverse (minimum-norm solution over the candidate span).
    """
    if isinstance(responses, dict):
        if design.keys is None:
            raise ValueError("dict responses require a keyed design")
        r = np.array([responses[key] for key in design.keys], dtype=float)
    else:
        r = np.asarray(responses, dtype=float)
    if r.shape != (design.support_size,):
        raise ValueError(
            f"responses must cover the {design.support_size} support points, got {r.shape}"
        )
    b = design.features.T @ (design.weights * r)
    if design.used_pinv:
        warnings.warn(
            f"design information matrix has rank {design.rank} < d = "
            f"{design.features.shape[1]}; using the subspace pseudo-inverse",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.linalg.pinv(design.info_matrix, hermitian=True) @ b
