"""Per-feature hybrid states: GMM distribution fingerprints plus semantic embeddings.

Each feature column gets a k-component Gaussian mixture fitted by EM; the
mixture parameters are concatenated with a k-dimensional semantic embedding to
form the hybrid vector used for clustering, and compressed (weighted mean and
spread) into the per-feature RL observation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureTable
from .seeding import subseed

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
EM_TOL = 1e-6
EM_MAX_ITER = 200
_LOG_2PI = float(np.log(2.0 * np.pi))


class GmmFitError(RuntimeError):
    """Raised when EM violates its monotonicity guarantee."""


@dataclass(frozen=True)
class GmmParams:
    """Weights, means, stds of a 1-D Gaussian mixture (stds are standard deviations)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_likelihood: float = float("nan")
    ll_trace: tuple[float, ...] = ()
    degraded: bool = False  # true when k exceeded the distinct-value count

    def __post_init__(self):
        k = self.weights.size
        if self.means.size != k or self.stds.size != k:
            raise ValueError("weights, means, stds must share one length")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {self.weights.sum()}")
        if np.any(self.weights < -1e-12):
            raise ValueError("mixture weights must be non-negative")
        if np.any(self.stds < SIGMA_FLOOR - 1e-15):
            raise ValueError("component stds below the variance floor")

    @property
    def k(self) -> int:
        return self.weights.size

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        comp = np.exp(-0.5 * ((x - self.means) / self.stds) ** 2) / (
            self.stds * np.sqrt(2.0 * np.pi)
        )
        return comp @ self.weights

    def flat(self) -> np.ndarray:
        """Parameter vector in fixed order (z_1..z_k, mu_1..mu_k, sigma_1..sigma_k)."""
        return np.concatenate([self.weights, self.means, self.stds])


@dataclass(frozen=True)
class SemanticEmbedding:
    """Reduced embedding of a feature's metadata; source is remote, cache, or zero."""

    vector: np.ndarray
    source: str = "zero"

    def __post_init__(self):
        if self.source not in ("remote", "cache", "zero"):
            raise ValueError(f"unknown embedding source {self.source!r}")
        if self.source == "zero" and np.any(self.vector != 0.0):
            raise ValueError("zero-source embedding must be exactly all-zero")


@dataclass(frozen=True)
class HybridState:
    """Full hybrid vector h (4k) and compressed RL state s (k+2) for one feature."""

    embedding: SemanticEmbedding
    gmm: GmmParams
    h: np.ndarray = field(init=False)
    s: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", np.concatenate([self.embedding.vector, self.gmm.flat()]))
        object.__setattr__(self, "s", state_vector(self.embedding.vector, self.gmm))


def _log_densities(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    z = (x[:, None] - means[None, :]) / stds[None, :]
    return -0.5 * z * z - np.log(stds)[None, :] - 0.5 * _LOG_2PI


def _log_likelihood(x, weights, means, stds) -> tuple[float, np.ndarray]:
    logp = _log_densities(x, means, stds) + np.log(np.maximum(weights, 1e-300))[None, :]
    top = logp.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
    return float(lse.sum()), np.exp(logp - lse[:, None])


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(x.size)])
            continue
        centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.asarray(centers, dtype=np.float64)


def fit_gmm(
    values: np.ndarray,
    k: int,
    seed: int,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> GmmParams:
    """Fit a k-component 1-D GMM by EM from a k-means++-style seeded start.

    Stops when the log-likelihood improves by less than tol or after max_iter
    iterations; the log-likelihood is checked to be non-decreasing at every
    step. If k exceeds the number of distinct values, the fit degrades to the
    distinct count and is padded back to k with zero-weight components.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < max(k, 1):
        raise ValueError(f"need at least {k} values to fit {k} components")
    if k < 1:
        raise ValueError("k must be positive")

    distinct = np.unique(x).size
    k_eff = min(k, distinct)
    degraded = k_eff < k
    if degraded:
        log.warning("degrading GMM from k=%d to %d distinct values", k, k_eff)

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k_eff, rng)
    assign = np.argmin(np.abs(x[:, None] - means[None, :]), axis=1)
    weights = np.empty(k_eff)
    stds = np.empty(k_eff)
    fallback_std = max(float(x.std()), SIGMA_FLOOR)
    for j in range(k_eff):
        members = x[assign == j]
        weights[j] = max(members.size, 1) / x.size
        means[j] = members.mean() if members.size else means[j]
        stds[j] = max(float(members.std()) if members.size else fallback_std, SIGMA_FLOOR)
    weights /= weights.sum()

    trace: list[float] = []
    prev_ll, resp = _log_likelihood(x, weights, means, stds)
    trace.append(prev_ll)
    for _ in range(max_iter):
        # M-step from current responsibilities
        nj = resp.sum(axis=0)
        safe_nj = np.maximum(nj, 1e-12)
        weights = nj / x.size
        weights = weights / weights.sum()
        means = (resp * x[:, None]).sum(axis=0) / safe_nj
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / safe_nj
        stds = np.maximum(np.sqrt(var), SIGMA_FLOOR)

        ll, resp = _log_likelihood(x, weights, means, stds)
        if ll < prev_ll - 1e-8 * (1.0 + abs(prev_ll)):
            raise GmmFitError(f"EM log-likelihood decreased: {prev_ll} -> {ll}")
        trace.append(ll)
        if ll - prev_ll < tol:
            prev_ll = ll
            break
        prev_ll = ll

    if degraded:
        pad = k - k_eff
        weights = np.concatenate([weights, np.zeros(pad)])
        means = np.concatenate([means, np.zeros(pad)])
        stds = np.concatenate([stds, np.full(pad, SIGMA_FLOOR)])

    return GmmParams(
        weights=weights,
        means=means,
        stds=stds,
        log_likelihood=prev_ll,
        ll_trace=tuple(trace),
        degraded=degraded,
    )


def bic(params: GmmParams, n_samples: int) -> float:
    """Bayesian information criterion: -2 logL + p ln m with p = 3k - 1 free parameters."""
    k = params.k
    p = 3 * k - 1
    return -2.0 * params.log_likelihood + p * np.log(n_samples)


def select_global_k(table: FeatureTable, k_max: int, seed: int = 0) -> int:
    """BIC-optimal component count per feature; the global k is their maximum.

    Callers refit every feature at the returned k so all parameter vectors
    share one dimension.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if k_max == 1:
        return 1
    best_global = 1
    for i in range(table.n_features):
        column = table.X[:, i]
        feature_seed = subseed(seed, i)
        best_k, best_bic = 1, float("inf")
        k_cap = min(k_max, column.size)
        for k in range(1, k_cap + 1):
            params = fit_gmm(column, k, feature_seed)
            if params.degraded:
                continue
            score = bic(params, column.size)
            if score < best_bic:
                best_k, best_bic = k, score
        best_global = max(best_global, best_k)
    return best_global


def fit_feature_gmms(table: FeatureTable, k: int, seed: int = 0) -> list[GmmParams]:
    """Fit every feature column at the shared component count k."""
    return [fit_gmm(table.X[:, i], k, subseed(seed, i)) for i in range(table.n_features)]


def reduce_dimensions(raw_vectors: np.ndarray, target_k: int) -> np.ndarray:
    """Project raw embedding vectors onto their top principal components.

    The projection is fitted on the mean-centered rows. When fewer components
    are available than target_k (n - 1 < target_k or d < target_k), the output
    is zero-padded. With fewer than 2 rows no projection can be fitted and the
    rows are truncated or zero-padded instead.
    """
    if target_k < 1:
        raise ValueError("target_k must be positive")
    raw = np.asarray(raw_vectors, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("raw_vectors must be a 2-D array")
    n, d = raw.shape

    out = np.zeros((n, target_k))
    if n < 2:
        keep = min(d, target_k)
        out[:, :keep] = raw[:, :keep]
        return out
    centered = raw - raw.mean(axis=0, keepdims=True)
    if not np.any(centered):
        return out  # identical rows project to the origin
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    n_comp = min(target_k, vt.shape[0])
    out[:, :n_comp] = centered @ vt[:n_comp].T
    return out


def l2_normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """Scale each row to unit length; all-zero rows stay zero."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.where(norms > 0.0, vectors / np.where(norms > 0.0, norms, 1.0), vectors)


def state_vector(e: np.ndarray, g: GmmParams) -> np.ndarray:
    """Compressed per-feature state: e followed by the weight-averaged mean and std."""
    e = np.asarray(e, dtype=np.float64).ravel()
    mean_part = float(np.dot(g.weights, g.means))
    std_part = float(np.dot(g.weights, g.stds))
    return np.concatenate([e, [mean_part, std_part]])


def global_state(states: list[np.ndarray] | np.ndarray, mask) -> np.ndarray:
    """Fixed-size step state: concatenation of s_i for selected features, zeros elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    states = [np.asarray(s, dtype=np.float64) for s in states]
    if len(states) != mask.size:
        raise ValueError(f"{len(states)} states but {mask.size} mask bits")
    parts = [s if keep else np.zeros_like(s) for s, keep in zip(states, mask)]
    return np.concatenate(parts)


def build_hybrid_states(embeddings: list[SemanticEmbedding], gmms: list[GmmParams]) -> list[HybridState]:
    if len(embeddings) != len(gmms):
        raise ValueError("embedding and GMM counts differ")
    return [HybridState(embedding=e, gmm=g) for e, g in zip(embeddings, gmms)]
