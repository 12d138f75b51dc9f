"""Shared numeric kernel: splittable RNG, Gaussian types, KL divergence.

Everything downstream draws randomness through :class:`RngStream` so that
experiment results are reproducible bit-for-bit regardless of evaluation
order or worker count. All numerics are float64.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Cholesky jitter policy: start tiny, escalate by 10x, give up past the cap.
JITTER_START = 1e-10
JITTER_MAX = 1e-8

_MASK64 = (1 << 64) - 1


class DegenerateDensityError(ValueError):
    """Raised when a density is evaluated for a zero-width distribution."""


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the operation."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance fails Cholesky even after maximum jitter."""


# ---------------------------------------------------------------------------
# Random streams


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by (seed, stream_id).

    The same (seed, stream_id) pair always yields the identical draw
    sequence; distinct stream_ids select statistically independent,
    non-overlapping Philox streams. Children are derived by hashing a
    name, so replication 17 of a bandit run can own
    ``root.child("bandit").child("rep/17")`` and produce the same draws
    no matter which worker executes it.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if not 0 <= self.stream_id <= _MASK64:
            raise ValueError(f"stream_id must fit in 64 bits, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = self.seed | (self.stream_id << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, name: str) -> "RngStream":
        """Derive a named sub-stream, stable across platforms and runs."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(8, "little"))
        h.update(name.encode("utf-8"))
        derived = int.from_bytes(h.digest(), "little")
        return RngStream(seed=self.seed, stream_id=derived)

    def numbered(self, prefix: str, index: int) -> "RngStream":
        """Shorthand for ``child(f"{prefix}/{index}")``."""
        return self.child(f"{prefix}/{index}")


# ---------------------------------------------------------------------------
# Scalar Gaussian


def gaussian_logpdf(y: float, mean: float, std: float) -> float:
    """Log density of N(mean, std^2) at y. std must be positive."""
    if std <= 0.0:
        raise DegenerateDensityError(f"degenerate density: std={std}")
    z = (y - mean) / std
    return -0.5 * LOG_2PI - math.log(std) - 0.5 * z * z


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class Gaussian:
    """Scalar Gaussian with std >= 0; std = 0 is a point mass.

    A point mass can be sampled (returns the mean) but has no density,
    so ``logpdf`` raises for std = 0.
    """

    mean: float
    std: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mean) or not math.isfinite(self.std):
            raise ValueError("Gaussian parameters must be finite")
        if self.std < 0.0:
            raise ValueError(f"std must be nonnegative, got {self.std}")

    @property
    def var(self) -> float:
        return self.std * self.std

    def logpdf(self, y: float) -> float:
        return gaussian_logpdf(y, self.mean, self.std)

    def cdf(self, y: float) -> float:
        if self.std == 0.0:
            return 0.0 if y < self.mean else 1.0
        return normal_cdf((y - self.mean) / self.std)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        z = rng.standard_normal(size)
        return self.mean + self.std * z


# ---------------------------------------------------------------------------
# Multivariate Gaussian


def cholesky_with_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding escalating diagonal jitter if needed.

    Returns (factor, jitter_used). Jitter starts at 1e-10 and multiplies
    by 10 up to 1e-8; beyond that the matrix is treated as genuinely not
    positive definite.
    """
    cov = np.asarray(cov, dtype=np.float64)
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(cov.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(cov + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefiniteError(
        f"covariance not positive definite after jitter up to {JITTER_MAX}"
    )


class MultivariateGaussian:
    """Dense multivariate Gaussian with a cached Cholesky factor.

    The covariance must be symmetric to 1e-10; it is symmetrized before
    factorization so downstream algebra sees an exactly symmetric matrix.
    """

    __slots__ = ("mean", "cov", "chol", "jitter")

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DimensionError(f"covariance must be square, got shape {cov.shape}")
        if cov.shape[0] != mean.shape[0]:
            raise DimensionError(
                f"mean has dim {mean.shape[0]} but covariance is {cov.shape[0]}x{cov.shape[1]}"
            )
        asym = float(np.max(np.abs(cov - cov.T), initial=0.0))
        if asym > 1e-10:
            raise ValueError(f"covariance asymmetric by {asym:.3e} (tolerance 1e-10)")
        self.mean = mean
        self.cov = 0.5 * (cov + cov.T)
        self.chol, self.jitter = cholesky_with_jitter(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def logpdf(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.dim:
            raise DimensionError(f"point has dim {y.shape[0]}, expected {self.dim}")
        w = np.linalg.solve(self.chol, y - self.mean)
        return -0.5 * (self.dim * LOG_2PI + self.logdet() + float(w @ w))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if size is None:
            z = rng.standard_normal(self.dim)
            return self.mean + self.chol @ z
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T

    def marginal(self, index: int) -> Gaussian:
        return Gaussian(float(self.mean[index]), math.sqrt(float(self.cov[index, index])))


def mvn_kl(p: MultivariateGaussian, q: MultivariateGaussian) -> float:
    """KL(p || q) between dense Gaussians of equal dimension.

    0.5 * [tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - K + ln(|Sq|/|Sp|)].
    """
    if p.dim != q.dim:
        raise DimensionError(f"dimension mismatch: p is {p.dim}, q is {q.dim}")
    k = p.dim
    # Solve against q's Cholesky factor rather than forming an inverse.
    a = np.linalg.solve(q.chol, p.chol)          # Lq^-1 Lp
    trace_term = float(np.sum(a * a))            # tr(Sq^-1 Sp)
    d = np.linalg.solve(q.chol, q.mean - p.mean)
    quad_term = float(d @ d)
    logdet_term = q.logdet() - p.logdet()
    return 0.5 * (trace_term + quad_term - k + logdet_term)
