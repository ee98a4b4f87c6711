"""Problem definition: priors, noise, sensing operators and synthetic instances.

The measurement model is ``y = A x + w`` with ``x`` i.i.d. Bernoulli-Gaussian of
unit variance and ``w`` white Gaussian noise.  Transform-based operators store
``A = U diag(sigma) V^T`` implicitly, with ``U`` and ``V`` realised as
random permutation * sign flips * normalised Walsh-Hadamard * sign flips.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPECTRUM_KINDS = ("geometric", "row_orthogonal", "iid_gaussian")


@dataclass(frozen=True)
class Prior:
    """Bernoulli-Gaussian prior: zero w.p. ``1 - rho``, else N(0, 1/rho)."""

    rho: float
    kind: str = "bernoulli_gaussian"

    def __post_init__(self):
        if self.kind != "bernoulli_gaussian":
            raise ValueError(f"unsupported prior kind {self.kind!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")

    @property
    def slab_variance(self) -> float:
        return 1.0 / self.rho

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        support = rng.random(n) < self.rho
        return np.where(support, rng.standard_normal(n) * np.sqrt(self.slab_variance), 0.0)


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseModel":
        return cls(10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(1.0 / self.sigma2)


@dataclass(frozen=True)
class SpectrumSpec:
    kind: str
    M: int
    N: int
    kappa: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in SPECTRUM_KINDS:
            raise ValueError(f"kind must be one of {SPECTRUM_KINDS}, got {self.kind!r}")
        if not 0 < self.M <= self.N:
            raise ValueError(f"need 0 < M <= N, got M={self.M}, N={self.N}")
        if self.kind == "geometric" and not self.kappa > 1.0:
            raise ValueError(f"geometric spectrum needs kappa > 1, got {self.kappa}")
        if self.kind == "iid_gaussian" and not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def delta(self) -> float:
        return self.M / self.N


def geometric_singular_values(M: int, N: int, kappa: float) -> np.ndarray:
    """Singular values with constant ratio ``kappa**(-1/(M-1))`` and unit mean power.

    Returns the M values in descending order; ``sigma[0] / sigma[-1] == kappa`` and
    ``sum(sigma**2) / N == 1``.
    """
    if M < 2:
        raise ValueError("geometric spectrum needs M >= 2")
    if not kappa > 1.0:
        raise ValueError(f"kappa must exceed 1, got {kappa}")
    m = np.arange(M)
    # log-ratio of consecutive squared values; expm1 keeps kappa -> 1 accurate
    r = -2.0 * np.log(kappa) / (M - 1)
    sigma0_sq = N * np.expm1(r) / np.expm1(r * M)
    return np.sqrt(sigma0_sq) * kappa ** (-m / (M - 1))


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fwht(x: np.ndarray) -> np.ndarray:
    """Orthonormal fast Walsh-Hadamard transform along the last axis."""
    x = np.array(x, dtype=float)
    n = x.shape[-1]
    if not _is_power_of_two(n):
        raise ValueError(f"length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        x = x.reshape(*lead, n // (2 * h), 2, h)
        a = x[..., 0, :]
        b = x[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return x.reshape(*lead, n) / np.sqrt(n)


class HadamardTransform:
    """Orthogonal matrix Q = P D1 H D2 (permutation, random signs, Walsh-Hadamard, random signs).

    The permutation acts after H, so truncating ``Q v`` to its first k entries
    keeps a random subset of Hadamard rows.  Keeping the leading rows of the
    naturally ordered H instead would couple coordinates in fixed pairs.
    """

    def __init__(self, n: int, rng: np.random.Generator):
        if not _is_power_of_two(n):
            raise ValueError(f"Hadamard transform needs a power-of-two size, got {n}")
        self.n = n
        self.signs_in = rng.choice([-1.0, 1.0], size=n)
        self.signs_out = rng.choice([-1.0, 1.0], size=n)
        self.perm = rng.permutation(n)

    def apply(self, v):
        return (self.signs_out * fwht(self.signs_in * np.asarray(v, dtype=float)))[..., self.perm]

    def adjoint(self, v):
        w = np.empty_like(np.asarray(v, dtype=float))
        w[..., self.perm] = v
        return self.signs_in * fwht(self.signs_out * w)


class SensingOperator:
    """``A = U diag(sigma) V^T`` exposed through fast products and its SVD factors."""

    def __init__(self, singular_values, left: HadamardTransform, right: HadamardTransform):
        self.singular_values = np.asarray(singular_values, dtype=float)
        self.left = left
        self.right = right
        self.M = left.n
        self.N = right.n
        if self.singular_values.shape != (self.M,):
            raise ValueError("need one singular value per row")

    @property
    def delta(self) -> float:
        return self.M / self.N

    # SVD-domain pieces, used by OAMP/VAMP
    def right_project(self, x):
        """First M coordinates of V^T x."""
        return self.right.apply(x)[..., : self.M]

    def right_lift(self, c):
        """V applied to c padded with zeros to length N."""
        c = np.asarray(c, dtype=float)
        pad = np.zeros(c.shape[:-1] + (self.N - self.M,))
        return self.right.adjoint(np.concatenate((c, pad), axis=-1))

    def left_apply(self, c):
        return self.left.adjoint(c)

    def left_adjoint(self, z):
        return self.left.apply(z)

    def matvec(self, x):
        return self.left_apply(self.singular_values * self.right_project(x))

    def rmatvec(self, z):
        return self.right_lift(self.singular_values * self.left_adjoint(z))


class DenseOperator(SensingOperator):
    """Explicit matrix; the SVD is computed on demand."""

    def __init__(self, A: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        self.M, self.N = self.A.shape
        if self.M > self.N:
            raise ValueError("need M <= N")
        self._svd = None

    def _factors(self):
        if self._svd is None:
            self._svd = np.linalg.svd(self.A, full_matrices=False)
        return self._svd

    @property
    def singular_values(self):
        return self._factors()[1]

    def right_project(self, x):
        return np.asarray(x) @ self._factors()[2].T

    def right_lift(self, c):
        return np.asarray(c) @ self._factors()[2]

    def left_apply(self, c):
        return np.asarray(c) @ self._factors()[0].T

    def left_adjoint(self, z):
        return np.asarray(z) @ self._factors()[0]

    def matvec(self, x):
        return np.asarray(x) @ self.A.T

    def rmatvec(self, z):
        return np.asarray(z) @ self.A


def spectrum_values(spec: SpectrumSpec) -> np.ndarray:
    """Deterministic singular values for transform-based kinds."""
    if spec.kind == "geometric":
        return geometric_singular_values(spec.M, spec.N, spec.kappa)
    if spec.kind == "row_orthogonal":
        return np.full(spec.M, np.sqrt(spec.N / spec.M))
    raise ValueError(f"{spec.kind!r} has no deterministic spectrum")


def build_operator(spec: SpectrumSpec, seed) -> SensingOperator:
    rng = np.random.default_rng(seed)
    if spec.kind == "iid_gaussian":
        mean = np.sqrt(spec.gamma / spec.M)
        std = np.sqrt((1.0 - spec.gamma) / spec.M)
        return DenseOperator(mean + std * rng.standard_normal((spec.M, spec.N)))
    for n in (spec.M, spec.N):
        if not _is_power_of_two(n):
            raise ValueError(f"transform-based operators need power-of-two sizes, got {n}")
    left = HadamardTransform(spec.M, rng)
    right = HadamardTransform(spec.N, rng)
    return SensingOperator(spectrum_values(spec), left, right)


@dataclass(frozen=True)
class ProblemInstance:
    x_true: np.ndarray
    y: np.ndarray
    operator: SensingOperator = field(repr=False)
    noise: NoiseModel
    prior: Prior
    seed: int | None

    @property
    def M(self) -> int:
        return self.operator.M

    @property
    def N(self) -> int:
        return self.operator.N


def sample_instance(spec: SpectrumSpec, prior: Prior, noise: NoiseModel, seed) -> ProblemInstance:
    op_seq, x_seq, w_seq = np.random.SeedSequence(seed).spawn(3)
    operator = build_operator(spec, op_seq)
    x = prior.sample(spec.N, np.random.default_rng(x_seq))
    w = np.sqrt(noise.sigma2) * np.random.default_rng(w_seq).standard_normal(spec.M)
    y = operator.matvec(x) + w
    return ProblemInstance(x, y, operator, noise, prior, seed)
