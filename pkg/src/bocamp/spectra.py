"""eta- and R-transforms of the eigenvalue distribution of A^T A.

``eta(x) = E[1 / (1 + x lam)]`` and the R-transform is defined implicitly through
``eta(x) = 1 / (1 + x R(-x eta(x)))``.  Given ``w < 0`` the map
``x -> x eta(x)`` is strictly increasing, so ``R(w)`` follows from a bracketed
scalar root solve; with ``x eta(x) = -w`` the relation rearranges to
``R(w) = (1 - eta(x)) / (-w)``.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


class Spectrum:
    """Common machinery; subclasses provide ``eta`` and ``mean``."""

    mean = 1.0

    def eta(self, x):
        raise NotImplementedError

    def _x_eta_limit(self) -> float:
        """sup_x x eta(x); infinite when there is a zero-eigenvalue atom."""
        return np.inf

    def eta_at_infinity(self) -> float:
        """lim eta(x) as x -> inf, the mass at zero."""
        return 1.0 - getattr(self, "delta", 1.0)

    def eta_branches(self, x) -> np.ndarray:
        """All values of the (possibly multivalued) continuation of eta at real x."""
        return np.atleast_1d(self.eta(x))

    def solve_x(self, w: float) -> float:
        """x >= 0 with x eta(x) = -w."""
        target = -w
        if target >= self._x_eta_limit():
            raise ValueError(f"w={w} lies outside the domain of the R-transform")
        hi = 1.0
        while hi * self.eta(hi) < target:
            hi *= 2.0
            if hi > 1e300:
                raise ValueError(f"no bracket for w={w}")
        return brentq(lambda x: x * self.eta(x) - target, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                      maxiter=500)

    def r_transform(self, w: float) -> float:
        if w > 0:
            raise ValueError("only w <= 0 is supported")
        if w == 0.0:
            return float(self.mean)
        x = self.solve_x(w)
        return float((1.0 - self.eta(x)) / (-w))


class EigenDistribution(Spectrum):
    """Finite list of eigenvalue atoms with weights summing to one."""

    def __init__(self, atoms, weights):
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have the same shape")
        if np.any(atoms < 0) or np.any(weights < 0):
            raise ValueError("atoms and weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {weights.sum()}, expected 1")
        keep = weights > 0
        self.atoms = atoms[keep]
        self.weights = weights[keep]

    @classmethod
    def from_singular_values(cls, sigma, N: int) -> "EigenDistribution":
        sigma = np.asarray(sigma, dtype=float)
        M = sigma.size
        atoms = np.append(sigma**2, 0.0)
        weights = np.append(np.full(M, 1.0 / N), (N - M) / N)
        return cls(atoms, weights)

    @classmethod
    def point_mass(cls, lam: float) -> "EigenDistribution":
        return cls([lam], [1.0])

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.atoms))

    def eta(self, x):
        x = np.asarray(x, dtype=float)
        out = np.sum(self.weights / (1.0 + x[..., None] * self.atoms), axis=-1)
        return float(out) if out.ndim == 0 else out

    def eta_at_infinity(self) -> float:
        return float(self.weights[self.atoms == 0.0].sum())

    def _x_eta_limit(self) -> float:
        if np.any(self.atoms == 0.0):
            return np.inf
        return float(np.sum(self.weights / self.atoms))

    def r_transform(self, w: float) -> float:
        # a single atom has a constant R-transform on the whole half line
        if self.atoms.size == 1:
            return float(self.atoms[0])
        return super().r_transform(w)


class RowOrthogonalLimit(Spectrum):
    """A A^T = I / delta: atom 1/delta with weight delta, zero atom otherwise."""

    def __init__(self, delta: float):
        if not 0 < delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        self.delta = delta

    def eta(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 - self.delta) + self.delta / (1.0 + x / self.delta)

    def _x_eta_limit(self) -> float:
        return np.inf if self.delta < 1 else self.delta

    def r_transform(self, w: float) -> float:
        if self.delta == 1.0:
            return 1.0
        return super().r_transform(w)


class GeometricLimit(Spectrum):
    """Large-system limit of the geometric spectrum with condition number kappa.

    A fraction delta of the eigenvalues has log(lam) uniform on
    [log lam_min, log lam_min + 2 log kappa]; the rest are zero.
    """

    def __init__(self, kappa: float, delta: float):
        if not kappa > 1:
            raise ValueError("kappa must exceed 1")
        if not 0 < delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        self.kappa = kappa
        self.delta = delta
        self.C = 2.0 * np.log(kappa) / delta
        self.lam_min = self.C / (kappa**2 - 1.0)
        self.lam_max = self.lam_min * kappa**2

    @property
    def second_moment(self) -> float:
        return self.delta * (self.lam_max**2 - self.lam_min**2) / (4.0 * np.log(self.kappa))

    def eta(self, x):
        """Closed form; for x < 0 this is the continuation analytic off the cut
        [-1/lam_min, -1/lam_max] (NaN on the cut)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            pos = np.log1p(x * self.lam_max) - np.log1p(x * self.lam_min)
            ratio = (1.0 + x * self.lam_max) / (1.0 + x * self.lam_min)
            neg = np.where(ratio > 0, np.log(np.abs(ratio)), np.nan)
        log_ratio = np.where(x >= 0, pos, neg)
        return 1.0 - self.delta * log_ratio / (2.0 * np.log(self.kappa))

    def _x_eta_limit(self) -> float:
        if self.delta < 1:
            return np.inf
        # int dlam / (lam^2 log kappa^2) over the support
        return (1.0 / self.lam_min - 1.0 / self.lam_max) / (2.0 * np.log(self.kappa))


class MarchenkoPastur(Spectrum):
    """A with i.i.d. N(0, 1/M) entries, M = delta N; R(w) = 1 / (1 - w / delta)."""

    def __init__(self, delta: float):
        if not 0 < delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        self.delta = delta

    @property
    def edges(self):
        r = np.sqrt(self.delta)
        return (1.0 - r) ** 2 / self.delta, (1.0 + r) ** 2 / self.delta

    def eta(self, x):
        """Root of x eta^2 + (delta + x delta - x) eta - delta = 0 on the physical
        branch: eta(0) = 1, analytic off the cut [-1/lam_min, -1/lam_max]."""
        x = np.asarray(x, dtype=float)
        d = self.delta
        b = d + x * (d - 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(b * b + 4.0 * x * d)
            near = 2.0 * d / (b + disc)  # the root through eta(0) = 1
            far = (disc - b) / (2.0 * x)
            beyond = (b + disc) / (-2.0 * x)  # continuation from x = -inf
        lam_hi = self.edges[1]
        out = np.where(x >= 0, np.where(b >= 0, near, far), np.where(x * lam_hi > -1.0, near, beyond))
        return float(out) if out.ndim == 0 else out

    def eta_at_infinity(self) -> float:
        return 1.0 - self.delta

    def eta_branches(self, x) -> np.ndarray:
        d = self.delta
        b = d + x * (d - 1.0)
        disc2 = b * b + 4.0 * x * d
        if disc2 < 0:
            return np.array([np.nan])
        disc = np.sqrt(disc2)
        if x == 0:
            return np.array([1.0])
        return np.array([(-b + disc) / (2.0 * x), (-b - disc) / (2.0 * x)])

    def r_transform_closed(self, w: float) -> float:
        return 1.0 / (1.0 - w / self.delta)


def eta(dist: Spectrum, x):
    if np.any(np.asarray(x) < 0):
        raise ValueError("eta is evaluated on x >= 0")
    return dist.eta(x)


def r_transform(dist: Spectrum, w: float) -> float:
    return dist.r_transform(w)


def sampled_iid_spectrum(M: int, N: int, seed) -> EigenDistribution:
    """Empirical spectrum of one i.i.d. N(0, 1/M) matrix."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, N)) / np.sqrt(M)
    lam = np.linalg.eigvalsh(A @ A.T)
    return EigenDistribution.from_singular_values(np.sqrt(np.maximum(lam, 0.0))[::-1], N)
