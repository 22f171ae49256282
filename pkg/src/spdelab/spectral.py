"""Diagonal operator calculus on a finite eigenbasis truncation of H.

States are plain numpy arrays whose last axis holds the eigenbasis
coordinates, so every operator here also acts on batches of shape
``(..., dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralSpace:
    """Truncation of H to ``dim`` eigenmodes of the drift operator A.

    ``alpha`` is the declared growth bound of the semigroup,
    ``||S(t)|| <= exp(alpha t)``; it may be looser than ``max(eigenvalues)``.
    """

    dim: int
    eigenvalues: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        mu = np.array(self.eigenvalues, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "eigenvalues", mu)
        object.__setattr__(self, "alpha", float(self.alpha))
        if int(self.dim) != self.dim or self.dim < 1:
            raise SpectralError(f"dim must be a positive integer, got {self.dim!r}")
        if mu.shape != (self.dim,):
            raise SpectralError(f"expected {self.dim} eigenvalues, got {mu.size}")
        if not np.all(np.isfinite(mu)):
            raise SpectralError("eigenvalues must be finite")
        if self.alpha < 0 or not np.isfinite(self.alpha):
            raise SpectralError("alpha must be a finite nonnegative number")
        if np.any(mu > self.alpha):
            raise SpectralError(
                f"eigenvalue {mu.max():g} exceeds alpha={self.alpha:g}; "
                "S(t) would not be a pseudo-contraction with this bound"
            )

    # -- constructors ---------------------------------------------------
    @classmethod
    def heat_dirichlet(cls, dim: int) -> "SpectralSpace":
        """Dirichlet Laplacian on (0, 1): mu_k = -k^2 pi^2, k = 1..dim."""
        k = np.arange(1, dim + 1, dtype=float)
        return cls(dim, -(k * np.pi) ** 2, alpha=0.0)

    @classmethod
    def constant(cls, dim: int, mu: float = 0.0, alpha: float | None = None):
        return cls(dim, np.full(dim, float(mu)), max(mu, 0.0) if alpha is None else alpha)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "SpectralSpace":
        dim = cfg["dim"]
        eig = cfg.get("eigenvalues", "heat_dirichlet")
        if isinstance(eig, str):
            if eig != "heat_dirichlet":
                raise SpectralError(f"unknown eigenvalue generator {eig!r}")
            base = cls.heat_dirichlet(dim)
            return cls(dim, base.eigenvalues, cfg.get("alpha", 0.0))
        return cls(dim, np.asarray(eig, dtype=float), cfg.get("alpha", 0.0))

    def to_config(self) -> dict:
        return {
            "dim": self.dim,
            "eigenvalues": [float(m) for m in self.eigenvalues],
            "alpha": self.alpha,
        }

    # -- helpers --------------------------------------------------------
    def basis(self, k: int) -> np.ndarray:
        """Unit vector e_{k+1} (zero-based index k)."""
        e = np.zeros(self.dim)
        e[k] = 1.0
        return e

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise SpectralError(f"state has trailing shape {x.shape[-1:]}, expected ({self.dim},)")
        return x

    def yosida(self, n: float) -> "YosidaIndex":
        return YosidaIndex(self, n)


@dataclass(frozen=True)
class YosidaIndex:
    """A resolvent parameter n > alpha, with cached diagonal factors."""

    space: SpectralSpace
    n: float

    def __post_init__(self):
        n = float(self.n)
        object.__setattr__(self, "n", n)
        if not n > self.space.alpha:
            raise SpectralError(
                f"Yosida index n={n:g} must exceed alpha={self.space.alpha:g} "
                "for nI - A to be invertible"
            )

    @property
    def resolvent_diag(self) -> np.ndarray:
        return 1.0 / (self.n - self.space.eigenvalues)

    @property
    def R_diag(self) -> np.ndarray:
        return self.n / (self.n - self.space.eigenvalues)

    @property
    def A_diag(self) -> np.ndarray:
        return self.n * self.space.eigenvalues / (self.n - self.space.eigenvalues)

    def R_norm(self) -> float:
        return float(np.max(np.abs(self.R_diag)))


def _index(space: SpectralSpace, idx) -> YosidaIndex:
    if isinstance(idx, YosidaIndex):
        if idx.space is not space and idx.space != space:
            raise SpectralError("Yosida index built for a different space")
        return idx
    return YosidaIndex(space, idx)


def semigroup_diag(space: SpectralSpace, t) -> np.ndarray:
    """Diagonal of S(t); ``t`` may be an array, giving shape ``(*t.shape, dim)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise SpectralError("semigroup time must be nonnegative")
    return np.exp(np.multiply.outer(t, space.eigenvalues))


def semigroup_apply(space: SpectralSpace, t: float, x) -> np.ndarray:
    return semigroup_diag(space, t) * space.check(x)


def apply_A(space: SpectralSpace, x) -> np.ndarray:
    return space.eigenvalues * space.check(x)


def resolvent_apply(space: SpectralSpace, idx, x) -> np.ndarray:
    """R(n, A) x = (nI - A)^{-1} x."""
    return _index(space, idx).resolvent_diag * space.check(x)


def yosida_R(space: SpectralSpace, idx, x) -> np.ndarray:
    """R_n x = n R(n, A) x."""
    return _index(space, idx).R_diag * space.check(x)


def yosida_A(space: SpectralSpace, idx, x) -> np.ndarray:
    """A_n x = A R_n x."""
    return _index(space, idx).A_diag * space.check(x)


def phi1_diag(space: SpectralSpace, dt: float) -> np.ndarray:
    """Diagonal of int_0^dt S(u) du, i.e. (exp(mu dt) - 1)/mu with the mu=0 limit dt."""
    mu = space.eigenvalues
    z = mu * dt
    out = np.full_like(mu, float(dt))
    nz = np.abs(z) > 1e-12
    out[nz] = np.expm1(z[nz]) / mu[nz]
    return out


def as_space(obj: SpectralSpace | Sequence[float]) -> SpectralSpace:
    if isinstance(obj, SpectralSpace):
        return obj
    mu = np.asarray(obj, dtype=float)
    return SpectralSpace(mu.size, mu, max(0.0, float(mu.max())))
