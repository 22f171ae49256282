"""Exponential-Euler time stepping of the mild equation and its Yosida approximants.

The scheme is vectorised over a leading path axis. One step from state x is

    x_next = S(dt) [x + F(x) dt + B(x) dW + sum_events f(mark, x)
                    - dt sum_i mass_i f(mark_i, x)]

with every coefficient evaluated at the left endpoint. The Yosida scheme
multiplies the bracketed increment (everything except x) by R_n, which is
the same as replacing F, B, f by R_n F, R_n B, R_n f.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .noise import (LevyMeasureSpec, NoiseBatch, NoisePath, QWienerSpec, as_batch,
                    make_noise_batch, uniform_grid)
from .spectral import SpectralSpace, YosidaIndex, phi1_diag, semigroup_diag


class SolverError(ValueError):
    pass


class BlowUpError(RuntimeError):
    """A simulated state became NaN or infinite."""

    def __init__(self, step: int, t: float, paths: Sequence[int], scheme: str):
        self.step, self.t, self.paths, self.scheme = step, t, list(paths), scheme
        super().__init__(
            f"non-finite state after step {step} (t={t:g}) on paths {self.paths[:10]} "
            f"with scheme {scheme}; check the coefficients against the growth bound"
        )


class PicardDivergenceError(RuntimeError):
    def __init__(self, distances):
        self.distances = list(distances)
        super().__init__(f"Picard iterates are not contracting: sup-distances {self.distances}")


# -- coefficients -------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Drift F, diffusion B and jump coefficient f, all batch-vectorised.

    Shapes: ``F(X)`` maps ``(..., dim) -> (..., dim)``; ``B(X)`` maps
    ``(..., dim) -> (..., dim, k_dim)``; ``f(V, X)`` takes the stacked atom
    marks ``V`` of shape ``(n_atoms, mark_dim)`` and returns
    ``(..., n_atoms, dim)``.
    """

    F: Callable
    B: Callable
    f: Callable
    dim: int
    k_dim: int
    growth_l: float
    lipschitz_K: float
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def jump(self, mark, x) -> np.ndarray:
        """f(mark, x) for a single mark."""
        mark = np.atleast_1d(np.asarray(mark, dtype=float))
        return self.f(mark[None, :], np.asarray(x, dtype=float))[..., 0, :]

    def jumps(self, levy: LevyMeasureSpec, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if levy.n_atoms == 0:
            return np.zeros(X.shape[:-1] + (0, self.dim))
        return self.f(levy.marks, X)

    def is_zero_gaussian(self, X) -> bool:
        return bool(np.all(self.B(np.asarray(X, dtype=float)) == 0))


def _vec(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise SolverError(f"{name} must be a scalar or have length {n}")
    return v


def linear_coefficients(dim: int, qspec: QWienerSpec, levy: LevyMeasureSpec, a=0.0, G=0.0,
                        c=0.0, F0=0.0, G0=0.0, c0=0.0, f0=0.0, growth_l: float | None = None,
                        lipschitz_K: float | None = None) -> CoefficientSet:
    """Built-in linear/affine catalogue.

    F(x) = a*x + F0,  B(x)[k, j] = G[k, j] x_k + G0[k, j],
    f(v, x) = <c, v> x + <c0, v> f0.

    ``G``/``G0`` may be scalars (placed on the diagonal when k_dim == dim,
    otherwise broadcast to every entry) or full (dim, k_dim) arrays. When
    the growth or Lipschitz constants are not declared, a valid bound is
    computed from the parameters.
    """
    k_dim, mark_dim = qspec.k_dim, levy.mark_dim
    a, F0, f0 = _vec(a, dim, "a"), _vec(F0, dim, "F0"), _vec(f0, dim, "f0")

    def _mat(g, name):
        g = np.asarray(g, dtype=float)
        if g.ndim == 0:
            return np.eye(dim, k_dim) * float(g) if k_dim == dim else np.full((dim, k_dim), float(g))
        if g.shape != (dim, k_dim):
            raise SolverError(f"{name} must be a scalar or a ({dim}, {k_dim}) array")
        return g

    G, G0 = _mat(G, "G"), _mat(G0, "G0")
    c, c0 = _vec(c, mark_dim, "c"), _vec(c0, mark_dim, "c0")

    def F(X):
        return a * X + F0

    def B(X):
        return G * X[..., :, None] + G0

    def f(V, X):
        lin = V @ c
        aff = V @ c0
        return lin[:, None] * X[..., None, :] + aff[:, None] * f0

    lam = qspec.q_eigenvalues
    w = levy.masses
    lin_jump = float(np.sum(w * (levy.marks @ c) ** 2)) if levy.n_atoms else 0.0
    aff_jump = float(np.sum(w * (levy.marks @ c0) ** 2)) * float(f0 @ f0) if levy.n_atoms else 0.0
    lin_B = float(np.max(G**2 @ lam))
    aff_B = float(np.sum(G0**2 @ lam))
    lin_F = float(np.max(a**2))
    aff_F = float(F0 @ F0)
    K = lin_F + lin_B + lin_jump
    if growth_l is None:
        has_affine = (aff_F + aff_B + aff_jump) > 0
        factor = 2.0 if has_affine else 1.0
        growth_l = max(factor * K, factor * (aff_F + aff_B + aff_jump), 1e-300)
    if lipschitz_K is None:
        lipschitz_K = max(K, 1e-300)
    params = dict(a=a, G=G, c=c, F0=F0, G0=G0, c0=c0, f0=f0)
    return CoefficientSet(F, B, f, dim, k_dim, float(growth_l), float(lipschitz_K),
                          "linear", params)


def zero_coefficients(dim: int, k_dim: int = 1) -> CoefficientSet:
    return CoefficientSet(
        F=lambda X: np.zeros_like(X),
        B=lambda X: np.zeros(np.shape(X) + (k_dim,)),
        f=lambda V, X: np.zeros(np.shape(X)[:-1] + (len(V), dim)),
        dim=dim, k_dim=k_dim, growth_l=1e-300, lipschitz_K=1e-300, name="zero",
    )


@dataclass
class AssumptionAudit:
    max_growth_ratio: float
    max_lipschitz_ratio: float
    worst_growth_point: np.ndarray
    worst_lipschitz_pair: tuple
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_growth_ratio <= 1.0 + 1e-12 and self.max_lipschitz_ratio <= 1.0 + 1e-12

    def to_dict(self) -> dict:
        return {
            "max_growth_ratio": self.max_growth_ratio,
            "max_lipschitz_ratio": self.max_lipschitz_ratio,
            "samples": self.samples,
            "passed": self.passed,
        }


def growth_quantity(coeffs: CoefficientSet, qspec: QWienerSpec, levy: LevyMeasureSpec, X):
    """|F(x)|^2 + tr(B Q B*) + sum_i mass_i |f(mark_i, x)|^2, vectorised."""
    X = np.asarray(X, dtype=float)
    Fx = coeffs.F(X)
    Bx = coeffs.B(X)
    tr = np.einsum("...kj,...kj,j->...", Bx, Bx, qspec.q_eigenvalues)
    jump = np.einsum("...ad,...ad,a->...", *(2 * [coeffs.jumps(levy, X)]), levy.masses)
    return np.sum(Fx**2, axis=-1) + tr + jump


def audit_assumptions(coeffs: CoefficientSet, qspec: QWienerSpec, levy: LevyMeasureSpec,
                      samples: int = 1000, radius: float = 10.0, seed: int = 0) -> AssumptionAudit:
    """Sample the linear-growth and Lipschitz bounds at random points and pairs.

    Points are drawn with random directions and radii log-uniform up to
    ``radius`` (plus the origin), so both the constant and the quadratic
    part of each bound are probed.
    """
    rng = np.random.default_rng(seed)
    d = coeffs.dim

    def points(n):
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * 10.0 ** rng.uniform(-3, 0, n)
        p = u * r[:, None]
        p[0] = 0.0
        return p

    X = points(samples)
    g = growth_quantity(coeffs, qspec, levy, X)
    growth = g / (coeffs.growth_l * (1.0 + np.sum(X**2, axis=1)))
    Y = X + points(samples) * rng.uniform(0.01, 1.0, (samples, 1))
    diff_F = coeffs.F(X) - coeffs.F(Y)
    dB = coeffs.B(X) - coeffs.B(Y)
    dtr = np.einsum("...kj,...kj,j->...", dB, dB, qspec.q_eigenvalues)
    dj = coeffs.jumps(levy, X) - coeffs.jumps(levy, Y)
    djump = np.einsum("...ad,...ad,a->...", dj, dj, levy.masses)
    num = np.sum(diff_F**2, axis=1) + dtr + djump
    den = coeffs.lipschitz_K * np.sum((X - Y) ** 2, axis=1)
    lip = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    gi, li = int(np.argmax(growth)), int(np.argmax(lip))
    return AssumptionAudit(float(growth[gi]), float(lip[li]), X[gi], (X[li], Y[li]), samples)


# -- schemes -----------------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    kind: str = "mild_exponential"
    n: float | None = None
    iterations: int | None = None

    def __post_init__(self):
        if self.kind not in ("mild_exponential", "yosida_strong", "picard"):
            raise SolverError(f"unknown scheme {self.kind!r}")
        if self.kind == "yosida_strong" and self.n is None:
            raise SolverError("yosida_strong needs a Yosida index n")
        if self.kind == "picard" and (self.iterations is None or self.iterations < 1):
            raise SolverError("picard needs iterations >= 1")

    @classmethod
    def mild(cls) -> "Scheme":
        return cls("mild_exponential")

    @classmethod
    def yosida(cls, n: float) -> "Scheme":
        return cls("yosida_strong", n=float(n))

    @classmethod
    def picard(cls, iterations: int) -> "Scheme":
        return cls("picard", iterations=int(iterations))

    def label(self) -> str:
        if self.kind == "yosida_strong":
            return f"yosida_strong(n={self.n:g})"
        if self.kind == "picard":
            return f"picard({self.iterations})"
        return self.kind


@dataclass
class PathState:
    """Discrete trajectories, ``states[p, m]`` = X_p(t_m)."""

    t_grid: np.ndarray
    states: np.ndarray
    noise: NoiseBatch
    scheme: Scheme
    picard_distances: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def X(self) -> np.ndarray:
        """Trajectory array (M+1, dim) for a single path, else the full stack."""
        return self.states[0] if self.n_paths == 1 else self.states

    def path(self, p: int) -> "PathState":
        return PathState(self.t_grid, self.states[p:p + 1], NoiseBatch.from_paths([self.noise.paths[p]]),
                         self.scheme, self.picard_distances)

    def to_csv(self, p: int = 0) -> str:
        dim = self.states.shape[2]
        lines = [",".join(["t"] + [f"coeff{k + 1}" for k in range(dim)])]
        for m, t in enumerate(self.t_grid):
            lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in self.states[p, m]]))
        return "\n".join(lines) + "\n"


def _increment(space: SpectralSpace, coeffs: CoefficientSet, levy: LevyMeasureSpec, X, dt,
               dW, counts, F_weight=None):
    """Bracketed increment of one step, before S(dt) and without x itself.

    ``F_weight`` replaces the drift factor ``dt`` by a diagonal quadrature
    weight (used by the Picard map).
    """
    drift = coeffs.F(X) * (dt if F_weight is None else F_weight)
    noise = np.einsum("...kj,...j->...k", coeffs.B(X), dW)
    if levy.n_atoms:
        fx = coeffs.jumps(levy, X)
        w = counts - dt * levy.masses
        noise = noise + np.einsum("...a,...ad->...d", w, fx)
    return drift, noise


def step_mild(space: SpectralSpace, coeffs: CoefficientSet, levy: LevyMeasureSpec, x, dt: float,
              dW_row, jump_counts, yosida: YosidaIndex | None = None) -> np.ndarray:
    """One exponential-Euler step. ``jump_counts[..., i]`` = events of atom i in the step."""
    if not dt > 0:
        raise SolverError("dt must be positive")
    x = space.check(x)
    dW_row = np.asarray(dW_row, dtype=float)
    jump_counts = np.asarray(jump_counts, dtype=float)
    if dW_row.shape[-1] != coeffs.k_dim:
        raise SolverError(f"dW row has {dW_row.shape[-1]} entries, coefficients expect {coeffs.k_dim}")
    if jump_counts.shape[-1] != levy.n_atoms:
        raise SolverError(f"jump counts have {jump_counts.shape[-1]} atoms, Levy spec has {levy.n_atoms}")
    if coeffs.dim != space.dim:
        raise SolverError("coefficient and space dimensions differ")
    drift, noise = _increment(space, coeffs, levy, x, dt, dW_row, jump_counts)
    inc = drift + noise
    if yosida is not None:
        inc = yosida.R_diag * inc
    return semigroup_diag(space, dt) * (x + inc)


def _check_inputs(space, coeffs, levy, noise: NoiseBatch):
    if coeffs.dim != space.dim:
        raise SolverError(f"coefficients have dim {coeffs.dim}, space has {space.dim}")
    if noise.dW.shape[2] != coeffs.k_dim:
        raise SolverError(f"noise has k_dim {noise.dW.shape[2]}, coefficients expect {coeffs.k_dim}")
    if noise.counts.shape[2] != levy.n_atoms:
        raise SolverError("noise path and Levy spec disagree on the number of atoms")


def simulate_path(space: SpectralSpace, coeffs: CoefficientSet, levy: LevyMeasureSpec, x0,
                  noise, scheme: Scheme | None = None) -> PathState:
    """Trajectory of every path in ``noise`` on its grid, for the given scheme."""
    scheme = scheme or Scheme.mild()
    if scheme.kind == "picard":
        return picard_solve(space, coeffs, levy, x0, noise, scheme.iterations)
    batch = as_batch(noise)
    _check_inputs(space, coeffs, levy, batch)
    x0 = space.check(x0)
    if not np.all(np.isfinite(x0)):
        raise SolverError("initial condition must be finite")
    yos = space.yosida(scheme.n) if scheme.kind == "yosida_strong" else None
    t = batch.t_grid
    P, M = batch.n_paths, batch.M
    out = np.empty((P, M + 1, space.dim))
    out[:, 0] = np.broadcast_to(x0, (P, space.dim))
    dts = np.diff(t)
    uniform = np.allclose(dts, dts[0], rtol=1e-12, atol=0)
    S = semigroup_diag(space, dts[0]) if uniform else None
    x = out[:, 0]
    # overflow surfaces as a BlowUpError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(M):
            dt = dts[m]
            drift, noise_inc = _increment(space, coeffs, levy, x, dt, batch.dW[:, m], batch.counts[:, m])
            inc = drift + noise_inc
            if yos is not None:
                inc = yos.R_diag * inc
            x = (S if uniform else semigroup_diag(space, dt)) * (x + inc)
            if not np.all(np.isfinite(x)):
                bad = np.where(~np.all(np.isfinite(x), axis=1))[0]
                raise BlowUpError(m + 1, float(t[m + 1]), bad.tolist(), scheme.label())
            out[:, m + 1] = x
    return PathState(t, out, batch, scheme)


def _picard_map(space, coeffs, levy, x0, batch: NoiseBatch, xi: np.ndarray) -> np.ndarray:
    """Discretised mild map applied to a whole candidate path ``xi``.

    The deterministic convolution uses the exact weight int S(t_{m+1}-s) ds
    over each step with F frozen at the left node; the stochastic
    convolutions use left-point weights S(t_{m+1} - t_m). It therefore
    differs from the exponential-Euler path at O(dt) and converges to the
    same limit.
    """
    t = batch.t_grid
    dts = np.diff(t)
    out = np.empty_like(xi)
    out[:, 0] = x0
    z = out[:, 0]
    for m in range(batch.M):
        dt = dts[m]
        S = semigroup_diag(space, dt)
        drift, noise = _increment(space, coeffs, levy, xi[:, m], dt, batch.dW[:, m],
                                  batch.counts[:, m], F_weight=phi1_diag(space, dt))
        z = S * (z + noise) + drift
        out[:, m + 1] = z
    return out


def picard_solve(space: SpectralSpace, coeffs: CoefficientSet, levy: LevyMeasureSpec, x0, noise,
                 iterations: int, tol: float = 0.0) -> PathState:
    """Fixed-point iteration of the discretised mild map from the constant path x0.

    ``picard_distances[k]`` is the largest sup-over-grid distance between
    iterates k and k+1 across paths. Raises ``PicardDivergenceError`` when
    the iteration ends with distances larger than where it started.
    """
    if iterations < 1:
        raise SolverError("need at least one Picard iteration")
    batch = as_batch(noise)
    _check_inputs(space, coeffs, levy, batch)
    x0 = space.check(x0)
    xi = np.broadcast_to(x0, (batch.n_paths, batch.M + 1, space.dim)).copy()
    dists = []
    for _ in range(iterations):
        new = _picard_map(space, coeffs, levy, x0, batch, xi)
        if not np.all(np.isfinite(new)):
            raise PicardDivergenceError(dists + [float("inf")])
        d = float(np.max(np.linalg.norm(new - xi, axis=2)))
        dists.append(d)
        xi = new
        if d <= tol:
            break
    if len(dists) >= 3 and dists[-1] > dists[0] and dists[-1] > dists[-2]:
        raise PicardDivergenceError(dists)
    return PathState(batch.t_grid, xi, batch, Scheme.picard(iterations), dists)


# -- Yosida convergence --------------------------------------------------------


@dataclass
class ConvergenceReport:
    n_values: list
    sup_errors: list
    stderrs: list
    paired_diffs: list
    paired_stderrs: list
    n_paths: int
    base_seed: int
    z_crit: float = 1.96

    @property
    def ci(self) -> list:
        return [(e - self.z_crit * s, e + self.z_crit * s) for e, s in zip(self.sup_errors, self.stderrs)]

    @property
    def strictly_decreasing(self) -> bool:
        e = self.sup_errors
        return all(e[i + 1] < e[i] for i in range(len(e) - 1))

    @property
    def endpoints_separated(self) -> bool:
        lo_first = self.ci[0][0]
        hi_last = self.ci[-1][1]
        return hi_last < lo_first

    @property
    def all_zero(self) -> bool:
        return all(e == 0.0 for e in self.sup_errors)

    @property
    def verdict(self) -> str:
        if self.all_zero:
            return "exact"
        if self.strictly_decreasing and self.endpoints_separated:
            return "decreasing"
        return "inconclusive"

    def to_dict(self) -> dict:
        return {
            "n_values": self.n_values, "sup_errors": self.sup_errors, "stderrs": self.stderrs,
            "paired_diffs": self.paired_diffs, "paired_stderrs": self.paired_stderrs,
            "n_paths": self.n_paths, "base_seed": self.base_seed, "verdict": self.verdict,
        }


def sup_sq_distance(a: PathState, b: PathState) -> np.ndarray:
    """Per-path sup over the grid of |X_a(t) - X_b(t)|^2."""
    return np.max(np.sum((a.states - b.states) ** 2, axis=2), axis=1)


def yosida_convergence_study(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                             levy: LevyMeasureSpec, x0, T: float, M: int, n_values, n_paths: int,
                             base_seed: int) -> ConvergenceReport:
    """MC estimate of E sup_t |X_n(t) - X(t)|^2 for each n, on common noise."""
    n_values = [float(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise SolverError("n_values must be strictly increasing")
    for n in n_values:
        space.yosida(n)
    noise = make_noise_batch(qspec, levy, uniform_grid(T, M), base_seed, n_paths)
    ref = simulate_path(space, coeffs, levy, x0, noise, Scheme.mild())
    per_path = [sup_sq_distance(simulate_path(space, coeffs, levy, x0, noise, Scheme.yosida(n)), ref)
                for n in n_values]
    root = np.sqrt(n_paths)
    errs = [float(e.mean()) for e in per_path]
    ses = [float(e.std(ddof=1) / root) if n_paths > 1 else 0.0 for e in per_path]
    diffs, dses = [], []
    for e0, e1 in zip(per_path, per_path[1:]):
        d = e0 - e1
        diffs.append(float(d.mean()))
        dses.append(float(d.std(ddof=1) / root) if n_paths > 1 else 0.0)
    return ConvergenceReport(n_values, errs, ses, diffs, dses, int(n_paths), int(base_seed))
