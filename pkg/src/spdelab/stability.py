"""Lyapunov audits and Monte-Carlo certification of mean-square stability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ito import TestFunction, eval_generator, quadratic, ds_integral
from .noise import LevyMeasureSpec, QWienerSpec, make_noise_batch, uniform_grid
from .solver import CoefficientSet, PathState, Scheme, simulate_path
from .spectral import SpectralSpace


class StabilityError(ValueError):
    pass


ROUNDING_RTOL = 1e-12


@dataclass(frozen=True)
class LyapunovSpec:
    psi: TestFunction
    c1: float
    c2: float
    c3: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    mode: str = "stability"

    def __post_init__(self):
        if self.mode not in ("stability", "ultimate_bound"):
            raise StabilityError(f"unknown mode {self.mode!r}")
        if self.psi.time_dependent:
            raise StabilityError("a Lyapunov function must not depend on time")
        for name in ("c1", "c2", "c3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise StabilityError(f"{name} must be positive, got {v!r}")
        for name in ("k1", "k2", "k3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise StabilityError(f"{name} must be nonnegative, got {v!r}")
        if self.mode == "stability" and (self.k1 or self.k2 or self.k3):
            raise StabilityError("the stability mode has no offsets; use ultimate_bound")

    @property
    def c(self) -> float:
        return self.c2 / self.c1

    @property
    def beta(self) -> float:
        return self.c3

    @property
    def M(self) -> float:
        if self.mode == "stability":
            return 0.0
        return (self.k1 + self.k3 / self.c3) / self.c1

    def bound(self, t, x0_sq: float) -> np.ndarray:
        return self.c * np.exp(-self.beta * np.asarray(t, dtype=float)) * x0_sq + self.M

    def to_dict(self) -> dict:
        return {"psi": self.psi.name, "mode": self.mode, "c1": self.c1, "c2": self.c2, "c3": self.c3,
                "k1": self.k1, "k2": self.k2, "k3": self.k3, "c": self.c, "beta": self.beta, "M": self.M}


def _sample_ball(dim: int, n: int, radius: float, rng) -> np.ndarray:
    """Random directions with log-uniform radii, plus the origin and scaled axes."""
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u * (radius * 10.0 ** rng.uniform(-3, 0, n))[:, None]
    axes = np.concatenate([np.eye(dim), -np.eye(dim)]) * radius
    half = axes * 0.5
    return np.concatenate([np.zeros((1, dim)), axes, half, pts])


@dataclass
class LyapunovAudit:
    worst_margin: float
    worst_x: np.ndarray
    sandwich_ok: bool
    sandwich_violation: np.ndarray | None
    samples: int
    radius: float
    mode: str

    @property
    def passed(self) -> bool:
        return self.sandwich_ok and self.worst_margin <= 0.0

    @property
    def counterexample(self) -> np.ndarray | None:
        if self.passed:
            return None
        return self.worst_x if self.worst_margin > 0 else self.sandwich_violation

    @property
    def label(self) -> str:
        return "certified on sampled region" if self.passed else "violated"

    def to_dict(self) -> dict:
        ce = self.counterexample
        return {"worst_margin": self.worst_margin, "sandwich_ok": self.sandwich_ok,
                "samples": self.samples, "radius": self.radius, "mode": self.mode,
                "passed": self.passed, "label": self.label,
                "counterexample": None if ce is None else [float(v) for v in ce]}


def lyapunov_audit(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                   levy: LevyMeasureSpec, lspec: LyapunovSpec, sample_count: int = 1000,
                   radius: float = 10.0, seed: int = 0) -> LyapunovAudit:
    """Check the sandwich bounds and L Psi <= -c3 Psi + k3 at sampled x.

    The margin at x is L Psi + c3 Psi - k3 after subtracting a rounding
    allowance of 1e-12 times the size of the terms, so a bound attained
    with equality (e.g. along the first eigenvector) is not reported as a
    violation.
    """
    rng = np.random.default_rng(seed)
    X = _sample_ball(space.dim, sample_count, radius, rng)
    psi = lspec.psi
    P = psi.value(0.0, X)
    L = eval_generator(space, coeffs, qspec, levy, psi, 0.0, X).total
    raw = L + lspec.c3 * P - lspec.k3
    slack = ROUNDING_RTOL * (np.abs(L) + lspec.c3 * np.abs(P) + lspec.k3)
    margin = raw - slack
    i = int(np.argmax(margin))
    sq = np.sum(X * X, axis=1)
    lo = lspec.c1 * sq - lspec.k1
    hi = lspec.c2 * sq - lspec.k2
    tol = ROUNDING_RTOL * (np.abs(P) + 1.0)
    bad = (P < lo - tol) | (P > hi + tol)
    viol = X[int(np.argmax(bad))] if bad.any() else None
    return LyapunovAudit(float(margin[i]), X[i], not bad.any(), viol, X.shape[0], float(radius),
                         lspec.mode)


@dataclass
class MomentCurve:
    t_grid: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    n_paths: int
    base_seed: int

    def to_csv(self, bound=None) -> str:
        head = "t,estimate,stderr" + (",bound" if bound is not None else "")
        rows = [head]
        for i, t in enumerate(self.t_grid):
            vals = [t, self.estimate[i], self.stderr[i]] + ([bound[i]] if bound is not None else [])
            rows.append(",".join(repr(float(v)) for v in vals))
        return "\n".join(rows) + "\n"


def _path_chunks(n_paths: int, M: int, dim: int, budget: float = 2e6):
    size = max(1, min(n_paths, int(budget // max(1, (M + 1) * dim))))
    for a in range(0, n_paths, size):
        yield a, min(n_paths, a + size)


def simulate_functional(space, coeffs, qspec, levy, x0, t_grid, n_paths, base_seed,
                        functional: Callable[[PathState], np.ndarray], scheme=None) -> np.ndarray:
    """Per-path values of ``functional(path)`` simulated in memory-bounded path chunks.

    Path p always uses seed stream (base_seed, p), so the result does not
    depend on the chunking.
    """
    M = len(t_grid) - 1
    out = []
    for a, b in _path_chunks(n_paths, M, space.dim):
        noise = make_noise_batch(qspec, levy, t_grid, base_seed, b - a, start=a)
        out.append(functional(simulate_path(space, coeffs, levy, x0, noise, scheme or Scheme.mild())))
    return np.concatenate(out, axis=0)


def mc_second_moment(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                     levy: LevyMeasureSpec, x0, T: float, M: int, n_paths: int,
                     base_seed: int) -> MomentCurve:
    """MC estimate of E|X(t)|^2 at every grid node."""
    if n_paths < 100:
        raise StabilityError("use at least 100 paths for a moment estimate")
    t = uniform_grid(T, M)
    sq = simulate_functional(space, coeffs, qspec, levy, x0, t, n_paths, base_seed,
                             lambda p: np.sum(p.states**2, axis=2))
    est = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(n_paths)
    return MomentCurve(t, est, se, n_paths, base_seed)


def fit_decay_rate(curve: MomentCurve) -> float:
    """OLS slope of -log(estimate) on the nodes where estimate > 10 stderr."""
    ok = (curve.estimate > 10 * curve.stderr) & (curve.estimate > 0)
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(curve.t_grid[ok], np.log(curve.estimate[ok]), 1)[0]
    return float(-slope)


@dataclass
class StabilityReport:
    curve: MomentCurve
    bound_curve: np.ndarray
    fitted_decay_rate: float
    lspec: LyapunovSpec
    audit: LyapunovAudit
    z: float = 3.0

    @property
    def t_grid(self):
        return self.curve.t_grid

    @property
    def excess(self) -> np.ndarray:
        """estimate - bound - 3 stderr - rounding allowance, per node (pass iff all <= 0)."""
        c = self.curve
        guard = ROUNDING_RTOL * np.abs(self.bound_curve)
        return c.estimate - self.bound_curve - self.z * c.stderr - guard

    @property
    def passed(self) -> bool:
        return bool(np.all(self.excess <= 0))

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def limsup_ok(self, tail: float = 0.25) -> bool:
        """Tail of the moment curve under M + 3 stderr."""
        c = self.curve
        k = max(1, int(len(c.t_grid) * tail))
        return bool(np.all(c.estimate[-k:] <= self.lspec.M + self.z * c.stderr[-k:]))

    def to_csv(self) -> str:
        return self.curve.to_csv(self.bound_curve)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "fitted_decay_rate": self.fitted_decay_rate,
                "constants": self.lspec.to_dict(), "audit": self.audit.to_dict(),
                "n_paths": self.curve.n_paths, "base_seed": self.curve.base_seed,
                "max_excess": float(np.max(self.excess))}


def certify_stability(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                      levy: LevyMeasureSpec, lspec: LyapunovSpec, x0, T: float, M: int,
                      n_paths: int, seed: int, audit_samples: int = 1000,
                      audit_radius: float = 10.0) -> StabilityReport:
    """Run the Lyapunov audit, then compare the MC moment curve with the implied bound."""
    audit = lyapunov_audit(space, coeffs, qspec, levy, lspec, audit_samples, audit_radius, seed)
    if not audit.passed:
        raise StabilityError(
            f"Lyapunov audit failed (worst margin {audit.worst_margin:.3g}); refusing to certify")
    curve = mc_second_moment(space, coeffs, qspec, levy, x0, T, M, n_paths, seed)
    x0 = np.asarray(x0, dtype=float)
    bound = lspec.bound(curve.t_grid, float(x0 @ x0))
    return StabilityReport(curve, bound, fit_decay_rate(curve), lspec, audit)


# -- supermartingale and weak generator ---------------------------------------------


@dataclass
class GeneratorBoundAudit:
    worst_margin: float
    worst_x: np.ndarray

    @property
    def passed(self) -> bool:
        return self.worst_margin <= 0


def generator_bound_audit(space, coeffs, qspec, levy, psi, U, sample_count=1000, radius=10.0,
                          seed=0) -> GeneratorBoundAudit:
    """max over samples of L Psi(x) - U(x) (with the rounding allowance)."""
    X = _sample_ball(space.dim, sample_count, radius, np.random.default_rng(seed))
    L = eval_generator(space, coeffs, qspec, levy, psi, 0.0, X).total
    u = U(X)
    m = L - u - ROUNDING_RTOL * (np.abs(L) + np.abs(u))
    i = int(np.argmax(m))
    return GeneratorBoundAudit(float(m[i]), X[i])


@dataclass
class SupermartingaleReport:
    t_pairs: list
    differences: list
    stderrs: list
    expectations: list
    audit: GeneratorBoundAudit
    z: float = 3.0

    @property
    def pair_passed(self) -> list:
        out = []
        for d, se, (e_s, e_t) in zip(self.differences, self.stderrs, self.expectations):
            guard = ROUNDING_RTOL * (abs(e_s) + abs(e_t))
            out.append(d <= self.z * se + guard)
        return out

    @property
    def passed(self) -> bool:
        return all(self.pair_passed)

    @property
    def strictly_decreasing(self) -> bool:
        return all(e_t < e_s for e_s, e_t in self.expectations)

    def to_dict(self) -> dict:
        return {"t_pairs": [list(p) for p in self.t_pairs], "differences": self.differences,
                "stderrs": self.stderrs, "passed": self.passed,
                "audit_worst_margin": self.audit.worst_margin}


def supermartingale_check(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                          levy: LevyMeasureSpec, psi: TestFunction, x0, t_pairs, n_paths: int,
                          seed: int, U: Callable | None = None, dt: float = 1e-3,
                          audit_samples: int = 1000, audit_radius: float = 10.0) -> SupermartingaleReport:
    """E Psi(X_t) - E Psi(X_s) - E int_s^t U(X_u) du <= 3 stderr for each pair s < t.

    ``U = None`` means U = 0. The pairs must lie on the grid of step dt.
    """
    U = U or (lambda X: np.zeros(np.shape(X)[:-1]))
    audit = generator_bound_audit(space, coeffs, qspec, levy, psi, U, audit_samples, audit_radius, seed)
    if not audit.passed:
        raise StabilityError(f"L Psi <= U fails at sampled x (margin {audit.worst_margin:.3g})")
    pairs = [(float(s), float(t)) for s, t in t_pairs]
    T = max(t for _, t in pairs)
    M = int(round(T / dt))
    grid = uniform_grid(T, M)
    idx = []
    for s, t in pairs:
        if not 0 <= s < t:
            raise StabilityError(f"need 0 <= s < t, got ({s}, {t})")
        i, j = int(round(s / dt)), int(round(t / dt))
        if abs(i * dt - s) > 1e-9 * max(1.0, T) or abs(j * dt - t) > 1e-9 * max(1.0, T):
            raise StabilityError(f"pair ({s}, {t}) is not on the grid of step {dt}")
        idx.append((i, j))

    def functional(path: PathState):
        vals = psi.value(0.0, path.states)
        cols = []
        for i, j in idx:
            sub = PathState(path.t_grid[i:j + 1], path.states[:, i:j + 1], path.noise, path.scheme)
            integral = ds_integral(space, sub, lambda s, y: U(y))
            cols.append(np.stack([vals[:, i], vals[:, j], vals[:, j] - vals[:, i] - integral], axis=1))
        return np.stack(cols, axis=1)

    data = simulate_functional(space, coeffs, qspec, levy, x0, grid, n_paths, seed, functional)
    root = np.sqrt(n_paths)
    diffs = [float(data[:, k, 2].mean()) for k in range(len(pairs))]
    ses = [float(data[:, k, 2].std(ddof=1) / root) if n_paths > 1 else 0.0 for k in range(len(pairs))]
    exps = [(float(data[:, k, 0].mean()), float(data[:, k, 1].mean())) for k in range(len(pairs))]
    return SupermartingaleReport(pairs, diffs, ses, exps, audit)


@dataclass
class WeakGeneratorReport:
    dt_values: list
    estimates: list
    stderrs: list
    generator_value: float
    z_floor: float = 2.0

    @property
    def gaps(self) -> list:
        return [abs(e - self.generator_value) for e in self.estimates]

    @property
    def noise_floors(self) -> list:
        return [self.z_floor * s for s in self.stderrs]

    @property
    def observed_orders(self) -> list:
        g, d = self.gaps, self.dt_values
        out = []
        for i in range(len(g) - 1):
            if g[i] > 0 and g[i + 1] > 0:
                out.append(float(np.log(g[i] / g[i + 1]) / np.log(d[i] / d[i + 1])))
            else:
                out.append(float("nan"))
        return out

    @property
    def decreasing_to_floor(self) -> bool:
        """Gaps decrease with dt for as long as they stay above the noise floor."""
        g, f = self.gaps, self.noise_floors
        for i in range(len(g) - 1):
            if g[i] <= f[i]:
                return True
            if not g[i + 1] < g[i] and g[i + 1] > f[i + 1]:
                return False
        return True

    def to_dict(self) -> dict:
        return {"dt_values": self.dt_values, "estimates": self.estimates, "stderrs": self.stderrs,
                "gaps": self.gaps, "noise_floors": self.noise_floors,
                "observed_orders": self.observed_orders, "generator_value": self.generator_value,
                "decreasing_to_floor": self.decreasing_to_floor}


def weak_generator_limit(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                         levy: LevyMeasureSpec, psi: TestFunction, x, dt_values, n_paths: int,
                         seed: int, chunk: int = 4096) -> WeakGeneratorReport:
    """MC difference quotients (P_dt Psi(x) - Psi(x)) / dt against L Psi(0, x).

    One exponential-Euler step per sample. The exactly mean-zero martingale
    increments <Psi_x(x), B(x) dW> and sum_i (Psi(x + f_i) - Psi(x))(N_i - m_i dt)
    are subtracted as control variates; this leaves the expectation unchanged.
    """
    dts = [float(d) for d in dt_values]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise StabilityError("dt_values must be strictly decreasing")
    x = space.check(np.asarray(x, dtype=float))
    psi0 = float(psi.value(0.0, x))
    g = psi.grad(0.0, x)
    Bx = coeffs.B(x)
    jump_diff = (psi.value(0.0, x[None, :] + coeffs.jumps(levy, x)) - psi0) if levy.n_atoms else None
    L = float(eval_generator(space, coeffs, qspec, levy, psi, 0.0, x).total)
    ests, ses = [], []
    for i, dt in enumerate(dts):
        vals = []
        for a in range(0, n_paths, chunk):
            b = min(n_paths, a + chunk)
            noise = make_noise_batch(qspec, levy, np.array([0.0, dt]), seed, b - a, start=i * n_paths + a)
            path = simulate_path(space, coeffs, levy, x, noise, Scheme.mild())
            dW = noise.dW[:, 0]
            cv = dW @ (g @ Bx)
            if levy.n_atoms:
                cv = cv + (noise.counts[:, 0] - dt * levy.masses) @ jump_diff
            vals.append((psi.value(dt, path.states[:, 1]) - psi0 - cv) / dt)
        v = np.concatenate(vals)
        ests.append(float(v.mean()))
        ses.append(float(v.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0)
    return WeakGeneratorReport(dts, ests, ses, L)


# -- bundled heat example (l-family) -------------------------------------------


def example4_setup(l: float = 1.0, dim: int = 32):
    """Heat-equation example with multiplicative Q-Wiener and scalar-mark jump noise.

    B(x) = sqrt(l) diag(0.4 x_k + 0.3), Q eigenvalues 1/k^2, one jump atom of
    mass 1 at mark 1 with f(v, x) = 0.5 sqrt(l) v x. Then
    tr(B Q B*) + |f|^2 <= l (0.57 |x|^2 + 0.3), inside l (1 + |x|^2).
    """
    from .noise import QWienerSpec as Q, LevyMeasureSpec as Lv
    from .solver import linear_coefficients

    space = SpectralSpace.heat_dirichlet(dim)
    k = np.arange(1, dim + 1, dtype=float)
    qspec = Q(1.0 / k**2)
    levy = Lv.single([1.0], 1.0)
    r = np.sqrt(l)
    coeffs = linear_coefficients(dim, qspec, levy, a=0.0, G=0.4 * r, G0=0.3 * r, c=0.5 * r,
                                 growth_l=l)
    return space, qspec, levy, coeffs


def example4_lyapunov(l: float = 1.0) -> LyapunovSpec:
    """Psi = |x|^2 with L Psi <= (-2 pi^2 + 3 l) Psi + 3 l, valid while pi^2 > 3l/2."""
    c3 = 2 * np.pi**2 - 3 * l
    if not c3 > 0:
        raise StabilityError(f"l = {l:g} violates pi^2 > 3l/2; no decay constant is available")
    return LyapunovSpec(quadratic(), 1.0, 1.0, c3, 0.0, 0.0, 3 * l, "ultimate_bound")


def example4_U(l: float = 1.0) -> Callable:
    c = -2 * np.pi**2 + 3 * l
    return lambda X: c * np.sum(X * X, axis=-1) + 3 * l
