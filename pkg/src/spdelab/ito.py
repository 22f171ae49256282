"""Generators and pathwise residuals of Ito-type formulas on recorded noise.

Every residual is assembled along a simulated ``PathState`` from the same
ingredients:

* ds-integrals use Gauss-Legendre nodes inside each step (more nodes for
  stiff spectra), evaluated on the
  semigroup interpolant ``y(s) = S(s - t_m) X_m`` (for A = 0 this is the
  left-endpoint state, for F = B = f = 0 it is the exact flow);
* the Wiener integral is the left-point sum of <Psi_x(t_m, X_m), B(X_m) dW_m>;
* the jump integral against the compensated measure is the sum over realised
  events of Psi(X_m + f) - Psi(X_m) minus its analytic compensator.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .noise import LevyMeasureSpec, QWienerSpec, make_noise_batch, uniform_grid
from .solver import CoefficientSet, PathState, Scheme, simulate_path
from .spectral import SpectralSpace, YosidaIndex, semigroup_diag


class ItoError(ValueError):
    pass


FORMULAS = ("strong", "yosida", "mild", "ichikawa", "semigroup_mild")


# -- test functions -----------------------------------------------------------


def _s_like(s, x):
    return np.broadcast_to(np.asarray(s, dtype=float), np.shape(x)[:-1])


@dataclass(frozen=True)
class TestFunction:
    """A C^{1,2} function Psi(s, x) with its derivatives, batch-vectorised.

    ``value`` and ``d_s`` return shape ``x.shape[:-1]``, ``grad`` returns
    ``x.shape`` and ``hess`` returns ``x.shape + (dim,)``. ``s`` is a scalar
    or broadcasts against ``x.shape[:-1]``. ``closure`` is an optional
    continuous extension of the generator, ``closure(s, x) -> value``.
    """

    __test__ = False

    name: str
    value: Callable
    d_s: Callable
    grad: Callable
    hess: Callable
    h1: Callable
    h2: Callable
    bounded: bool = False
    time_dependent: bool = False
    closure: Callable | None = None

    def with_closure(self, closure: Callable) -> "TestFunction":
        return replace(self, closure=closure)


def quadratic() -> TestFunction:
    """Psi(x) = |x|^2."""
    return TestFunction(
        "quadratic",
        value=lambda s, x: np.sum(x * x, axis=-1),
        d_s=lambda s, x: np.zeros(np.shape(x)[:-1]),
        grad=lambda s, x: 2.0 * x,
        hess=lambda s, x: np.broadcast_to(2.0 * np.eye(np.shape(x)[-1]), np.shape(x) + (np.shape(x)[-1],)),
        h1=lambda u: 2.0 * np.asarray(u, dtype=float),
        h2=lambda u: np.full_like(np.asarray(u, dtype=float), 2.0),
    )


def _weighted_quadratic(name, weight, d_weight, w_max, time_dependent=True) -> TestFunction:
    """Psi(s, x) = sum_k w_k(s) x_k^2 for a diagonal weight w(s) of shape (..., dim)."""

    def value(s, x):
        return np.sum(weight(_s_like(s, x), x) * x * x, axis=-1)

    def d_s(s, x):
        return np.sum(d_weight(_s_like(s, x), x) * x * x, axis=-1)

    def grad(s, x):
        return 2.0 * weight(_s_like(s, x), x) * x

    def hess(s, x):
        w = weight(_s_like(s, x), x)
        return 2.0 * w[..., :, None] * np.eye(np.shape(x)[-1])

    return TestFunction(
        name, value, d_s, grad, hess,
        h1=lambda u: 2.0 * w_max * np.asarray(u, dtype=float),
        h2=lambda u: np.full_like(np.asarray(u, dtype=float), 2.0 * w_max),
        time_dependent=time_dependent,
    )


def exp_weighted(c: float, T: float = 1.0) -> TestFunction:
    """Psi(s, x) = e^{cs} |x|^2; dominators valid for s in [0, T]."""
    c = float(c)
    w_max = np.exp(max(c, 0.0) * T)

    def weight(s, x):
        return np.exp(c * s)[..., None] * np.ones(np.shape(x)[-1])

    def d_weight(s, x):
        return c * weight(s, x)

    return _weighted_quadratic(f"exp_weighted(c={c:g})", weight, d_weight, w_max)


def semigroup_quadratic(space: SpectralSpace, t: float) -> TestFunction:
    """Psi(s, x) = <e^{(t-s)A} x, x>, a quadratic form propagated by the semigroup.

    Defined for all real s at finite truncation; dominators hold on [0, t].
    """
    mu = space.eigenvalues
    t = float(t)
    w_max = float(np.exp(t * max(float(mu.max()), 0.0)))

    def weight(s, x):
        return np.exp(np.multiply.outer(t - s, mu))

    def d_weight(s, x):
        return -mu * weight(s, x)

    psi = _weighted_quadratic(f"semigroup_quadratic(t={t:g})", weight, d_weight, w_max)

    def closure(s, x, coeffs, qspec, levy):
        # the three extended-generator terms written with e^{(t-s)A} Gamma_x, Gamma = |x|^2
        s = _s_like(s, x)
        w = weight(s, x)
        gx = 2.0 * w * x
        drift = np.sum(gx * coeffs.F(x), axis=-1) + np.sum(mu * gx * x, axis=-1)
        Bx = coeffs.B(x)
        trace = np.einsum("...k,...kj,...kj,j->...", w, Bx, Bx, qspec.q_eigenvalues)
        jump = 0.0
        if levy.n_atoms:
            fx = coeffs.jumps(levy, x)
            # Gamma(x + f) - Gamma(x) - <Gamma_x, f> = |f|^2, weighted by e^{(t-s)A}
            jump = np.einsum("...ad,...ad,...d,a->...", fx, fx, w, levy.masses)
        return drift + trace + jump

    return replace(psi, closure=closure)


def semigroup_weighted(space: SpectralSpace, c: float, l: float, T: float = 1.0) -> TestFunction:
    """Psi(s, x) = e^{cs} <e^{lA} x, x> with l >= 0."""
    if l < 0:
        raise ItoError("the semigroup lag l must be nonnegative")
    mu = space.eigenvalues
    c, l = float(c), float(l)
    base = np.exp(l * mu)
    w_max = float(np.exp(max(c, 0.0) * T) * base.max())

    def weight(s, x):
        return np.exp(c * s)[..., None] * base

    def d_weight(s, x):
        return c * weight(s, x)

    return _weighted_quadratic(f"semigroup_weighted(c={c:g},l={l:g})", weight, d_weight, w_max)


def gaussian_bump(sigma: float = 1.0) -> TestFunction:
    """Psi(x) = exp(-|x|^2 / (2 sigma^2)), bounded with bounded derivatives."""
    s2 = float(sigma) ** 2

    def value(s, x):
        return np.exp(-np.sum(x * x, axis=-1) / (2 * s2))

    def grad(s, x):
        return -(x / s2) * value(s, x)[..., None]

    def hess(s, x):
        d = np.shape(x)[-1]
        v = value(s, x)[..., None, None]
        return (x[..., :, None] * x[..., None, :] / s2**2 - np.eye(d) / s2) * v

    return TestFunction(
        f"gaussian_bump(sigma={sigma:g})", value,
        d_s=lambda s, x: np.zeros(np.shape(x)[:-1]),
        grad=grad, hess=hess,
        h1=lambda u: np.full_like(np.asarray(u, dtype=float), np.exp(-0.5) / np.sqrt(s2)),
        h2=lambda u: np.full_like(np.asarray(u, dtype=float), 1.0 / s2),
        bounded=True,
    )


def constant(c: float = 1.0) -> TestFunction:
    c = float(c)
    return TestFunction(
        f"constant({c:g})",
        value=lambda s, x: np.full(np.shape(x)[:-1], c),
        d_s=lambda s, x: np.zeros(np.shape(x)[:-1]),
        grad=lambda s, x: np.zeros(np.shape(x)),
        hess=lambda s, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        h1=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        h2=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        bounded=True,
        closure=lambda s, x, *args: np.zeros(np.shape(x)[:-1]),
    )


def linear(v) -> TestFunction:
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    return TestFunction(
        "linear",
        value=lambda s, x: x @ v,
        d_s=lambda s, x: np.zeros(np.shape(x)[:-1]),
        grad=lambda s, x: np.broadcast_to(v, np.shape(x)),
        hess=lambda s, x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        h1=lambda u: np.full_like(np.asarray(u, dtype=float), nv),
        h2=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
    )


@dataclass
class DerivativeCheck:
    grad_rel_error: float
    hess_rel_error: float
    ds_rel_error: float
    h1_violations: int
    h2_violations: int
    tol: float

    @property
    def passed(self) -> bool:
        return (max(self.grad_rel_error, self.hess_rel_error, self.ds_rel_error) < self.tol
                and self.h1_violations == 0 and self.h2_violations == 0)


def _rel(a, b):
    scale = max(float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def check_derivatives(psi: TestFunction, dim: int, samples: int = 20, radius: float = 1.0,
                      s_range=(0.0, 1.0), seed: int = 0, tol: float = 1e-5) -> DerivativeCheck:
    """Compare analytic derivatives with central differences at random points."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-radius, radius, (samples, dim))
    S = rng.uniform(*s_range, samples)
    g_err = h_err = s_err = 0.0
    v1 = v2 = 0
    eye = np.eye(dim)
    for s, x in zip(S, X):
        h = 1e-5 * (1.0 + np.linalg.norm(x))
        xp, xm = x + h * eye, x - h * eye
        g_fd = (psi.value(s, xp) - psi.value(s, xm)) / (2 * h)
        H_fd = (psi.grad(s, xp) - psi.grad(s, xm)) / (2 * h)
        g = psi.grad(s, x)
        H = psi.hess(s, x)
        g_err = max(g_err, _rel(g, g_fd))
        h_err = max(h_err, _rel(H, H_fd))
        hs = 1e-5 * (1.0 + abs(s))
        ds_fd = (psi.value(s + hs, x) - psi.value(s - hs, x)) / (2 * hs)
        s_err = max(s_err, _rel(np.atleast_1d(psi.d_s(s, x)), np.atleast_1d(ds_fd)))
        r = np.linalg.norm(x)
        if np.linalg.norm(g) > float(psi.h1(r)) * (1 + 1e-12) + 1e-12:
            v1 += 1
        if np.linalg.norm(H, 2) > float(psi.h2(r)) * (1 + 1e-12) + 1e-12:
            v2 += 1
    return DerivativeCheck(g_err, h_err, s_err, v1, v2, tol)


# -- generators ---------------------------------------------------------------


@dataclass
class GeneratorEval:
    drift_term: np.ndarray
    trace_term: np.ndarray
    jump_term: np.ndarray
    a_part: np.ndarray = field(repr=False, default=None)

    @property
    def total(self):
        return self.drift_term + self.trace_term + self.jump_term


def yosida_coefficients(coeffs: CoefficientSet, idx: YosidaIndex) -> CoefficientSet:
    """(R_n F, R_n B, R_n f) as a coefficient set."""
    R = idx.R_diag
    return replace(
        coeffs,
        F=lambda X: R * coeffs.F(X),
        B=lambda X: R[:, None] * coeffs.B(X),
        f=lambda V, X: R * coeffs.f(V, X),
        name=f"yosida({coeffs.name},n={idx.n:g})",
    )


def eval_generator(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                   levy: LevyMeasureSpec, psi: TestFunction, s, x) -> GeneratorEval:
    """L Psi(s, x): drift, trace and jump-compensator terms (batch over x)."""
    x = space.check(x)
    g = psi.grad(s, x)
    a_part = np.sum(g * (space.eigenvalues * x), axis=-1)
    drift = a_part + np.sum(g * coeffs.F(x), axis=-1)
    H = psi.hess(s, x)
    Bx = coeffs.B(x)
    HB = np.matmul(H, Bx)
    trace = 0.5 * np.sum((HB * Bx) @ qspec.q_eigenvalues, axis=-1)
    if levy.n_atoms:
        fx = coeffs.jumps(levy, x)
        sa = np.asarray(s, dtype=float)
        sa = sa[..., None] if sa.ndim else sa
        shifted = psi.value(sa, x[..., None, :] + fx)
        base = psi.value(s, x)[..., None]
        jump = np.einsum("...a,a->...", shifted - base - np.einsum("...d,...ad->...a", g, fx),
                         levy.masses)
    else:
        jump = np.zeros_like(drift)
    return GeneratorEval(drift, trace, jump, a_part)


def eval_generator_yosida(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                          levy: LevyMeasureSpec, n, psi: TestFunction, s, x) -> GeneratorEval:
    """L_n Psi: coefficients replaced by their R_n images, the Ax term unchanged."""
    idx = n if isinstance(n, YosidaIndex) else space.yosida(n)
    return eval_generator(space, yosida_coefficients(coeffs, idx), qspec, levy, psi, s, x)


# -- residual assembly ------------------------------------------------------------


_GL_CACHE: dict = {}


def _gauss(q: int):
    if q not in _GL_CACHE:
        z, w = np.polynomial.legendre.leggauss(q)
        _GL_CACHE[q] = ((z + 1) / 2, w / 2)
    return _GL_CACHE[q]


def quadrature_nodes(space: SpectralSpace, dt: float, nodes: int | None = None) -> int:
    """Gauss nodes per step; by default enough to resolve exp(2 mu s) over one step."""
    if nodes is not None:
        if nodes < 1:
            raise ItoError("nodes must be >= 1")
        return int(nodes)
    stiff = float(np.max(np.abs(space.eigenvalues))) * dt
    return int(min(24, max(4, np.ceil(0.8 * stiff))))


def _chunks(M: int, P: int, dim: int, q: int):
    c = max(1, int(4e6 // max(1, P * q * dim * dim)))
    return range(0, M, c), c


def ds_integral(space: SpectralSpace, path: PathState, integrand: Callable, nodes: int | None = None):
    """Sum over steps of int_{t_m}^{t_{m+1}} integrand(s, S(s - t_m) X_m) ds, per path."""
    t = path.t_grid
    X = path.states
    P, M, dim = X.shape[0], len(t) - 1, X.shape[2]
    nodes = quadrature_nodes(space, float(np.max(np.diff(t))), nodes)
    tau, w = _gauss(nodes)
    total = np.zeros(P)
    starts, c = _chunks(M, P, dim, nodes)
    for a in starts:
        b = min(M, a + c)
        dt = np.diff(t[a:b + 1])
        s = t[a:b, None] + dt[:, None] * tau
        y = semigroup_diag(space, dt[:, None] * tau) * X[:, a:b, None, :]
        vals = integrand(np.broadcast_to(s, (P,) + s.shape), y)
        total += np.einsum("pmq,q,m->p", vals, w, dt)
    return total


def wiener_sum(psi: TestFunction, coeffs: CoefficientSet, path: PathState):
    """sum_m <Psi_x(t_m, X_m), B(X_m) dW_m>, per path."""
    t, X, dW = path.t_grid, path.states, path.noise.dW
    P, M, dim = X.shape[0], len(t) - 1, X.shape[2]
    out = np.zeros(P)
    starts, c = _chunks(M, P, dim, 1)
    for a in starts:
        b = min(M, a + c)
        xm = X[:, a:b]
        g = psi.grad(np.broadcast_to(t[a:b], (P, b - a)), xm)
        out += np.einsum("pmd,pmdk,pmk->p", g, coeffs.B(xm), dW[:, a:b])
    return out


def jump_martingale_sum(psi: TestFunction, coeffs: CoefficientSet, levy: LevyMeasureSpec,
                        path: PathState, shift=None):
    """Compensated jump integral of Psi(s, Y + g) - Psi(s, Y), per path.

    By default Y = X_m and g = f(mark, X_m). ``shift(a, b)`` may supply
    ``(Y, g)`` for steps a..b-1, used by the semigroup formula.
    """
    t, X = path.t_grid, path.states
    P, M, dim = X.shape[0], len(t) - 1, X.shape[2]
    out = np.zeros(P)
    if levy.n_atoms == 0:
        return out
    counts = path.noise.counts
    starts, c = _chunks(M, P, dim, levy.n_atoms)
    for a in starts:
        b = min(M, a + c)
        dt = np.diff(t[a:b + 1])
        if shift is None:
            y = X[:, a:b]
            g = coeffs.jumps(levy, y)
        else:
            y, g = shift(a, b)
        s = np.broadcast_to(t[a:b], (P, b - a))
        diff = psi.value(s[..., None], y[..., None, :] + g) - psi.value(s, y)[..., None]
        weights = counts[:, a:b] - dt[None, :, None] * levy.masses
        out += np.einsum("pma,pma->p", diff, weights)
    return out


@dataclass
class ItoResidualReport:
    """Per-path residuals; ``residual = lhs - rhs`` elementwise."""

    formula: str
    lhs: np.ndarray
    rhs: np.ndarray
    dt: float
    n: float | None = None
    seed: int | None = None
    terms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise ItoError(f"unknown formula {self.formula!r}")
        self.lhs = np.atleast_1d(np.asarray(self.lhs, dtype=float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def n_paths(self) -> int:
        return self.residual.size

    @property
    def mean(self) -> float:
        return float(self.residual.mean())

    @property
    def stderr(self) -> float:
        r = self.residual
        return float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residual**2)))

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.residual)))

    @property
    def z(self) -> float:
        se = self.stderr
        return self.mean / se if se > 0 else (0.0 if self.mean == 0 else np.inf)

    def passes(self, tol_abs: float = 1e-6, tol_rel: float = 0.0, z_max: float = 3.0) -> bool:
        """Deterministic threshold for one path, z-test for a batch."""
        if self.n_paths == 1:
            scale = abs(self.lhs[0]) + abs(self.rhs[0])
            return abs(self.residual[0]) <= tol_abs + tol_rel * scale
        return abs(self.z) <= z_max

    def summary(self) -> dict:
        return {"formula": self.formula, "dt": self.dt, "n": self.n, "seed": self.seed,
                "n_paths": self.n_paths, "mean": self.mean, "stderr": self.stderr,
                "rms": self.rms, "mean_abs": self.mean_abs}

    def csv_rows(self):
        for p in range(self.n_paths):
            yield [self.formula, repr(float(self.dt)), "" if self.n is None else repr(float(self.n)),
                   str(p), repr(float(self.lhs[p])), repr(float(self.rhs[p])),
                   repr(float(self.residual[p])), "" if self.seed is None else str(self.seed)]


CSV_HEADER = ["formula", "dt", "n", "path", "lhs", "rhs", "residual", "seed"]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerows(r.csv_rows())
    return buf.getvalue()


def reports_to_json(reports, **extra) -> str:
    return json.dumps({"reports": [r.summary() for r in reports], **extra}, indent=2, sort_keys=True)


def _dt(path: PathState) -> float:
    return float(np.max(np.diff(path.t_grid)))


def _endpoints(psi, path):
    t, X = path.t_grid, path.states
    return psi.value(t[-1], X[:, -1]) - psi.value(t[0], X[:, 0])


def _path_coeffs(space, coeffs, path: PathState):
    if path.scheme.kind == "yosida_strong":
        return yosida_coefficients(coeffs, space.yosida(path.scheme.n)), "yosida", path.scheme.n
    return coeffs, "strong", None


def _check_path(space, coeffs, qspec, levy, path: PathState):
    if path.states.shape[2] != space.dim or coeffs.dim != space.dim:
        raise ItoError("path, space and coefficient dimensions differ")
    if path.noise.dW.shape[2] != qspec.k_dim:
        raise ItoError("recorded Wiener increments do not match the Q spectrum")
    if path.noise.counts.shape[2] != levy.n_atoms:
        raise ItoError("recorded jump counts do not match the Levy atoms")
    if not np.array_equal(path.noise.t_grid, path.t_grid):
        raise ItoError("path grid and noise grid differ")


def _strong_like(space, coeffs, qspec, levy, psi, path, gen, formula, n, nodes):
    lhs = _endpoints(psi, path)
    drift = ds_integral(space, path, lambda s, y: psi.d_s(s, y) + gen(s, y), nodes)
    wiener = wiener_sum(psi, coeffs, path)
    jumps = jump_martingale_sum(psi, coeffs, levy, path)
    rhs = drift + wiener + jumps
    return ItoResidualReport(formula, lhs, rhs, _dt(path), n, path.noise.paths[0].seed,
                             {"ds": drift, "wiener": wiener, "jump_martingale": jumps})


def ito_residual_strong(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                        levy: LevyMeasureSpec, psi: TestFunction, path: PathState,
                        nodes: int | None = None) -> ItoResidualReport:
    """Strong Ito formula along the path.

    For a ``yosida_strong(n)`` path the coefficients and generator are the
    R_n-modified ones and the report is labelled ``yosida``.
    """
    _check_path(space, coeffs, qspec, levy, path)
    c, formula, n = _path_coeffs(space, coeffs, path)
    gen = lambda s, y: eval_generator(space, c, qspec, levy, psi, s, y).total
    return _strong_like(space, c, qspec, levy, psi, path, gen, formula, n, nodes)


def ichikawa_residual(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                      levy: LevyMeasureSpec, psi: TestFunction, path: PathState,
                      nodes: int | None = None) -> ItoResidualReport:
    """Ito formula with the closed generator psi.closure used under the time integral."""
    if psi.closure is None:
        raise ItoError(f"test function {psi.name} has no closed generator attached")
    _check_path(space, coeffs, qspec, levy, path)
    if path.scheme.kind == "yosida_strong":
        raise ItoError("the closed-generator formula is stated for the mild path, not a Yosida path")
    gen = lambda s, y: psi.closure(s, y, coeffs, qspec, levy)
    return _strong_like(space, coeffs, qspec, levy, psi, path, gen, "ichikawa", None, nodes)


def with_generator_closure(space: SpectralSpace, psi: TestFunction) -> TestFunction:
    """Attach L itself as the closure: at finite truncation L already extends to all x."""
    def closure(s, x, coeffs, qspec, levy):
        return eval_generator(space, coeffs, qspec, levy, psi, s, x).total

    return psi.with_closure(closure)


def mild_rhs(space, coeffs, qspec, levy, psi, path: PathState, nodes: int | None = None):
    """Right side of the mild-solution formula built from the mild path X."""
    def integrand(s, y):
        g = eval_generator(space, coeffs, qspec, levy, psi, s, y)
        return psi.d_s(s, y) + (g.total - g.a_part)

    ds = ds_integral(space, path, integrand, nodes)
    return (_endpoints(psi, path) - ds - wiener_sum(psi, coeffs, path)
            - jump_martingale_sum(psi, coeffs, levy, path))


def a_term_integral(space, psi, path: PathState, nodes: int | None = None):
    """int <Psi_x(s, X(s)), A X(s)> ds along the path's interpolant."""
    return ds_integral(space, path, lambda s, y: np.sum(psi.grad(s, y) * space.eigenvalues * y, axis=-1),
                       nodes)


def ito_residual_mild(space: SpectralSpace, coeffs: CoefficientSet, qspec: QWienerSpec,
                      levy: LevyMeasureSpec, psi: TestFunction, x0, T: float, M: int, n_values,
                      n_paths: int, seed: int, nodes: int | None = None) -> list[ItoResidualReport]:
    """Mild-solution formula: lhs_n from the Yosida paths, rhs from the mild path.

    The left side is only defined as the n -> infinity limit, so the
    reports track residual_n across n on common noise.
    """
    n_values = [float(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ItoError("n_values must be strictly increasing")
    noise = make_noise_batch(qspec, levy, uniform_grid(T, M), seed, n_paths)
    mild = simulate_path(space, coeffs, levy, x0, noise, Scheme.mild())
    rhs = mild_rhs(space, coeffs, qspec, levy, psi, mild, nodes)
    out = []
    for n in n_values:
        yp = simulate_path(space, coeffs, levy, x0, noise, Scheme.yosida(n))
        lhs = a_term_integral(space, psi, yp, nodes)
        out.append(ItoResidualReport("mild", lhs, rhs, T / M, n, seed))
    return out


def mild_trend(reports) -> bool:
    """Mean |residual_n| strictly decreasing in n."""
    m = [r.mean_abs for r in reports]
    return all(b < a for a, b in zip(m, m[1:]))


def semigroup_mild_residual(space: SpectralSpace, coeffs: CoefficientSet, levy: LevyMeasureSpec,
                            psi: TestFunction, path: PathState, nodes: int | None = None) -> ItoResidualReport:
    """Semigroup-composed formula along Y(s) = S(t - s) X(s), jump noise only.

    On the exponential-Euler path Y is piecewise constant,
    Y_{m+1} - Y_m = S(t - t_m) times the step increment, so every term is
    read directly off the recorded path.
    """
    t, X = path.t_grid, path.states
    if path.noise.counts.shape[2] != levy.n_atoms or X.shape[2] != space.dim:
        raise ItoError("path does not match the space or Levy atoms")
    if np.any(coeffs.B(X) != 0):
        raise ItoError("this formula covers the jump-noise case only; B must vanish")
    T = t[-1]
    mu = space.eigenvalues
    nodes = quadrature_nodes(space, float(np.max(np.diff(t))), nodes)
    tau, w = _gauss(nodes)
    P, M, dim = X.shape[0], len(t) - 1, X.shape[2]

    lhs = psi.value(T, X[:, -1])
    start = psi.value(0.0, semigroup_diag(space, T) * X[:, 0])
    drift = np.zeros(P)
    starts, c = _chunks(M, P, dim, nodes * max(1, levy.n_atoms))
    for a in starts:
        b = min(M, a + c)
        dt = np.diff(t[a:b + 1])
        s = t[a:b, None] + dt[:, None] * tau
        Y = (semigroup_diag(space, T - t[a:b])[None] * X[:, a:b])[:, :, None, :]
        Y = np.broadcast_to(Y, (P, b - a, nodes, dim))
        xs = semigroup_diag(space, dt[:, None] * tau) * X[:, a:b, None, :]
        Sts = semigroup_diag(space, np.maximum(T - s, 0.0))
        sb = np.broadcast_to(s, (P,) + s.shape)
        g = psi.grad(sb, Y)
        vals = psi.d_s(sb, Y) + np.sum(g * Sts * coeffs.F(xs), axis=-1)
        if levy.n_atoms:
            fx = Sts[:, :, None, :] * coeffs.jumps(levy, xs)
            shifted = psi.value(sb[..., None], Y[..., None, :] + fx)
            jc = shifted - psi.value(sb, Y)[..., None] - np.einsum("...d,...ad->...a", g, fx)
            vals = vals + jc @ levy.masses
        drift += np.einsum("pmq,q,m->p", vals, w, dt)

    def shift(a, b):
        Sm = semigroup_diag(space, T - t[a:b])
        y = Sm[None] * X[:, a:b]
        g = Sm[None, :, None, :] * coeffs.jumps(levy, X[:, a:b])
        return y, g

    jumps = jump_martingale_sum(psi, coeffs, levy, path, shift=shift)
    rhs = start + drift + jumps
    # reported against Psi(t, X_t) - Psi(0, X_0) so it lines up with the strong residual
    base = psi.value(t[0], X[:, 0])
    return ItoResidualReport("semigroup_mild", lhs - base, rhs - base, _dt(path), None,
                             path.noise.paths[0].seed,
                             {"start": start, "ds": drift, "jump_martingale": jumps})


def generator_gap_along_path(space, coeffs, qspec, levy, psi, path: PathState) -> float:
    """max over the Yosida path states of |L Psi - L_n Psi|."""
    if path.scheme.kind != "yosida_strong":
        raise ItoError("needs a yosida_strong path")
    X = path.states
    s = np.broadcast_to(path.t_grid, X.shape[:2])
    L = eval_generator(space, coeffs, qspec, levy, psi, s, X).total
    Ln = eval_generator_yosida(space, coeffs, qspec, levy, path.scheme.n, psi, s, X).total
    return float(np.max(np.abs(L - Ln)))


# -- audits -----------------------------------------------------------------------


@dataclass
class QuasiSublinearReport:
    C_add: float
    C_mul: float
    monotone: bool
    worst_add: tuple
    worst_mul: tuple
    samples: int

    @property
    def C(self) -> float:
        return max(self.C_add, self.C_mul)

    @property
    def passed(self) -> bool:
        return self.monotone and np.isfinite(self.C)

    def to_dict(self) -> dict:
        return {"C_add": self.C_add, "C_mul": self.C_mul, "C": self.C, "monotone": self.monotone,
                "samples": self.samples, "passed": self.passed}


def _ratio_max(num, den):
    """max num/den over entries, skipping 0/0; inf if num > 0 = den."""
    zero = den == 0
    if np.any(zero & (num > 0)):
        i = np.unravel_index(np.argmax(zero & (num > 0)), num.shape)
        return np.inf, i
    r = np.where(zero, -np.inf, num / np.where(zero, 1.0, den))
    i = np.unravel_index(np.argmax(r), r.shape)
    return float(r[i]), i


def quasi_sublinear_audit(h: Callable, sample_count: int = 200, u_max: float = 10.0,
                          u_min: float = 1e-3) -> QuasiSublinearReport:
    """Smallest C on a grid with h(x+y) <= C(h(x)+h(y)) and h(xy) <= C h(x) h(y)."""
    u = np.geomspace(u_min, u_max, sample_count)
    hu = np.asarray(h(u), dtype=float)
    if np.any(hu < 0):
        raise ItoError("h must be nonnegative")
    monotone = bool(np.all(np.diff(hu) >= -1e-15 * np.abs(hu[1:])))
    x, y = np.meshgrid(u, u, indexing="ij")
    hx, hy = hu[:, None], hu[None, :]
    C_add, ia = _ratio_max(np.asarray(h(x + y), dtype=float), hx + hy)
    C_mul, im = _ratio_max(np.asarray(h(x * y), dtype=float), hx * hy)
    return QuasiSublinearReport(C_add, C_mul, monotone, (u[ia[0]], u[ia[1]]),
                                (u[im[0]], u[im[1]]), sample_count)


@dataclass
class GrowthConditionReport:
    max_value: float
    values: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_dict(self) -> dict:
        return {"max_value": self.max_value, "finite": self.finite, "samples": int(self.values.size)}


def growth_condition_audit(coeffs: CoefficientSet, levy: LevyMeasureSpec, psi: TestFunction,
                           sample_count: int = 1000, radius: float = 10.0,
                           seed: int = 0) -> GrowthConditionReport:
    """sum_i mass_i [|f|^2 + h1(|f|)^2 |f|^2 + h2(|f|) |f|^2] at sampled x."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-radius, radius, (sample_count, coeffs.dim))
    if levy.n_atoms == 0:
        vals = np.zeros(sample_count)
    else:
        nf = np.linalg.norm(coeffs.jumps(levy, X), axis=-1)
        nf2 = nf**2
        vals = (nf2 + psi.h1(nf) ** 2 * nf2 + psi.h2(nf) * nf2) @ levy.masses
    return GrowthConditionReport(float(np.max(vals)) if vals.size else 0.0, vals, X)
