"""Q-Wiener increments, finite-activity jump streams and the cPrm integral.

Every path's randomness comes from a ``SeedSequence`` derived from
``(base_seed, path_index)`` and split into two independent children: one
for the Wiener increments and one for the Poisson marks. Generators are
Philox (counter based), so any subset of paths can be regenerated in any
order or in parallel.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np


class NoiseError(ValueError):
    pass


# -- specs --------------------------------------------------------------


@dataclass(frozen=True)
class QWienerSpec:
    """Trace-class covariance Q = diag(q_eigenvalues) on a k_dim truncation of K."""

    q_eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.array(self.q_eigenvalues, dtype=float).reshape(-1)
        lam.setflags(write=False)
        object.__setattr__(self, "q_eigenvalues", lam)
        if lam.size < 1:
            raise NoiseError("need at least one Q eigenvalue")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise NoiseError("Q eigenvalues must be finite and nonnegative")

    @property
    def k_dim(self) -> int:
        return self.q_eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.q_eigenvalues.sum())

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "QWienerSpec":
        lam = cfg["q_eigenvalues"]
        if isinstance(lam, str):
            k = int(cfg["k_dim"])
            j = np.arange(1, k + 1, dtype=float)
            scale = float(cfg.get("scale", 1.0))
            if lam == "inverse_square":
                lam = scale / j**2
            elif lam == "constant":
                lam = np.full(k, scale)
            else:
                raise NoiseError(f"unknown q_eigenvalues generator {lam!r}")
        spec = cls(np.asarray(lam, dtype=float))
        if "k_dim" in cfg and int(cfg["k_dim"]) != spec.k_dim:
            raise NoiseError(f"k_dim={cfg['k_dim']} but {spec.k_dim} q_eigenvalues given")
        return spec

    def to_config(self) -> dict:
        return {"k_dim": self.k_dim, "q_eigenvalues": [float(v) for v in self.q_eigenvalues]}


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Atomic Levy measure beta = sum_i masses[i] * delta_{marks[i]}."""

    marks: np.ndarray
    masses: np.ndarray
    mark_dim: int = 1

    def __post_init__(self):
        masses = np.array(self.masses, dtype=float).reshape(-1)
        marks = np.array(self.marks, dtype=float).reshape(masses.size, -1) if masses.size else (
            np.zeros((0, int(self.mark_dim)))
        )
        if masses.size and marks.shape[1] != self.mark_dim:
            raise NoiseError(f"marks have dimension {marks.shape[1]}, mark_dim={self.mark_dim}")
        for i in range(masses.size):
            if not masses[i] > 0 or not np.isfinite(masses[i]):
                raise NoiseError(f"atom {i}: mass must be positive and finite")
            if not np.any(marks[i] != 0):
                raise NoiseError(f"atom {i}: mark must be nonzero")
        marks.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "masses", masses)

    @property
    def n_atoms(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def levy_integral(self) -> float:
        """sum_i mass_i * min(|mark_i|^2, 1); finite by construction."""
        sq = np.sum(self.marks**2, axis=1)
        return float(np.sum(self.masses * np.minimum(sq, 1.0)))

    @classmethod
    def empty(cls, mark_dim: int = 1) -> "LevyMeasureSpec":
        return cls(np.zeros((0, mark_dim)), np.zeros(0), mark_dim)

    @classmethod
    def single(cls, mark, mass: float) -> "LevyMeasureSpec":
        mark = np.atleast_1d(np.asarray(mark, dtype=float))
        return cls(mark[None, :], [mass], mark.size)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "LevyMeasureSpec":
        atoms = cfg.get("atoms", [])
        mark_dim = int(cfg.get("mark_dim", len(atoms[0]["mark"]) if atoms else 1))
        if not atoms:
            return cls.empty(mark_dim)
        marks = [np.atleast_1d(np.asarray(a["mark"], dtype=float)) for a in atoms]
        for i, m in enumerate(marks):
            if m.size != mark_dim:
                raise NoiseError(f"atom {i}: mark has dimension {m.size}, mark_dim={mark_dim}")
        return cls(np.stack(marks), [float(a["mass"]) for a in atoms], mark_dim)

    def to_config(self) -> dict:
        return {
            "mark_dim": self.mark_dim,
            "atoms": [
                {"mark": [float(v) for v in m], "mass": float(w)}
                for m, w in zip(self.marks, self.masses)
            ],
        }


# -- seeds ----------------------------------------------------------------


def path_seed_sequence(base_seed: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))


def _split(seed) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent (wiener, jump) children of a path seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    w, j = ss.spawn(2)
    return w, j


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


def check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size < 2:
        raise NoiseError("time grid needs at least two nodes")
    if not np.all(np.diff(t) > 0):
        raise NoiseError("time grid must be strictly increasing")
    return t


def uniform_grid(T: float, M: int) -> np.ndarray:
    if not T > 0 or M < 1:
        raise NoiseError("need T > 0 and M >= 1 steps")
    return np.linspace(0.0, float(T), int(M) + 1)


# -- samplers -------------------------------------------------------------


def sample_wiener_increments(spec: QWienerSpec, t_grid, rng_seed) -> np.ndarray:
    """Rows are independent N(0, dt_m * diag(lambda)) draws, shape (M, k_dim)."""
    t = check_grid(t_grid)
    dt = np.diff(t)
    rng = _generator(rng_seed)
    z = rng.standard_normal((dt.size, spec.k_dim))
    return z * np.sqrt(np.multiply.outer(dt, spec.q_eigenvalues))


def sample_jump_stream(spec: LevyMeasureSpec, T: float, rng_seed) -> list[tuple[float, int]]:
    """Merged, time-sorted events (time, atom_index) on (0, T]."""
    if not T > 0:
        raise NoiseError("jump horizon T must be positive")
    rng = _generator(rng_seed)
    times, atoms = [], []
    for i, mass in enumerate(spec.masses):
        k = rng.poisson(mass * T)
        # T - U*T with U in [0, 1) lands in (0, T]
        times.append(T - rng.random(k) * T)
        atoms.append(np.full(k, i, dtype=int))
    if not times:
        return []
    times = np.concatenate(times)
    atoms = np.concatenate(atoms)
    order = np.argsort(times, kind="stable")
    return [(float(times[o]), int(atoms[o])) for o in order]


def sample_jump_counts(spec: LevyMeasureSpec, T: float, trials: int, rng_seed) -> np.ndarray:
    """Per-trial event counts of each atom on (0, T], shape (trials, n_atoms).

    Equal in law to counting the events of ``sample_jump_stream``; used by
    the large-trial statistical audits.
    """
    if not T > 0:
        raise NoiseError("jump horizon T must be positive")
    rng = _generator(rng_seed)
    return rng.poisson(np.broadcast_to(spec.masses * T, (int(trials), spec.n_atoms)))


def _g_values(spec: LevyMeasureSpec, g: Callable) -> np.ndarray:
    return np.array([float(g(m)) for m in spec.marks], dtype=float)


def cprm_integral(spec: LevyMeasureSpec, jumps, dt_total: float, g: Callable,
                  compensate: bool = True):
    """Compensated sum: sum over events of g(mark) - dt_total * sum_i mass_i g(mark_i).

    ``jumps`` is either a list of ``(time, atom_index)`` events or an integer
    count array whose last axis runs over atoms (vectorised over trials).
    ``compensate=False`` drops the compensator; it exists only as a negative
    control for the audits.
    """
    gv = _g_values(spec, g)
    comp = float(dt_total) * float(np.dot(spec.masses, gv)) if compensate else 0.0
    if isinstance(jumps, np.ndarray) and jumps.dtype.kind in "iu":
        return jumps @ gv - comp
    raw = sum(gv[i] for _, i in jumps) if spec.n_atoms else 0.0
    return float(raw) - comp


@dataclass
class IsometryReport:
    empirical: float
    theoretical: float
    stderr: float
    z: float
    trials: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def isometry_audit(spec: LevyMeasureSpec, T: float, trials: int, seed: int = 0,
                   atom_set: Sequence[int] | None = None,
                   corrupt_compensator: bool = False) -> IsometryReport:
    """MC check of E[q(A x (0,T])^2] = beta(A) * T for A a set of atoms."""
    if trials < 1000:
        raise NoiseError("isometry audit needs at least 1e3 trials")
    idx = set(range(spec.n_atoms) if atom_set is None else atom_set)
    indicator = np.array([1.0 if i in idx else 0.0 for i in range(spec.n_atoms)])
    theo = float(np.dot(spec.masses, indicator)) * T
    counts = sample_jump_counts(spec, T, trials, _split(seed)[1])
    lookup = dict(zip(map(tuple, spec.marks), indicator))
    q = cprm_integral(spec, counts, T, lambda m: lookup[tuple(m)],
                      compensate=not corrupt_compensator)
    q2 = np.asarray(q, dtype=float) ** 2
    emp = float(q2.mean())
    se = float(q2.std(ddof=1) / np.sqrt(trials))
    if se == 0.0:
        z = 0.0 if emp == theo else np.inf
    else:
        z = (emp - theo) / se
    return IsometryReport(emp, theo, se, float(z), int(trials), bool(abs(z) < 4))


@dataclass
class CovarianceReport:
    sample_cov: np.ndarray
    expected_cov: np.ndarray
    max_abs_z: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "sample_diag": [float(v) for v in np.diag(self.sample_cov)],
            "expected_diag": [float(v) for v in np.diag(self.expected_cov)],
            "max_abs_z": self.max_abs_z,
            "passed": self.passed,
        }


def wiener_covariance_audit(spec: QWienerSpec, dt: float, samples: int, seed: int = 0,
                            z_tol: float = 4.0) -> CovarianceReport:
    """Compare the sample covariance of one-step increments with dt * diag(lambda)."""
    grid = np.arange(samples + 1, dtype=float) * dt
    dW = sample_wiener_increments(spec, grid, _split(seed)[0])
    cov = dW.T @ dW / samples
    expected = np.diag(dt * spec.q_eigenvalues)
    # stderr of the product-moment estimator for independent Gaussians
    sd = np.sqrt(dt * spec.q_eigenvalues)
    se = np.sqrt(np.outer(sd**2, sd**2) * (1.0 + np.eye(spec.k_dim)) / samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (cov - expected) / se, np.where(cov == expected, 0.0, np.inf))
    zmax = float(np.max(np.abs(z)))
    return CovarianceReport(cov, expected, zmax, zmax < z_tol)


# -- recorded paths -----------------------------------------------------------


@dataclass(frozen=True)
class NoisePath:
    """One recorded realisation: Wiener increments and jump events on a grid."""

    t_grid: np.ndarray
    dW: np.ndarray
    jump_times: np.ndarray
    jump_atoms: np.ndarray
    n_atoms: int
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        t = check_grid(self.t_grid)
        dW = np.asarray(self.dW, dtype=float)
        jt = np.asarray(self.jump_times, dtype=float).reshape(-1)
        ja = np.asarray(self.jump_atoms, dtype=int).reshape(-1)
        if dW.ndim != 2 or dW.shape[0] != t.size - 1:
            raise NoiseError(f"dW must have shape ({t.size - 1}, k_dim), got {dW.shape}")
        if jt.shape != ja.shape:
            raise NoiseError("jump times and atom indices differ in length")
        if jt.size:
            if np.any(np.diff(jt) < 0):
                raise NoiseError("jump times must be sorted")
            if jt[0] <= t[0] or jt[-1] > t[-1]:
                raise NoiseError("jump times must lie in (0, T]")
            if ja.min() < 0 or ja.max() >= self.n_atoms:
                raise NoiseError("jump atom index out of range")
        for a in (t, dW, jt, ja):
            a.setflags(write=False)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "dW", dW)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_atoms", ja)

    @property
    def M(self) -> int:
        return self.t_grid.size - 1

    @property
    def T(self) -> float:
        return float(self.t_grid[-1])

    @property
    def k_dim(self) -> int:
        return self.dW.shape[1]

    @property
    def jumps(self) -> list[tuple[float, int]]:
        return list(zip(self.jump_times.tolist(), self.jump_atoms.tolist()))

    def jump_steps(self) -> np.ndarray:
        """Step index m of each event, with t_m < time <= t_{m+1}."""
        return np.searchsorted(self.t_grid, self.jump_times, side="left") - 1

    def step_counts(self) -> np.ndarray:
        """Events of each atom inside each step, shape (M, n_atoms)."""
        counts = np.zeros((self.M, self.n_atoms), dtype=np.int64)
        np.add.at(counts, (self.jump_steps(), self.jump_atoms), 1)
        return counts

    def coarsen(self, factor: int) -> "NoisePath":
        """Same realisation on every ``factor``-th node (increments summed)."""
        if self.M % factor:
            raise NoiseError(f"{self.M} steps not divisible by {factor}")
        dW = self.dW.reshape(self.M // factor, factor, self.k_dim).sum(axis=1)
        return NoisePath(self.t_grid[::factor], dW, self.jump_times, self.jump_atoms,
                         self.n_atoms, self.seed, self.index)

    def truncate(self, steps: int) -> "NoisePath":
        """The first ``steps`` steps of this realisation."""
        t = self.t_grid[: steps + 1]
        keep = self.jump_times <= t[-1]
        return NoisePath(t, self.dW[:steps], self.jump_times[keep], self.jump_atoms[keep],
                         self.n_atoms, self.seed, self.index)

    # -- serialisation ---------------------------------------------------
    def save_npz(self, path) -> None:
        np.savez(path, t_grid=self.t_grid, dW=self.dW, jump_times=self.jump_times,
                 jump_atoms=self.jump_atoms, meta=np.array([self.n_atoms, self.seed, self.index]))

    @classmethod
    def load_npz(cls, path) -> "NoisePath":
        with np.load(path) as z:
            n_atoms, seed, index = (int(v) for v in z["meta"])
            return cls(z["t_grid"], z["dW"], z["jump_times"], z["jump_atoms"], n_atoms, seed, index)

    def to_csv(self) -> str:
        """Text sidecar: an ``increment`` row per step and a ``jump`` row per event."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# n_atoms", self.n_atoms, "seed", self.seed, "index", self.index])
        w.writerow(["kind", "t0", "t1"] + [f"dW{j + 1}" for j in range(self.k_dim)])
        for m in range(self.M):
            w.writerow(["increment", repr(float(self.t_grid[m])), repr(float(self.t_grid[m + 1]))]
                       + [repr(float(v)) for v in self.dW[m]])
        for t, a in self.jumps:
            w.writerow(["jump", repr(t), a])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "NoisePath":
        rows = list(csv.reader(io.StringIO(text)))
        head = rows[0]
        n_atoms, seed, index = int(head[1]), int(head[3]), int(head[5])
        t0, t1, dW, jt, ja = [], [], [], [], []
        for r in rows[2:]:
            if r[0] == "increment":
                t0.append(float(r[1]))
                t1.append(float(r[2]))
                dW.append([float(v) for v in r[3:]])
            elif r[0] == "jump":
                jt.append(float(r[1]))
                ja.append(int(r[2]))
        grid = np.array(t0 + t1[-1:])
        return cls(grid, np.array(dW), np.array(jt), np.array(ja, dtype=int), n_atoms, seed, index)


def make_noise_path(qspec: QWienerSpec, levy: LevyMeasureSpec, t_grid, base_seed: int,
                    index: int = 0) -> NoisePath:
    """Draw path ``index`` of the stream rooted at ``base_seed``."""
    t = check_grid(t_grid)
    ws, js = _split(path_seed_sequence(base_seed, index))
    dW = sample_wiener_increments(qspec, t, ws)
    # jumps are drawn on (0, T]; the grid starts at t[0]
    events = sample_jump_stream(levy, t[-1] - t[0], js) if levy.n_atoms else []
    jt = np.array([t[0] + e[0] for e in events], dtype=float)
    ja = np.array([e[1] for e in events], dtype=int)
    return NoisePath(t, dW, jt, ja, levy.n_atoms, int(base_seed), int(index))


@dataclass(frozen=True)
class NoiseBatch:
    """Several recorded paths on a common grid, with stacked step arrays."""

    paths: tuple
    dW: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @classmethod
    def from_paths(cls, paths: Iterable[NoisePath]) -> "NoiseBatch":
        paths = tuple(paths)
        if not paths:
            raise NoiseError("empty batch")
        t = paths[0].t_grid
        for p in paths[1:]:
            if p.t_grid.shape != t.shape or not np.array_equal(p.t_grid, t):
                raise NoiseError("all paths in a batch must share the time grid")
        dW = np.stack([p.dW for p in paths])
        counts = np.stack([p.step_counts() for p in paths])
        return cls(paths, dW, counts)

    @property
    def t_grid(self) -> np.ndarray:
        return self.paths[0].t_grid

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def M(self) -> int:
        return self.t_grid.size - 1

    def coarsen(self, factor: int) -> "NoiseBatch":
        return NoiseBatch.from_paths(p.coarsen(factor) for p in self.paths)


def make_noise_batch(qspec: QWienerSpec, levy: LevyMeasureSpec, t_grid, base_seed: int,
                     n_paths: int, start: int = 0) -> NoiseBatch:
    return NoiseBatch.from_paths(
        make_noise_path(qspec, levy, t_grid, base_seed, start + i) for i in range(n_paths)
    )


def as_batch(noise) -> NoiseBatch:
    if isinstance(noise, NoiseBatch):
        return noise
    if isinstance(noise, NoisePath):
        return NoiseBatch.from_paths([noise])
    return NoiseBatch.from_paths(noise)
