"""Scenario files: TOML text validated into runnable objects.

Grammar (all tables optional unless noted)::

    seed = 2024                       # required, no implicit entropy
    study = "stability"               # the CLI subcommand overrides this

    [space]                           # required
    dim = 32
    eigenvalues = "heat_dirichlet"    # or a list of dim numbers
    alpha = 0.0

    [noise.wiener]                    # required
    q_eigenvalues = "inverse_square"  # or "constant", or an explicit list
    k_dim = 32
    scale = 1.0

    [noise.levy]
    mark_dim = 1
    atoms = [{mark = [1.0], mass = 1.0}]

    [coefficients]                    # required
    kind = "linear"                   # linear | zero | example4
    a = -1.0                          # scalar or list (linear kind)
    G = 0.4                           # scalar or dim x k_dim nested list
    c = 0.5                           # scalar or list of mark_dim
    F0 = 0.0; G0 = 0.0; c0 = 0.0; f0 = 0.0
    growth_l = 1.0                    # optional declared constants
    lipschitz_K = 1.0
    l = 1.0                           # example4 kind only

    [initial]                         # required
    x0 = [1.0, 0.5]                   # list of dim, or
    basis = 1                         # 1-based eigenvector index, with
    scale = 1.0                       # a multiplier

    [run]
    T = 1.0
    steps = 1000
    paths = 1000
    scheme = "mild_exponential"       # simulate / verify-ito: or yosida_strong, picard
    n = 100.0                         # Yosida index for scheme = "yosida_strong"
    iterations = 5                    # for scheme = "picard"
    n_values = [10, 100, 1000]
    dt_values = [0.1, 0.05]

    [ito]
    formula = "strong"                # strong | yosida | mild | ichikawa | semigroup_mild
    psi = "quadratic"                 # quadratic | exp_weighted | semigroup_quadratic |
                                      # semigroup_weighted | gaussian_bump | constant | linear
    c = 0.0; l = 0.0; sigma = 1.0; v = [...]

    [stability]
    preset = "example4"               # or give mode and constants explicitly
    mode = "stability"
    c1 = 1.0; c2 = 1.0; c3 = 19.7; k1 = 0.0; k2 = 0.0; k3 = 0.0
    audit_samples = 1000
    audit_radius = 10.0

    [noise_audit]
    interval = 0.5
    trials = 100000
    dt = 0.01

    [output]
    dir = "out"
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import ito
from .noise import LevyMeasureSpec, NoiseError, QWienerSpec
from .solver import CoefficientSet, Scheme, audit_assumptions, linear_coefficients, zero_coefficients
from .spectral import SpectralError, SpectralSpace
from .stability import LyapunovSpec, StabilityError, example4_lyapunov, example4_setup

STUDIES = ("simulate", "verify_ito", "yosida_convergence", "stability", "noise_audit")
COMMANDS = {"simulate": "simulate", "verify-ito": "verify_ito", "yosida": "yosida_convergence",
            "stability": "stability", "noise-audit": "noise_audit"}
PSI_KINDS = ("quadratic", "exp_weighted", "semigroup_quadratic", "semigroup_weighted",
             "gaussian_bump", "constant", "linear")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str
    line: int | None = None
    source: str = "<config>"

    def __str__(self) -> str:
        loc = f"{self.source}:{self.line}" if self.line else self.source
        return f"{loc}: {self.path}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


def _locate(text: str, path: str) -> int | None:
    """Line number (1-based) where the dotted key path is set, best effort."""
    parts = path.split(".")
    parts = [re.sub(r"\[\d+\]$", "", p) for p in parts]
    header = ""
    best = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[+\s*([^\]]+?)\s*\]+$", line)
        if m:
            header = m.group(1).replace(" ", "")
            if header == ".".join(parts):
                best = best or no
            continue
        m = re.match(r"^([A-Za-z0-9_\-\.\"]+)\s*=", line)
        if not m:
            continue
        key = m.group(1).strip('"')
        full = f"{header}.{key}" if header else key
        if full == ".".join(parts):
            return no
    return best


class _Collector:
    def __init__(self, text: str, source: str):
        self.text, self.source, self.items = text, source, []

    def add(self, path: str, message: str):
        self.items.append(Diagnostic(path, message, _locate(self.text, path), self.source))


def load_text(path) -> tuple[str, dict]:
    """Read and parse a scenario file; raises ConfigError for unreadable or malformed input."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError([Diagnostic("<file>", f"cannot read: {e.strerror}", None, str(p))])
    return text, parse_text(text, str(p))


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError([Diagnostic("<syntax>", str(e), int(m.group(1)) if m else None, source)])


def _get(d: dict, path: str, default=None):
    cur: Any = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _num_array(v):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        return None
    return a if np.all(np.isfinite(a)) else None


@dataclass
class Scenario:
    study: str
    seed: int
    space: SpectralSpace
    qspec: QWienerSpec
    levy: LevyMeasureSpec
    coeffs: CoefficientSet
    x0: np.ndarray
    run: dict
    sections: dict
    output_dir: str
    source_text: str = ""
    source_path: str = "<config>"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return float(self.run.get("T", 1.0))

    @property
    def M(self) -> int:
        return int(self.run.get("steps", 1000))

    @property
    def paths(self) -> int:
        return int(self.run.get("paths", 100))

    def scheme(self) -> Scheme:
        kind = self.run.get("scheme", "mild_exponential")
        if kind == "yosida_strong":
            return Scheme.yosida(self.run["n"])
        if kind == "picard":
            return Scheme.picard(self.run.get("iterations", 5))
        return Scheme.mild()

    def psi(self) -> ito.TestFunction:
        cfg = self.sections.get("ito", {})
        kind = cfg.get("psi", "quadratic")
        if kind == "quadratic":
            return ito.quadratic()
        if kind == "exp_weighted":
            return ito.exp_weighted(cfg.get("c", 0.0), self.T)
        if kind == "semigroup_quadratic":
            return ito.semigroup_quadratic(self.space, cfg.get("t", self.T))
        if kind == "semigroup_weighted":
            return ito.semigroup_weighted(self.space, cfg.get("c", 0.0), cfg.get("l", 0.0), self.T)
        if kind == "gaussian_bump":
            return ito.gaussian_bump(cfg.get("sigma", 1.0))
        if kind == "constant":
            return ito.constant(cfg.get("value", 1.0))
        return ito.linear(cfg["v"])

    def lyapunov(self) -> LyapunovSpec:
        cfg = self.sections.get("stability", {})
        if cfg.get("preset") == "example4":
            return example4_lyapunov(float(self.sections["coefficients"].get("l", 1.0)))
        return LyapunovSpec(
            ito.quadratic(), float(cfg["c1"]), float(cfg["c2"]), float(cfg["c3"]),
            float(cfg.get("k1", 0.0)), float(cfg.get("k2", 0.0)), float(cfg.get("k3", 0.0)),
            cfg.get("mode", "stability"))


def _validate_space(cfg, col):
    s = cfg.get("space")
    if not isinstance(s, dict):
        col.add("space", "missing [space] table")
        return None
    dim = s.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        col.add("space.dim", "dim must be a positive integer")
        return None
    eig = s.get("eigenvalues", "heat_dirichlet")
    if isinstance(eig, str):
        if eig != "heat_dirichlet":
            col.add("space.eigenvalues", f"unknown eigenvalue generator {eig!r}")
            return None
    else:
        a = _num_array(eig)
        if a is None or a.shape != (dim,):
            col.add("space.eigenvalues", f"expected {dim} finite numbers")
            return None
    alpha = s.get("alpha", 0.0)
    if not _is_num(alpha) or alpha < 0:
        col.add("space.alpha", "alpha must be a finite nonnegative number")
        return None
    try:
        return SpectralSpace.from_config(s)
    except SpectralError as e:
        col.add("space.eigenvalues", str(e))
        return None


def _validate_wiener(cfg, col):
    w = _get(cfg, "noise.wiener")
    if not isinstance(w, dict):
        col.add("noise.wiener", "missing [noise.wiener] table")
        return None
    if "q_eigenvalues" not in w:
        col.add("noise.wiener.q_eigenvalues", "missing q_eigenvalues")
        return None
    lam = w["q_eigenvalues"]
    if isinstance(lam, str) and not isinstance(w.get("k_dim"), int):
        col.add("noise.wiener.k_dim", "a generated Q spectrum needs an integer k_dim")
        return None
    if not isinstance(lam, str) and _num_array(lam) is None:
        col.add("noise.wiener.q_eigenvalues", "q_eigenvalues must be finite numbers")
        return None
    try:
        return QWienerSpec.from_config(w)
    except (NoiseError, ValueError, TypeError) as e:
        col.add("noise.wiener.q_eigenvalues", str(e))
        return None


def _validate_levy(cfg, col):
    lv = _get(cfg, "noise.levy", {})
    if not isinstance(lv, dict):
        col.add("noise.levy", "must be a table")
        return None
    atoms = lv.get("atoms", [])
    if not isinstance(atoms, list):
        col.add("noise.levy.atoms", "atoms must be a list of {mark, mass} tables")
        return None
    mark_dim = lv.get("mark_dim")
    if mark_dim is not None and (not isinstance(mark_dim, int) or mark_dim < 1):
        col.add("noise.levy.mark_dim", "mark_dim must be a positive integer")
        return None
    ok = True
    for i, a in enumerate(atoms):
        p = f"noise.levy.atoms[{i}]"
        if not isinstance(a, dict) or "mark" not in a or "mass" not in a:
            col.add(p, f"atom {i} needs both mark and mass")
            ok = False
            continue
        m = _num_array(a["mark"])
        if m is None:
            col.add(p, f"atom {i}: mark must be finite numbers")
            ok = False
            continue
        m = np.atleast_1d(m)
        want = mark_dim if mark_dim is not None else len(np.atleast_1d(_num_array(atoms[0]["mark"])))
        if m.size != want:
            col.add(p, f"atom {i}: mark has dimension {m.size}, mark_dim is {want}")
            ok = False
        if not np.any(m != 0):
            col.add(p, f"atom {i}: mark must be nonzero")
            ok = False
        if not _is_num(a["mass"]) or a["mass"] <= 0:
            col.add(p, f"atom {i}: mass must be positive, got {a['mass']!r}")
            ok = False
    if not ok:
        return None
    try:
        return LevyMeasureSpec.from_config(lv)
    except NoiseError as e:
        col.add("noise.levy.atoms", str(e))
        return None


_LINEAR_KEYS = {"a": "dim", "F0": "dim", "f0": "dim", "c": "mark", "c0": "mark", "G": "mat", "G0": "mat"}


def _validate_coeffs(cfg, col, space, qspec, levy):
    c = cfg.get("coefficients")
    if not isinstance(c, dict):
        col.add("coefficients", "missing [coefficients] table")
        return None
    kind = c.get("kind", "linear")
    if kind == "zero":
        return zero_coefficients(space.dim, qspec.k_dim)
    if kind == "example4":
        l = c.get("l", 1.0)
        if not _is_num(l) or l <= 0:
            col.add("coefficients.l", "l must be positive")
            return None
        sp, q, lv, co = example4_setup(float(l), space.dim)
        if q.k_dim != qspec.k_dim or not np.allclose(q.q_eigenvalues, qspec.q_eigenvalues):
            col.add("noise.wiener.q_eigenvalues", "example4 uses the inverse-square Q spectrum with k_dim = dim")
            return None
        if lv.n_atoms != levy.n_atoms or not np.array_equal(lv.marks, levy.marks) \
                or not np.array_equal(lv.masses, levy.masses):
            col.add("noise.levy.atoms", "example4 uses one atom with mark [1.0] and mass 1.0")
            return None
        if not np.array_equal(sp.eigenvalues, space.eigenvalues):
            col.add("space.eigenvalues", "example4 runs on the Dirichlet heat spectrum")
            return None
        return co
    if kind != "linear":
        col.add("coefficients.kind", f"unknown coefficient kind {kind!r} (linear, zero, example4)")
        return None
    args = {}
    ok = True
    for key, shape in _LINEAR_KEYS.items():
        if key not in c:
            continue
        a = _num_array(c[key])
        want = {"dim": (space.dim,), "mark": (levy.mark_dim,), "mat": (space.dim, qspec.k_dim)}[shape]
        if a is None or (a.ndim and a.shape != want):
            col.add(f"coefficients.{key}", f"expected a scalar or shape {want}")
            ok = False
            continue
        args[key] = a
    for key in ("growth_l", "lipschitz_K"):
        if key in c:
            if not _is_num(c[key]) or c[key] <= 0:
                col.add(f"coefficients.{key}", f"{key} must be positive")
                ok = False
            else:
                args[key] = float(c[key])
    if not ok:
        return None
    return linear_coefficients(space.dim, qspec, levy, **args)


def _validate_x0(cfg, col, space):
    init = cfg.get("initial")
    if not isinstance(init, dict):
        col.add("initial", "missing [initial] table")
        return None
    if "x0" in init:
        a = _num_array(init["x0"])
        if a is None or a.shape != (space.dim,):
            col.add("initial.x0", f"x0 must list {space.dim} finite numbers")
            return None
        return a
    k = init.get("basis")
    if not isinstance(k, int) or not 1 <= k <= space.dim:
        col.add("initial.basis", f"give x0 or a basis index in 1..{space.dim}")
        return None
    scale = init.get("scale", 1.0)
    if not _is_num(scale):
        col.add("initial.scale", "scale must be a finite number")
        return None
    return float(scale) * space.basis(k - 1)


def _validate_run(cfg, col, study, space):
    run = cfg.get("run", {})
    if not isinstance(run, dict):
        col.add("run", "must be a table")
        return {}
    T = run.get("T", 1.0)
    if not _is_num(T) or T <= 0:
        col.add("run.T", "T must be positive")
    for key in ("steps", "paths"):
        v = run.get(key, 1)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            col.add(f"run.{key}", f"{key} must be a positive integer")
    if study == "stability" and isinstance(run.get("paths", 100), int) and run.get("paths", 100) < 100:
        col.add("run.paths", "moment estimates need at least 100 paths")
    scheme = run.get("scheme", "mild_exponential")
    if scheme not in ("mild_exponential", "yosida_strong", "picard"):
        col.add("run.scheme", f"unknown scheme {scheme!r}")
    if scheme == "yosida_strong":
        n = run.get("n")
        if not _is_num(n) or n <= space.alpha:
            col.add("run.n", f"Yosida index must exceed alpha = {space.alpha:g} so that nI - A is invertible")
    if scheme == "picard":
        it = run.get("iterations", 5)
        if not isinstance(it, int) or it < 1:
            col.add("run.iterations", "iterations must be a positive integer")
    nv = run.get("n_values")
    if study in ("yosida_convergence",) or (study == "verify_ito" and _get(cfg, "ito.formula") == "mild"):
        if nv is None:
            col.add("run.n_values", "this study needs n_values")
    if nv is not None:
        a = _num_array(nv)
        if a is None or a.ndim != 1 or a.size < 1:
            col.add("run.n_values", "n_values must be a list of numbers")
        else:
            if np.any(a <= space.alpha):
                col.add("run.n_values", f"every Yosida index must exceed alpha = {space.alpha:g} "
                                        "so that nI - A is invertible")
            if np.any(np.diff(a) <= 0):
                col.add("run.n_values", "n_values must be strictly increasing")
    dv = run.get("dt_values")
    if dv is not None:
        a = _num_array(dv)
        if a is None or a.ndim != 1 or np.any(a <= 0) or np.any(np.diff(a) >= 0):
            col.add("run.dt_values", "dt_values must be positive and strictly decreasing")
    return run


def _validate_study_sections(cfg, col, study, space, coeffs):
    if study == "verify_ito":
        it = cfg.get("ito", {})
        f = it.get("formula", "strong")
        if f not in ito.FORMULAS:
            col.add("ito.formula", f"unknown formula {f!r} ({', '.join(ito.FORMULAS)})")
        if f == "yosida" and _get(cfg, "run.scheme") != "yosida_strong":
            col.add("run.scheme", "the yosida formula needs scheme = \"yosida_strong\" and n")
        psi = it.get("psi", "quadratic")
        if psi not in PSI_KINDS:
            col.add("ito.psi", f"unknown test function {psi!r}")
        if psi == "linear":
            v = _num_array(it.get("v"))
            if v is None or v.shape != (space.dim,):
                col.add("ito.v", f"linear test function needs v with {space.dim} entries")
        if psi == "semigroup_weighted" and (not _is_num(it.get("l", 0.0)) or it.get("l", 0.0) < 0):
            col.add("ito.l", "the semigroup lag l must be nonnegative")
        if psi == "gaussian_bump" and (not _is_num(it.get("sigma", 1.0)) or it.get("sigma", 1.0) <= 0):
            col.add("ito.sigma", "sigma must be positive")
    if study == "stability":
        st = cfg.get("stability", {})
        if st.get("preset") == "example4":
            if _get(cfg, "coefficients.kind") != "example4":
                col.add("stability.preset", "the example4 preset needs coefficients.kind = \"example4\"")
            else:
                try:
                    example4_lyapunov(float(_get(cfg, "coefficients.l", 1.0)))
                except StabilityError as e:
                    col.add("coefficients.l", str(e))
        elif "preset" in st:
            col.add("stability.preset", f"unknown preset {st['preset']!r}")
        else:
            for k in ("c1", "c2", "c3"):
                if k not in st:
                    col.add(f"stability.{k}", "missing Lyapunov constant")
            try:
                LyapunovSpec(ito.quadratic(), float(st.get("c1", 1)), float(st.get("c2", 1)),
                             float(st.get("c3", 1)), float(st.get("k1", 0)), float(st.get("k2", 0)),
                             float(st.get("k3", 0)), st.get("mode", "stability"))
            except (StabilityError, TypeError, ValueError) as e:
                col.add("stability", str(e))
    if study == "noise_audit":
        na = cfg.get("noise_audit", {})
        if na.get("trials", 100000) < 1000:
            col.add("noise_audit.trials", "the isometry audit needs at least 1000 trials")
        if not _is_num(na.get("interval", 0.5)) or na.get("interval", 0.5) <= 0:
            col.add("noise_audit.interval", "interval must be positive")


def validate(cfg: dict, text: str = "", source: str = "<config>", study: str | None = None):
    """Diagnostics for a parsed config; empty iff the scenario is runnable."""
    build = _build(cfg, text, source, study)
    return build[1]


def _build(cfg, text, source, study):
    col = _Collector(text, source)
    study = study or cfg.get("study")
    if study is None:
        col.add("study", f"no study selected (one of {', '.join(STUDIES)})")
    elif study not in STUDIES:
        col.add("study", f"unknown study {study!r} (one of {', '.join(STUDIES)})")
    seed = cfg.get("seed")
    if seed is None:
        col.add("seed", "seed is required; runs never draw implicit entropy")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        col.add("seed", "seed must be a nonnegative integer")
    space = _validate_space(cfg, col)
    qspec = _validate_wiener(cfg, col)
    levy = _validate_levy(cfg, col)
    if space is None or qspec is None or levy is None:
        return None, col.items
    coeffs = _validate_coeffs(cfg, col, space, qspec, levy)
    x0 = _validate_x0(cfg, col, space)
    run = _validate_run(cfg, col, study, space)
    if coeffs is not None:
        _validate_study_sections(cfg, col, study, space, coeffs)
        aud = audit_assumptions(coeffs, qspec, levy, samples=1000, seed=0)
        if not aud.passed:
            col.add("coefficients", f"declared growth/Lipschitz constants are exceeded at sampled points "
                                    f"(ratios {aud.max_growth_ratio:.3g}, {aud.max_lipschitz_ratio:.3g})")
    if col.items or coeffs is None or x0 is None:
        return None, col.items
    out = _get(cfg, "output.dir", "out")
    sections = {k: cfg.get(k, {}) for k in ("ito", "stability", "noise_audit", "coefficients")}
    return Scenario(study, int(seed), space, qspec, levy, coeffs, x0, run, sections, str(out),
                    text, source, cfg), []


def load_scenario(path, study: str | None = None, overrides: dict | None = None) -> Scenario:
    """Parse, apply overrides (``seed``, ``run.paths``, ``output.dir``) and validate."""
    text, cfg = load_text(path)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        head, _, tail = key.rpartition(".")
        tgt = cfg
        for part in filter(None, head.split(".")):
            tgt = tgt.setdefault(part, {})
        tgt[tail] = val
    sc, diags = _build(cfg, text, str(path), study)
    if diags:
        raise ConfigError(diags)
    return sc


def bundled_scenarios() -> dict:
    base = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(base.glob("*.cfg"))}
