"""Sparse symbolic regression (STLSQ) over polynomial libraries.

Typical use: evaluate a trained correction network on the states it saw,
fit a sparse polynomial to its outputs, then refine the surviving
coefficients against the trajectory loss with the support frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.signal import savgol_filter

from .errors import InvalidArgument
from .odesim import TimeSeries

DEFAULT_THRESHOLD = 0.1
DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class FeatureLibrary:
    """All monomials up to ``max_degree`` in graded lexicographic order, constant first."""

    variable_names: Tuple[str, ...]
    max_degree: int = 2

    def __post_init__(self):
        names = tuple(self.variable_names)
        if not names:
            raise InvalidArgument("need at least one variable")
        if len(set(names)) != len(names):
            raise InvalidArgument("variable names must be distinct")
        if self.max_degree < 1:
            raise InvalidArgument("max_degree must be >= 1")
        object.__setattr__(self, "variable_names", names)

    @property
    def n_vars(self) -> int:
        return len(self.variable_names)

    @property
    def exponents(self) -> np.ndarray:
        rows = [np.zeros(self.n_vars, dtype=int)]
        for deg in range(1, self.max_degree + 1):
            for combo in combinations_with_replacement(range(self.n_vars), deg):
                e = np.zeros(self.n_vars, dtype=int)
                for i in combo:
                    e[i] += 1
                rows.append(e)
        return np.array(rows)

    @property
    def terms(self) -> List[str]:
        return [self.term_name(e) for e in self.exponents]

    def term_name(self, e) -> str:
        parts = []
        for name, k in zip(self.variable_names, e):
            if k == 1:
                parts.append(name)
            elif k > 1:
                parts.append(f"{name}^{k}")
        return "*".join(parts) if parts else "1"

    def __len__(self):
        return len(self.exponents)

    def evaluate(self, samples) -> np.ndarray:
        X = np.atleast_2d(np.asarray(samples, dtype=float))
        if X.shape[1] != self.n_vars:
            raise InvalidArgument(f"samples have {X.shape[1]} columns, library has {self.n_vars} variables")
        E = self.exponents
        return np.prod(X[:, None, :] ** E[None, :, :], axis=2)


def build_library(samples, names: Sequence[str], max_degree: int = 2):
    """(FeatureLibrary, Theta) with one column per term."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.size == 0:
        raise InvalidArgument("no samples")
    lib = FeatureLibrary(tuple(names), max_degree)
    return lib, lib.evaluate(X)


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    library: FeatureLibrary
    coefficients: np.ndarray
    target: str = "y"
    threshold: float = DEFAULT_THRESHOLD
    provenance: str = "trained-net"
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        xi = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if xi.size != len(self.library):
            raise InvalidArgument("one coefficient per library term")
        object.__setattr__(self, "coefficients", xi)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    @property
    def support_terms(self) -> frozenset:
        terms = self.library.terms
        return frozenset(terms[i] for i in self.support)

    @property
    def empty(self) -> bool:
        return self.support.size == 0

    def __eq__(self, other):
        return (isinstance(other, SymbolicModel) and self.library == other.library
                and self.target == other.target
                and np.array_equal(self.coefficients, other.coefficients))

    def evaluate(self, states) -> np.ndarray:
        return self.library.evaluate(states) @ self.coefficients

    def coefficient(self, term: str) -> float:
        return float(self.coefficients[self.library.terms.index(term)])

    def with_coefficients(self, xi, **kw) -> "SymbolicModel":
        from dataclasses import replace
        return replace(self, coefficients=np.asarray(xi, float), **kw)

    def render(self, digits: int = 3) -> str:
        terms = self.library.terms
        pieces = []
        for i in self.support:
            c = self.coefficients[i]
            mag = f"{abs(c):.{digits}f}"
            body = mag if terms[i] == "1" else f"{mag}*{terms[i]}"
            if not pieces:
                pieces.append(("-" if c < 0 else "") + body)
            else:
                pieces.append(("- " if c < 0 else "+ ") + body)
        rhs = " ".join(pieces) if pieces else "0"
        return f"d{self.target}/dt = {rhs}"

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "variables": list(self.library.variable_names),
            "max_degree": self.library.max_degree,
            "terms": self.library.terms,
            "coefficients": [float(f"{c:.17g}") for c in self.coefficients],
            "threshold": self.threshold,
            "provenance": self.provenance,
            "flags": list(self.flags),
            "equation": self.render(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SymbolicModel":
        lib = FeatureLibrary(tuple(doc["variables"]), int(doc["max_degree"]))
        if list(doc["terms"]) != lib.terms:
            raise InvalidArgument("term list does not match the library ordering")
        return cls(lib, np.array(doc["coefficients"], float), doc.get("target", "y"),
                   float(doc.get("threshold", DEFAULT_THRESHOLD)), doc.get("provenance", ""),
                   tuple(doc.get("flags", ())))


def save_models(path, models: Sequence[SymbolicModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"models": [m.to_dict() for m in models]}, indent=1))
    return path


def load_models(path) -> List[SymbolicModel]:
    doc = json.loads(Path(path).read_text())
    return [SymbolicModel.from_dict(d) for d in doc["models"]]


# ------------------------------------------------------------------ STLSQ

def _ridge_solve(A, y, ridge):
    """Least squares; the ridge term is only added when ``A`` is rank deficient."""
    xi, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank == A.shape[1] or ridge == 0:
        return xi
    return np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)


def stlsq_coefficients(Theta, y, threshold: float = DEFAULT_THRESHOLD, ridge: float = DEFAULT_RIDGE,
                       max_iter: int = 50) -> np.ndarray:
    Theta = np.asarray(Theta, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if Theta.ndim != 2 or Theta.shape[0] != y.size:
        raise InvalidArgument("Theta rows must match the target length")
    if Theta.shape[0] < Theta.shape[1]:
        raise InvalidArgument("need at least as many samples as library terms")
    if threshold < 0 or ridge < 0:
        raise InvalidArgument("threshold and ridge must be non-negative")
    xi = _ridge_solve(Theta, y, ridge)
    active = np.ones(xi.size, dtype=bool)
    for _ in range(max_iter):
        keep = np.abs(xi) >= threshold
        if not keep.any():
            return np.zeros_like(xi)
        if np.array_equal(keep, active) and np.all(xi[~keep] == 0):
            break
        xi = np.zeros_like(xi)
        xi[keep] = _ridge_solve(Theta[:, keep], y, ridge)
        active = keep
    return xi


def stlsq(Theta, y, threshold: float = DEFAULT_THRESHOLD, ridge: float = DEFAULT_RIDGE,
          library: Optional[FeatureLibrary] = None, target: str = "y",
          provenance: str = "trained-net") -> SymbolicModel:
    """Sequential thresholded least squares.

    Alternates a least-squares fit on the active terms (ridge-regularised if
    they are rank deficient) with zeroing every coefficient below
    ``threshold`` until the support stops changing. An empty result carries the ``"empty-model"`` flag.
    """
    Theta = np.asarray(Theta, dtype=float)
    xi = stlsq_coefficients(Theta, y, threshold, ridge)
    if library is None:
        library = _library_for_width(Theta.shape[1])
    flags = ("empty-model",) if not np.any(xi) else ()
    return SymbolicModel(library, xi, target, threshold, provenance, flags)


def _library_for_width(n_cols: int) -> FeatureLibrary:
    # a degree-1 library over anonymous variables with n_cols - 1 inputs
    return FeatureLibrary(tuple(f"u{i}" for i in range(n_cols - 1)), 1)


def threshold_sweep(Theta, y, thresholds, **kw) -> Dict[float, SymbolicModel]:
    return {float(t): stlsq(Theta, y, t, **kw) for t in thresholds}


# ------------------------------------------------------------- refinement

@dataclass
class RefineResult:
    models: List[SymbolicModel]
    loss: float
    initial_loss: float
    converged: bool
    diverged: bool = False
    n_evals: int = 0
    message: str = ""
    history: list = field(default_factory=list)


def refine_parameters(models: Sequence[SymbolicModel], problem, exog: Sequence[float] = (),
                      max_iter: int = 500, gtol: float = 1e-12) -> RefineResult:
    """Tune the nonzero coefficients of ``models`` against the trajectory loss.

    ``problem`` is a :class:`pemude.pem.PemUdeProblem` whose known dynamics
    lack the modelled terms; its correction is replaced by the polynomial
    built from the models' frozen supports. Model targets are matched to
    state channels by name; library variables beyond the state dimension take
    the constant values ``exog``.
    """
    from .pem import polynomial_correction

    models = list(models)
    if not models:
        raise InvalidArgument("no models to refine")
    lib = models[0].library
    if any(m.library != lib for m in models):
        raise InvalidArgument("models must share one library")
    if any(m.empty for m in models):
        raise InvalidArgument("cannot refine an empty model")
    names = problem.known.channel_names
    targets = [names.index(m.target) for m in models]
    terms = sorted(set().union(*(set(m.support) for m in models)))
    E = lib.exponents[terms]
    corr = polynomial_correction(E, targets, exog)
    prob = problem.with_correction(corr)
    n_out = len(models)
    # theta layout: (term, target) row-major; only supported entries are free
    free = [ti * n_out + k for ti, t in enumerate(terms) for k, m in enumerate(models)
            if m.coefficients[t] != 0]
    full0 = np.zeros(len(terms) * n_out)
    for ti, t in enumerate(terms):
        for k, m in enumerate(models):
            full0[ti * n_out + k] = m.coefficients[t]
    p0 = full0[free]

    best = {"loss": np.inf, "p": p0.copy()}
    history = []
    n_evals = 0

    def fun(p):
        nonlocal n_evals
        n_evals += 1
        full = full0.copy()
        full[free] = p
        val, g, bad = prob.loss_and_grad(full)
        history.append(val)
        if not bad and val < best["loss"]:
            best["loss"], best["p"] = val, p.copy()
        return val, g[free]

    init_loss = prob.loss(full0)
    res = minimize(fun, p0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20})
    diverged = not np.isfinite(res.fun) or res.fun >= 1e10
    p = best["p"]
    out = []
    for k, m in enumerate(models):
        xi = np.zeros(len(lib))
        for ti, t in enumerate(terms):
            j = ti * n_out + k
            if j in free:
                xi[t] = p[free.index(j)]
        flags = m.flags + (("diverged",) if diverged else ())
        out.append(m.with_coefficients(xi, provenance=m.provenance + "+refined", flags=flags))
    return RefineResult(out, float(best["loss"]), float(init_loss), bool(res.success), diverged,
                        n_evals, str(res.message), history)


# ------------------------------------------------------- direct baseline

def savgol_derivative(series: TimeSeries, window: int = 11, order: int = 3):
    """Smoothed states and their time derivatives by local polynomial fits."""
    if len(series) < window:
        raise InvalidArgument(f"need at least {window} samples for the smoothing window")
    dt = float(np.mean(np.diff(series.times)))
    X = savgol_filter(series.values, window, order, axis=0)
    dX = savgol_filter(series.values, window, order, deriv=1, delta=dt, axis=0)
    return X, dX


def direct_stlsq_on_derivatives(noisy: TimeSeries, thresholds=(0.1, 0.2, 0.3, 0.4, 0.5),
                                target: str = "y", max_degree: int = 2, window: int = 11,
                                order: int = 3, ridge: float = DEFAULT_RIDGE) -> Dict[float, SymbolicModel]:
    """Baseline: STLSQ straight on Savitzky-Golay derivative estimates of the data."""
    X, dX = savgol_derivative(noisy, window, order)
    lib, Theta = build_library(X, noisy.channel_names, max_degree)
    y = dX[:, noisy.channel_names.index(target)]
    return {float(t): stlsq(Theta, y, t, ridge, lib, target, "direct-savgol") for t in thresholds}
