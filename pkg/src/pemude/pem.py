"""Prediction-error-method universal differential equations.

A :class:`PemUdeProblem` couples a known (partial) vector field, a trainable
correction model added to selected state derivatives, and the observed
trajectory. During training the state is nudged towards the data by
``gain * (y_obs(t) - x)``; with a positive gain on a destabilising direction
this keeps chaotic trajectories close to the data and the loss surface
smooth.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import engine
from .errors import InvalidArgument
from .odesim import DynamicalSystem, TimeSeries, linear_interp
from .rbfnet import AdamWHyper, AdamWState, RbfNetwork, adamw_step, finite_difference_gradient


# ----------------------------------------------------------- corrections

@dataclass(frozen=True, eq=False)
class Correction:
    """A compiled correction model plus its layout arrays.

    ``targets`` lists the state indices that receive the model outputs.
    """

    eval: object
    vjp: object
    meta: np.ndarray
    aux: np.ndarray
    targets: np.ndarray
    n_params: int

    def __call__(self, theta, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = np.empty((x.shape[0], max(len(self.targets), 1)))
        work = np.empty(4 * (x.shape[1] + 64) + self.meta.shape[0])
        theta = np.asarray(theta, float)
        for n in range(x.shape[0]):
            self.eval(theta, self.meta, self.aux, x[n], out[n], work)
        return out[:, :len(self.targets)]


def network_correction(net: RbfNetwork, targets: Sequence[int]) -> Correction:
    targets = np.asarray(targets, dtype=np.int64)
    if net.n_out != targets.size:
        raise InvalidArgument("network outputs must match the number of target states")
    return Correction(engine.net_eval, engine.net_vjp, net.meta(), net.aux(), targets, net.n_params)


def polynomial_correction(exponents, targets: Sequence[int], exog=()) -> Correction:
    """Sparse polynomial: ``theta`` holds one coefficient per (term, target).

    ``exponents`` has one row per term over the state variables followed by
    the exogenous constants ``exog``.
    """
    E = np.asarray(exponents, dtype=np.int64).reshape(len(exponents), -1)
    targets = np.asarray(targets, dtype=np.int64)
    exog = np.asarray(exog, dtype=float).reshape(-1)
    if np.any(E < 0):
        raise InvalidArgument("exponents must be non-negative")
    meta = np.concatenate([[E.shape[1], E.shape[0], targets.size], E.ravel()]).astype(np.int64)
    return Correction(engine.poly_eval, engine.poly_vjp, meta, exog, targets, E.shape[0] * targets.size)


def null_correction(dim: int) -> Correction:
    meta = np.array([dim, 0, 0], dtype=np.int64)
    return Correction(engine.poly_eval, engine.poly_vjp, meta, np.zeros(0),
                      np.zeros(0, dtype=np.int64), 0)


# --------------------------------------------------------------- problem

@dataclass(frozen=True, eq=False)
class PemUdeProblem:
    """Known dynamics + correction, fitted to ``data`` by RK4 with PEM nudging.

    ``data`` carries one column per state; columns that are not observed are
    ignored by both the loss and the nudging term. The integrator takes
    ``substeps`` equal RK4 steps between consecutive observations.
    """

    known: DynamicalSystem
    correction: Correction
    data: TimeSeries
    gain: np.ndarray
    x0: Optional[np.ndarray] = None
    observed: Optional[np.ndarray] = None
    substeps: int = 4
    lower: Optional[np.ndarray] = None
    bound: float = 1e8

    def __post_init__(self):
        d = self.known.dim
        if self.known.kernel is None:
            raise InvalidArgument("known dynamics need a compiled kernel")
        if self.data.dim != d:
            raise InvalidArgument(f"data has {self.data.dim} channels, system has {d}")
        if len(self.data) < 2:
            raise InvalidArgument("need at least two observations")
        spacing = np.diff(self.data.times)
        if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12):
            raise InvalidArgument("observations must be uniformly spaced")
        if self.substeps < 1:
            raise InvalidArgument("substeps must be >= 1")
        gain = np.broadcast_to(np.asarray(self.gain, float), (d,)).copy()
        if np.any(gain < 0):
            raise InvalidArgument("gains must be non-negative")
        mask = np.asarray(self.known.observed if self.observed is None else self.observed, bool)
        if mask.shape != (d,) or not mask.any():
            raise InvalidArgument("observation mask must select at least one state")
        if np.any(gain[~mask] != 0):
            raise InvalidArgument("nudging an unobserved state is not possible")
        x0 = self.data.values[0].copy() if self.x0 is None else np.asarray(self.x0, float).copy()
        lower = np.full(d, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("gain", gain)
        set_("observed", mask)
        set_("x0", x0)
        set_("lower", lower)

        n_obs = len(self.data)
        h = float(spacing[0]) / self.substeps
        n_steps = (n_obs - 1) * self.substeps
        # stage times t_n, t_n + h/2, t_n + h of every RK4 step
        s = np.arange(n_steps)
        t_stage = self.data.times[0] + h * (s[:, None] + np.array([0.0, 0.5, 1.0])[None, :])
        set_("_h", h)
        set_("_n_steps", n_steps)
        set_("_t_stage", t_stage)
        set_("_obs", np.where(mask, self.data.values, 0.0))
        set_("_wts", mask / (n_obs * mask.sum()))
        set_("_ystage", self.stage_observations(self.data.values))
        if self.known.stimulus is None:
            ust = np.zeros((n_steps, 3, 0))
        else:
            flat = np.array([np.atleast_1d(self.known.stimulus(t)) for t in t_stage.ravel()], float)
            ust = flat.reshape(n_steps, 3, -1)
        set_("_ustage", np.ascontiguousarray(ust))

    # -- geometry
    @property
    def h(self) -> float:
        return self._h

    @property
    def n_steps(self) -> int:
        return self._n_steps

    @property
    def times(self) -> np.ndarray:
        return self.data.times

    def stage_observations(self, values) -> np.ndarray:
        """Linear interpolation of ``values`` (rows at the data times) at all stage times."""
        series = TimeSeries(self.data.times, values, self.data.channel_names)
        y = linear_interp(series, self._t_stage.ravel()).reshape(self._n_steps, 3, -1)
        y[:, :, ~self.observed] = 0.0
        return np.ascontiguousarray(y)

    def with_gain(self, gain) -> "PemUdeProblem":
        return _replace(self, gain=gain)

    def with_data(self, data: TimeSeries) -> "PemUdeProblem":
        return _replace(self, data=data, x0=None)

    def with_correction(self, correction: Correction) -> "PemUdeProblem":
        return _replace(self, correction=correction)

    def with_params(self, pvec) -> "PemUdeProblem":
        k = self.known.kernel
        known = _dc_replace(self.known, params=np.asarray(pvec, float),
                            kernel=_dc_replace(k, pvec=np.asarray(pvec, float)))
        return _replace(self, known=known)

    # -- evaluation
    def _args(self, theta, ystage=None):
        c = self.correction
        k = self.known.kernel
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (c.n_params,):
            raise InvalidArgument(f"expected {c.n_params} parameters, got {theta.shape}")
        ys = self._ystage if ystage is None else ystage
        return k, c, theta, ys

    def simulate(self, theta, ystage=None) -> TimeSeries:
        """PEM-corrected trajectory at the observation times (failed flag on divergence)."""
        k, c, theta, ys = self._args(theta, ystage)
        states, n_ok = engine.simulate(k.f, k.pvec, c.eval, theta, c.meta, c.aux, c.targets,
                                       self.gain, self.lower, self.x0, self._h, self._n_steps,
                                       self._ustage, ys, self.bound)
        rows = states[::self.substeps]
        n_rows = (n_ok - 1) // self.substeps + 1
        if n_ok < self._n_steps + 1:
            return TimeSeries(self.times[:n_rows], rows[:n_rows], self.known.channel_names, failed=True)
        return TimeSeries(self.times, rows, self.known.channel_names)

    def loss(self, theta, ystage=None) -> float:
        k, c, theta, ys = self._args(theta, ystage)
        val, _ = engine.loss_only(k.f, k.pvec, c.eval, theta, c.meta, c.aux, c.targets, self.gain,
                                  self.lower, self.x0, self._h, self._n_steps, self._ustage, ys,
                                  self.substeps, self._obs, self._wts, self.bound)
        return float(val)

    def loss_and_grad(self, theta, mode: str = "reverse", ystage=None, fd_step: float = 1e-5):
        """(loss, gradient, diverged).

        ``mode`` is ``"reverse"`` (discrete adjoint), ``"forward"`` (state
        sensitivities) or ``"fd"`` (central differences, slow).
        """
        k, c, theta, ys = self._args(theta, ystage)
        if mode == "fd":
            val = self.loss(theta, ys)
            if val >= engine.SENTINEL:
                return val, np.zeros_like(theta), True
            g = finite_difference_gradient(lambda th: self.loss(th, ys), theta, fd_step)
            return val, g, False
        fn = {"reverse": engine.loss_grad, "forward": engine.loss_grad_tangent}.get(mode)
        if fn is None:
            raise InvalidArgument(f"unknown gradient mode {mode!r}")
        val, g, bad = fn(k.f, k.jac, k.pvec, c.eval, c.vjp, theta, c.meta, c.aux, c.targets,
                         self.gain, self.lower, self.x0, self._h, self._n_steps, self._ustage, ys,
                         self.substeps, self._obs, self._wts, self.bound)
        return float(val), g, bool(bad)

    def rhs(self, theta, x, t) -> np.ndarray:
        """Corrected vector field F(x, t) with the observation interpolated at t."""
        k, c, theta, _ = self._args(theta)
        y = np.where(self.observed, linear_interp(self.data, t), 0.0)
        u = np.zeros(0) if self.known.stimulus is None else np.atleast_1d(self.known.stimulus(t)).astype(float)
        return engine.rhs_eval(k.f, k.pvec, u, c.eval, theta, c.meta, c.aux, c.targets,
                               self.gain, np.asarray(x, float), y)


def _dc_replace(obj, **kw):
    from dataclasses import replace
    return replace(obj, **kw)


def _replace(problem: PemUdeProblem, **kw) -> PemUdeProblem:
    base = dict(known=problem.known, correction=problem.correction, data=problem.data,
                gain=problem.gain, x0=problem.x0, observed=problem.observed,
                substeps=problem.substeps, lower=problem.lower, bound=problem.bound)
    base.update(kw)
    return PemUdeProblem(**base)


def mse_loss(problem: PemUdeProblem, theta) -> float:
    return problem.loss(theta)


def pem_rhs(problem: PemUdeProblem, theta, x, t) -> np.ndarray:
    return problem.rhs(theta, x, t)


def free_run(known: DynamicalSystem, correction: Correction, theta, x0, t_end: float, dt: float,
             record_every: int = 1, lower=None, bound: float = 1e8) -> TimeSeries:
    """RK4 solution of known dynamics plus correction with no nudging.

    Returns the samples every ``record_every`` steps; a blow-up yields a
    failed-flagged partial series instead of raising.
    """
    if known.kernel is None:
        raise InvalidArgument("free_run needs a compiled kernel")
    if known.stimulus is not None:
        raise InvalidArgument("free_run does not support stimuli")
    d = known.dim
    n = int(round(t_end / dt))
    lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, float)
    k = known.kernel
    c = correction
    states, n_ok = engine.simulate(k.f, k.pvec, c.eval, np.ascontiguousarray(theta, dtype=float),
                                   c.meta, c.aux, c.targets, np.zeros(d), lower,
                                   np.asarray(x0, dtype=float), dt, n, np.zeros((n, 3, 0)),
                                   np.zeros((n, 3, d)), bound)
    rows = states[:n_ok:record_every]
    times = np.arange(rows.shape[0]) * record_every * dt
    return TimeSeries(times, rows, known.channel_names, failed=n_ok < n + 1)


# --------------------------------------------------------------- training

@dataclass
class TrainReport:
    loss_trace: np.ndarray
    final_theta: np.ndarray
    best_theta: np.ndarray
    best_loss: float
    wall_time: float
    diverged: bool = False
    epochs: int = 0
    n_diverged: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1]) if len(self.loss_trace) else float("nan")

    def save(self, json_path, csv_path=None) -> Path:
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "epochs": self.epochs,
            "final_loss": self.final_loss,
            "best_loss": self.best_loss,
            "wall_time_s": self.wall_time,
            "diverged": self.diverged,
            "n_diverged_epochs": self.n_diverged,
            "final_theta": [float(v) for v in self.final_theta],
            "meta": self.meta,
        }
        json_path.write_text(json.dumps(doc, indent=1))
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["epoch", "loss"])
                for i, v in enumerate(self.loss_trace):
                    wr.writerow([i + 1, repr(float(v))])
        return json_path


def train(problem: PemUdeProblem, theta0, epochs: int, hyper: AdamWHyper = AdamWHyper(),
          seed: int = 0, jitter: float = 1e-2, max_consecutive_diverged: int = 10,
          callback: Optional[Callable[[int, float], None]] = None,
          time_limit: Optional[float] = None, lr_final: Optional[float] = None,
          recover: bool = True) -> TrainReport:
    """Full-batch AdamW on the PEM loss.

    Each epoch the observations fed to the nudging term are perturbed by
    Gaussian noise with standard deviation ``jitter`` times the per-channel
    data standard deviation (fresh draw every epoch); the loss target stays
    the clean data. Diverged solves count as sentinel-loss, zero-gradient
    epochs; more than ``max_consecutive_diverged`` in a row aborts the run.
    With ``recover`` a diverged epoch also restores the last parameters that
    solved cleanly, clears the first moment and halves the step size for the
    rest of the run. With ``lr_final`` the learning rate decays log-linearly
    from the configured value to ``lr_final`` over the run.
    """
    if epochs < 0:
        raise InvalidArgument("epochs must be non-negative")
    theta = np.array(theta0, dtype=float)
    state = AdamWState.zeros(theta.size, hyper)
    rng = np.random.default_rng(seed)
    base = problem.data.values
    sd = base.std(axis=0)
    trace = np.empty(epochs)
    best, best_theta = np.inf, theta.copy()
    streak = n_bad = 0
    diverged = False
    t_start = time.perf_counter()
    done = 0
    ratio = 1.0 if lr_final is None else lr_final / hyper.learning_rate
    if ratio <= 0:
        raise InvalidArgument("lr_final must be positive")
    backoff = 1.0
    last_good = theta.copy()
    for ep in range(epochs):
        ys = None
        if jitter > 0:
            noisy = base + rng.standard_normal(base.shape) * (jitter * sd)
            ys = problem.stage_observations(noisy)
        val, g, bad = problem.loss_and_grad(theta, ystage=ys)
        trace[ep] = val
        done = ep + 1
        if bad:
            streak += 1
            n_bad += 1
            if streak > max_consecutive_diverged:
                diverged = True
                break
            if recover:
                theta = last_good.copy()
                state = AdamWState(np.zeros_like(theta), state.second_moment, state.step_count, hyper)
                backoff *= 0.5
        else:
            streak = 0
            last_good = theta.copy()
            if val < best:
                best, best_theta = val, theta.copy()
        if not (bad and recover):
            theta, state = adamw_step(theta, g, state, backoff * ratio ** (ep / max(epochs - 1, 1)))
        if callback is not None:
            callback(ep + 1, val)
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            break
    return TrainReport(trace[:done], theta, best_theta, float(best),
                       time.perf_counter() - t_start, diverged, done, n_bad,
                       {"lr_backoff": backoff})


@dataclass(frozen=True)
class RegressionSet:
    inputs: np.ndarray
    targets: np.ndarray
    times: np.ndarray
    failed: bool = False

    def __iter__(self):
        return iter((self.inputs, self.targets))


def export_regression_set(problem: PemUdeProblem, theta, sample_times=None,
                          use_data: bool = False) -> RegressionSet:
    """States and correction outputs for sparse regression.

    By default the states are the PEM-corrected trajectory, which is a
    denoised version of the data. ``sample_times`` resamples it on any grid
    inside the data window through the cubic Hermite interpolant of the RK4
    step states, so grids sharing a time give identical pairs there.
    ``use_data`` uses the raw observations instead. A diverged solve gives
    the pairs up to the failure point with ``failed`` set. Unpacks as
    ``(inputs, targets)``.
    """
    theta = np.asarray(theta, float)
    if use_data:
        X, ts, failed = problem.data.values, problem.times, False
    else:
        k, c, theta, ys = problem._args(theta)
        states, n_ok = engine.simulate(k.f, k.pvec, c.eval, theta, c.meta, c.aux, c.targets,
                                       problem.gain, problem.lower, problem.x0, problem.h,
                                       problem.n_steps, problem._ustage, ys, problem.bound)
        failed = n_ok < problem.n_steps + 1
        t_steps = problem.times[0] + problem.h * np.arange(n_ok)
        states = states[:n_ok]
        if sample_times is None:
            keep = np.arange(0, n_ok, problem.substeps)
            X, ts = states[keep], t_steps[keep]
        else:
            ts = np.asarray(sample_times, float).reshape(-1)
            lo, hi = problem.times[0], problem.times[-1]
            if ts.size and (ts.min() < lo - 1e-12 or ts.max() > hi + 1e-12):
                raise InvalidArgument("sample_times must lie inside the data window")
            if n_ok < 2:
                X, ts = states[:0], ts[:0]
            else:
                ts = ts[ts <= t_steps[-1] + 1e-12]
                dX = np.array([problem.rhs(theta, x, t) for x, t in zip(states, t_steps)])
                X = CubicHermiteSpline(t_steps, states, dX, axis=0)(ts)
                # exact step states where a sample time hits a step node
                idx = np.rint((ts - t_steps[0]) / problem.h).astype(int)
                idx = np.clip(idx, 0, n_ok - 1)
                hit = np.abs(t_steps[idx] - ts) <= 1e-9 * max(1.0, abs(hi))
                X[hit] = states[idx[hit]]
    X = np.array(X)
    Y = problem.correction(theta, X) if len(X) else np.zeros((0, problem.correction.targets.size))
    return RegressionSet(X, np.asarray(Y), np.asarray(ts, float), bool(failed))
