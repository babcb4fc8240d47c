"""ODE integration, trajectory containers and observation interpolation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853

from .errors import DivergedTrajectory, EmptySeries, InvalidArgument, MaxStepsExceeded

ADAPTIVE = "adaptive-rk"
RK4 = "rk4-fixed"


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Multichannel trajectory sampled at strictly increasing times."""

    times: np.ndarray
    values: np.ndarray
    channel_names: tuple = ()
    failed: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.shape[0] != times.shape[0]:
            raise InvalidArgument(
                f"{times.shape[0]} time points but {values.shape[0]} state vectors"
            )
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise InvalidArgument("times must be strictly increasing")
        if not self.failed and not np.all(np.isfinite(values)):
            raise InvalidArgument("non-finite values in a series not flagged as failed")
        names = tuple(self.channel_names) or tuple(f"x{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise InvalidArgument("one channel name per state dimension required")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.times.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.channel_names == other.channel_names
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_names.index(name)]

    def window(self, t0: float, t1: float) -> "TimeSeries":
        m = (self.times >= t0) & (self.times <= t1)
        return TimeSeries(self.times[m], self.values[m], self.channel_names, self.failed)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table = np.column_stack([self.times, self.values])
        np.savetxt(path, table, delimiter=",", fmt="%.17g",
                   header=",".join(("t",) + self.channel_names), comments="")
        return path

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such recording: {path}")
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise InvalidArgument(f"{path}: first column must be 't'")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, 0], table[:, 1:], tuple(header[1:]))


@dataclass(frozen=True)
class Kernel:
    """Compiled right-hand side used by the fast fixed-step paths.

    ``f(x, p, u, out)`` writes the derivative and ``jac(x, p, u, J)`` the
    state Jacobian; both are numba-compiled.
    """

    f: Any
    jac: Any
    pvec: np.ndarray


@dataclass(frozen=True)
class DynamicalSystem:
    dim: int
    rhs: Callable  # (x, t, params, u) -> dx/dt
    params: Any = None
    stimulus: Optional[Callable] = None  # t -> vector
    observed: Optional[tuple] = None  # per-state bool, identity or unobserved
    channel_names: tuple = ()
    kernel: Optional[Kernel] = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("dim must be positive")
        obs = (True,) * self.dim if self.observed is None else tuple(bool(o) for o in self.observed)
        if len(obs) != self.dim:
            raise InvalidArgument("observation map needs one entry per state")
        object.__setattr__(self, "observed", obs)
        if not self.channel_names:
            object.__setattr__(self, "channel_names", tuple(f"x{i}" for i in range(self.dim)))

    def __call__(self, x, t):
        u = None if self.stimulus is None else self.stimulus(t)
        return np.asarray(self.rhs(x, t, self.params, u), dtype=float)

    def observe(self, x):
        """Identity on observed states, zero elsewhere."""
        return np.where(np.asarray(self.observed), x, 0.0)


@dataclass(frozen=True)
class SolverConfig:
    method: str = ADAPTIVE
    abstol: float = 1e-8
    reltol: float = 1e-8
    dt: float = 0.01
    max_steps: int = 10_000_000
    save_times: Optional[np.ndarray] = field(default=None, compare=False)
    blowup: float = 1e8

    def __post_init__(self):
        if self.method not in (ADAPTIVE, RK4):
            raise InvalidArgument(f"unknown method {self.method!r}")
        if self.abstol <= 0 or self.reltol <= 0:
            raise InvalidArgument("abstol and reltol must be positive")
        if self.method == RK4 and self.dt <= 0:
            raise InvalidArgument("dt must be positive for rk4-fixed")
        if self.max_steps < 1:
            raise InvalidArgument("max_steps must be positive")


TRAINING_SOLVER = SolverConfig(abstol=1e-6, reltol=1e-6)


def _check_save_times(save_times, t0, t1):
    s = np.asarray(save_times, dtype=float).reshape(-1)
    if s.size == 0:
        raise InvalidArgument("save_times is empty")
    if np.any(np.diff(s) <= 0):
        raise InvalidArgument("save_times must be strictly increasing")
    if s[0] < t0 - 1e-12 * max(1.0, abs(t0)) or s[-1] > t1 + 1e-12 * max(1.0, abs(t1)):
        raise InvalidArgument("save_times must lie inside tspan")
    return s


def _bad(x, bound):
    return not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound


def integrate(system: DynamicalSystem, x0, tspan, config: SolverConfig = SolverConfig()) -> TimeSeries:
    """Solve ``system`` from ``x0`` over ``tspan``.

    Returns samples at ``config.save_times`` if given, otherwise at every
    accepted step. Raises :class:`DivergedTrajectory` carrying the partial
    trajectory when the state stops being finite (or exceeds
    ``config.blowup``), and :class:`MaxStepsExceeded` when the step budget
    runs out.
    """
    x0 = np.array(x0, dtype=float).reshape(-1)
    if x0.shape[0] != system.dim:
        raise InvalidArgument(f"x0 has dimension {x0.shape[0]}, system has {system.dim}")
    t0, t1 = float(tspan[0]), float(tspan[1])
    if not t1 > t0:
        raise InvalidArgument("tspan must satisfy t1 > t0")
    save = None if config.save_times is None else _check_save_times(config.save_times, t0, t1)
    if config.method == RK4:
        ts, xs, ok = _rk4(system, x0, t0, t1, config, save)
    else:
        ts, xs, ok = _adaptive(system, x0, t0, t1, config, save)
    ts = np.asarray(ts)
    xs = np.asarray(xs).reshape(len(ts), system.dim)
    if not ok:
        partial = TimeSeries(ts, xs, system.channel_names, failed=True)
        last = ts[-1] if len(ts) else t0
        raise DivergedTrajectory(f"trajectory diverged after t={last:.6g}", partial)
    return TimeSeries(ts, xs, system.channel_names)


def _adaptive(system, x0, t0, t1, cfg, save):
    solver = DOP853(lambda t, x: system(x, t), t0, x0, t1,
                    rtol=cfg.reltol, atol=cfg.abstol)
    ts, xs = [], []
    k = 0
    if save is None:
        ts.append(t0)
        xs.append(x0.copy())
    else:
        while k < save.size and save[k] <= t0:
            ts.append(save[k])
            xs.append(x0.copy())
            k += 1
    steps = 0
    while solver.status == "running":
        with np.errstate(all="ignore"):
            solver.step()
        steps += 1
        if solver.status == "failed" or _bad(solver.y, cfg.blowup):
            return ts, xs, False
        if steps > cfg.max_steps and solver.status == "running":
            raise MaxStepsExceeded(f"more than {cfg.max_steps} steps before t={t1}")
        if save is None:
            ts.append(solver.t)
            xs.append(solver.y.copy())
        else:
            j = k
            while j < save.size and (save[j] <= solver.t or solver.status == "finished"):
                j += 1
            if j > k:
                dense = solver.dense_output()
                chunk = save[k:j]
                vals = dense(chunk).T.reshape(-1, system.dim)
                # last point comes from the step itself, not the interpolant
                if solver.status == "finished" and chunk[-1] >= t1 - 1e-12 * max(1.0, abs(t1)):
                    vals[-1] = solver.y
                ts.extend(chunk)
                xs.extend(vals)
                k = j
    return ts, xs, True


def rk4_step(fun, x, t, h):
    k1 = fun(x, t)
    k2 = fun(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = fun(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = fun(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4(system, x0, t0, t1, cfg, save):
    grid = save if save is not None else None
    if grid is None:
        n = max(1, int(math.ceil((t1 - t0) / cfg.dt - 1e-9)))
        grid = t0 + (t1 - t0) * np.arange(n + 1) / n
    ts, xs = [], []
    x = x0.copy()
    t = t0
    steps = 0
    for target in grid:
        span = target - t
        if span > 0:
            n = max(1, int(math.ceil(span / cfg.dt - 1e-9)))
            h = span / n
            for i in range(n):
                with np.errstate(all="ignore"):
                    x = rk4_step(system, x, t + i * h, h)
                steps += 1
                if steps > cfg.max_steps:
                    raise MaxStepsExceeded(f"more than {cfg.max_steps} steps before t={t1}")
                if _bad(x, cfg.blowup):
                    return ts, xs, False
            t = target
        ts.append(target)
        xs.append(x.copy())
    return ts, xs, True


def linear_interp(data: TimeSeries, t):
    """Per-channel linear interpolation, clamped to the end values outside the data window.

    Accepts a scalar time (returns a state vector) or an array of times
    (returns one row per time).
    """
    if len(data) == 0:
        raise EmptySeries("cannot interpolate an empty series")
    times, values = data.times, data.values
    tq = np.asarray(t, dtype=float)
    scalar = tq.ndim == 0
    tq = np.atleast_1d(tq)
    if len(data) == 1:
        out = np.repeat(values[:1], tq.size, axis=0)
        return out[0] if scalar else out
    i = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, len(times) - 2)
    w = (tq - times[i]) / (times[i + 1] - times[i])
    w = np.clip(w, 0.0, 1.0)[:, None]
    out = (1.0 - w) * values[i] + w * values[i + 1]
    return out[0] if scalar else out


def add_observation_noise(data: TimeSeries, sigma_per_channel, seed: int) -> TimeSeries:
    """Add i.i.d. zero-mean Gaussian noise with a per-channel standard deviation."""
    sigma = np.broadcast_to(np.asarray(sigma_per_channel, dtype=float), (data.dim,))
    if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
        raise InvalidArgument("noise standard deviations must be finite and non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(data.values.shape) * sigma
    return TimeSeries(data.times, data.values + noise, data.channel_names)


def uniform_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n = int(round((t1 - t0) / dt))
    return t0 + dt * np.arange(n + 1)


def stack_channels(series: Sequence[TimeSeries]) -> TimeSeries:
    base = series[0]
    return TimeSeries(base.times, np.column_stack([s.values for s in series]),
                      sum((s.channel_names for s in series), ()))
