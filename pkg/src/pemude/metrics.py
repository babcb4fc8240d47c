"""Chaos and synchrony diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy.signal import hilbert, welch

from .errors import InvalidArgument, NoPeak
from .odesim import DynamicalSystem, SolverConfig, TimeSeries, integrate, uniform_grid

# ------------------------------------------------------------- Lyapunov


@dataclass(frozen=True)
class LyapunovResult:
    lambda_max: float
    lyapunov_time: Optional[float]
    transient_discarded: float
    n_windows: int
    diverged: bool = False


@nb.njit
def _rk4_kernel_step(f, p, u, x, h, k1, k2, k3, k4, xs):
    d = x.shape[0]
    f(x, p, u, k1)
    for i in range(d):
        xs[i] = x[i] + 0.5 * h * k1[i]
    f(xs, p, u, k2)
    for i in range(d):
        xs[i] = x[i] + 0.5 * h * k2[i]
    f(xs, p, u, k3)
    for i in range(d):
        xs[i] = x[i] + h * k3[i]
    f(xs, p, u, k4)
    for i in range(d):
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@nb.njit
def _benettin(f, p, x0, d0, h, steps_per_window, n_windows):
    d = x0.shape[0]
    u = np.zeros(0)
    x = x0.copy()
    y = x0.copy()
    y[0] += d0
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    xs = np.empty(d)
    logs = np.full(n_windows, np.nan)
    for w in range(n_windows):
        for _ in range(steps_per_window):
            _rk4_kernel_step(f, p, u, x, h, k1, k2, k3, k4, xs)
            _rk4_kernel_step(f, p, u, y, h, k1, k2, k3, k4, xs)
        dist = 0.0
        for i in range(d):
            dist += (y[i] - x[i]) ** 2
        dist = np.sqrt(dist)
        if not np.isfinite(dist) or dist == 0.0:
            return logs, w
        logs[w] = np.log(dist / d0)
        for i in range(d):
            y[i] = x[i] + (y[i] - x[i]) * d0 / dist
    return logs, n_windows


def max_lyapunov(system: DynamicalSystem, x0, t_total: float, renorm_interval: float = 1.0,
                 d0: float = 1e-9, transient: float = 0.1, dt: float = 0.01,
                 config: Optional[SolverConfig] = None) -> LyapunovResult:
    """Largest Lyapunov exponent by two-trajectory renormalisation (Benettin).

    Systems with a compiled kernel use fixed-step RK4 with step ``dt``
    (rounded so it divides ``renorm_interval``); others go through
    :func:`integrate` window by window. Windows that start inside the first
    ``transient`` fraction of ``t_total`` are not averaged.
    """
    if d0 <= 0 or renorm_interval <= 0 or t_total <= 2 * renorm_interval:
        raise InvalidArgument("need d0 > 0 and t_total much longer than renorm_interval")
    x0 = np.asarray(x0, dtype=float)
    n_windows = int(t_total // renorm_interval)
    if system.kernel is not None and system.stimulus is None:
        steps = max(1, int(math.ceil(renorm_interval / dt - 1e-9)))
        logs, n_ok = _benettin(system.kernel.f, system.kernel.pvec, x0, d0,
                               renorm_interval / steps, steps, n_windows)
    else:
        cfg = config or SolverConfig(abstol=1e-10, reltol=1e-10)
        logs = np.full(n_windows, np.nan)
        x, y = x0.copy(), x0.copy()
        y[0] += d0
        n_ok = n_windows
        for w in range(n_windows):
            t0, t1 = w * renorm_interval, (w + 1) * renorm_interval
            try:
                x = integrate(system, x, (t0, t1), cfg).values[-1]
                y = integrate(system, y, (t0, t1), cfg).values[-1]
            except Exception:
                n_ok = w
                break
            dist = float(np.linalg.norm(y - x))
            if not np.isfinite(dist) or dist == 0.0:
                n_ok = w
                break
            logs[w] = math.log(dist / d0)
            y = x + (y - x) * d0 / dist
    skip = int(math.ceil(transient * n_windows))
    used = logs[skip:n_ok]
    diverged = n_ok < n_windows
    if used.size == 0:
        return LyapunovResult(float("nan"), None, skip * renorm_interval, 0, True)
    lam = float(np.mean(used) / renorm_interval)
    return LyapunovResult(lam, 1.0 / lam if lam > 0 else None, skip * renorm_interval,
                          int(used.size), diverged)


# ------------------------------------------------------ shadow divergence

def shadow_divergence(system: DynamicalSystem, delta, K, t_total: float = 200.0,
                      x0=(1.0, 1.0, 1.0), dt_obs: float = 0.1, substeps: int = 4,
                      param_index: int = 0, gain_index: int = 1,
                      reference: Optional[TimeSeries] = None) -> TimeSeries:
    """Deviation caused by perturbing one parameter under PEM nudging.

    Observations come from a tight adaptive solve of the unperturbed system.
    The PEM-corrected model (gain ``K`` on state ``gain_index``) is run twice
    on the same grid and the same observations, with parameter
    ``param_index`` as given and shifted by ``delta``; the result is the
    Euclidean distance between the two runs at every observation time.
    """
    from .pem import PemUdeProblem, null_correction

    if reference is None:
        grid = uniform_grid(0.0, t_total, dt_obs)
        reference = integrate(system, x0, (0.0, grid[-1]),
                              SolverConfig(abstol=1e-12, reltol=1e-12, save_times=grid))
    gain = np.zeros(system.dim)
    gain[gain_index] = K
    base = PemUdeProblem(system, null_correction(system.dim), reference, gain,
                         observed=np.ones(system.dim, bool), substeps=substeps)
    p = np.array(system.kernel.pvec, dtype=float)
    pert = p.copy()
    pert[param_index] += delta
    empty = np.zeros(0)
    a = base.simulate(empty)
    b = base.with_params(pert).simulate(empty)
    n = min(len(a), len(b))
    dev = np.linalg.norm(a.values[:n] - b.values[:n], axis=1)
    failed = a.failed or b.failed
    if failed:
        dev = np.concatenate([dev, np.full(len(reference) - n, np.inf)])
    return TimeSeries(reference.times, dev, ("deviation",), failed=failed)


def attractor_diameter(series: TimeSeries) -> float:
    """Largest coordinate-range norm, a cheap diameter proxy (bounding-box diagonal)."""
    span = series.values.max(axis=0) - series.values.min(axis=0)
    return float(np.linalg.norm(span))


# ------------------------------------------------------------- Kuramoto

def kuramoto_Z(r, v) -> np.ndarray:
    """Z = (1 - conj(W)) / (1 + conj(W)) with W = pi*r + i*v; NaN at the pole W = -1."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if r.shape != v.shape:
        raise InvalidArgument("r and v must be aligned")
    Wc = np.pi * r - 1j * v
    den = 1.0 + Wc
    pole = den == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = (1.0 - Wc) / den
    Z = np.where(pole, np.nan + 1j * np.nan, Z)
    return Z


def kuramoto_pole_mask(Z) -> np.ndarray:
    return ~np.isfinite(np.asarray(Z))


def inverse_kuramoto(Z) -> np.ndarray:
    """W from Z; the map is its own inverse up to conjugation."""
    Zc = np.conj(np.asarray(Z, dtype=complex))
    return (1.0 - Zc) / (1.0 + Zc)


def mean_abs_Z(Z) -> float:
    a = np.abs(np.asarray(Z))
    a = a[np.isfinite(a)]
    if a.size == 0:
        raise InvalidArgument("no finite samples")
    return float(a.mean())


# ------------------------------------------------------------- spectra

def welch_spectrum(signal, sample_rate: float, n_segments: int = 8):
    """Hann-windowed Welch periodogram with 50 % overlap and ``n_segments`` segments."""
    x = np.asarray(signal, dtype=float).reshape(-1)
    if x.size < 256:
        raise InvalidArgument("need at least 256 samples")
    # with 50 % overlap, k segments of length L span (k + 1) * L / 2 samples
    nperseg = int(2 * x.size // (n_segments + 1))
    return welch(x, fs=sample_rate, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
                 detrend="linear", scaling="density")


def dominant_frequency(signal, sample_rate: float) -> float:
    """Frequency of the largest Welch peak above DC."""
    x = np.asarray(signal, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("signal has non-finite samples")
    # constant up to rounding: there is no oscillation to find
    if np.ptp(x) <= 1e-9 * max(1.0, float(np.max(np.abs(x)))):
        raise NoPeak("constant signal: no peak above DC")
    f, P = welch_spectrum(x, sample_rate)
    P = P[1:]
    if P.size == 0 or not np.any(P > 0):
        raise NoPeak("flat spectrum: no peak above DC")
    return float(f[1 + int(np.argmax(P))])


def frequency_ranks(freqs: Sequence[float]) -> np.ndarray:
    """Rank of each run's dominant frequency (0 = lowest)."""
    return np.argsort(np.argsort(np.asarray(freqs, dtype=float), kind="stable"), kind="stable")


# ------------------------------------------------------- phase analysis

@dataclass(frozen=True, eq=False)
class PhaseSeries:
    times: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        if np.shape(self.times) != np.shape(self.phases):
            raise InvalidArgument("times and phases must align")

    def __len__(self):
        return len(self.phases)

    def trimmed(self, frac: float = 0.05) -> "PhaseSeries":
        k = int(frac * len(self))
        sl = slice(k, len(self) - k)
        return PhaseSeries(self.times[sl], self.phases[sl])


def hilbert_phase(signal, times=None) -> PhaseSeries:
    """Instantaneous phase in (-pi, pi] of the mean-removed signal."""
    x = np.asarray(signal, dtype=float).reshape(-1)
    if x.size < 64:
        raise InvalidArgument("need at least 64 samples")
    phase = np.angle(hilbert(x - x.mean()))
    phase = np.where(phase <= -np.pi, np.pi, phase)
    t = np.arange(x.size, dtype=float) if times is None else np.asarray(times, float)
    return PhaseSeries(t, phase)


def plv(phi_i, phi_j) -> float:
    """|mean(exp(i * (phi_i - phi_j)))|."""
    a = phi_i.phases if isinstance(phi_i, PhaseSeries) else np.asarray(phi_i, float)
    b = phi_j.phases if isinstance(phi_j, PhaseSeries) else np.asarray(phi_j, float)
    if a.shape != b.shape or a.size == 0:
        raise InvalidArgument("phase series must have equal, nonzero length")
    d = a - b
    psi = np.angle(np.mean(np.exp(1j * d)))
    # |mean(e^{id})| written as the mean projection onto its own direction, which
    # is exactly 1 for a constant offset
    val = np.mean(np.cos(d - psi))
    return float(min(max(val, 0.0), 1.0))


def plv_of_signals(x, y, edge: float = 0.05) -> float:
    """PLV of two signals' Hilbert phases with ``edge`` of each end discarded."""
    return plv(hilbert_phase(x).trimmed(edge), hilbert_phase(y).trimmed(edge))


def spikes_to_lfp_proxy(raster, window: float, electrodes: Sequence[Sequence[int]],
                        t0: float = 0.0, t1: Optional[float] = None) -> Tuple[TimeSeries, Tuple[int, ...]]:
    """Per-electrode spike counts in centred windows on a grid of step ``window / 2``.

    The window around grid time ``t`` is ``[t - window/2, t + window/2)``.
    Returns the series and the indices of electrodes with no neurons (their
    channels are zero).
    """
    if window <= 0:
        raise InvalidArgument("window must be positive")
    seen = set()
    for cell in electrodes:
        for j in cell:
            if j in seen:
                raise InvalidArgument("electrode partition cells must be disjoint")
            seen.add(j)
    t1 = raster.duration if t1 is None else t1
    step = window / 2.0
    grid = t0 + step * np.arange(int(np.floor((t1 - t0) / step + 1e-9)) + 1)
    counts = np.zeros((grid.size, len(electrodes)))
    empty = []
    for e, cell in enumerate(electrodes):
        cell = np.asarray(list(cell), dtype=np.int64)
        if cell.size == 0:
            empty.append(e)
            continue
        ts = np.sort(raster.spike_times[np.isin(raster.neuron_ids, cell)])
        lo = np.searchsorted(ts, grid - window / 2.0, side="left")
        hi = np.searchsorted(ts, grid + window / 2.0, side="left")
        counts[:, e] = hi - lo
    names = tuple(f"e{e}" for e in range(len(electrodes)))
    return TimeSeries(grid, counts, names), tuple(empty)
