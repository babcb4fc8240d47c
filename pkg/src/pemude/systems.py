"""Benchmark systems: Rössler, the Petrzela-Polak circuit (dimensionless),
a sparse Izhikevich spiking population and its next-generation neural mass
model (NGNMM), with and without learned sparsity corrections.

Every right-hand side exists as a compiled ``f(x, p, u, out)`` plus
Jacobian ``jac(x, p, u, J)`` pair so it can drive the fixed-step training
kernels, and as a plain function on state vectors for everyday use.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

import numba as nb
import numpy as np

from .errors import IntegrationUnstable, InvalidArgument
from .odesim import DynamicalSystem, Kernel, TimeSeries

# ------------------------------------------------------------------ Rössler


@dataclass(frozen=True)
class RosslerParams:
    a: float = 0.2
    b: float = 0.22
    c: float = 14.0

    def as_vector(self):
        return np.array([self.a, self.b, self.c], dtype=float)


@nb.njit(cache=True)
def rossler_f(x, p, u, out):
    out[0] = -x[1] - x[2]
    out[1] = x[0] + p[0] * x[1]
    out[2] = p[1] + x[2] * (x[0] - p[2])


@nb.njit(cache=True)
def rossler_jac(x, p, u, J):
    J[0, 0] = 0.0
    J[0, 1] = -1.0
    J[0, 2] = -1.0
    J[1, 0] = 1.0
    J[1, 1] = p[0]
    J[1, 2] = 0.0
    J[2, 0] = x[2]
    J[2, 1] = 0.0
    J[2, 2] = x[0] - p[2]


@nb.njit(cache=True)
def rossler_learn_f(x, p, u, out):
    # second state left entirely to the approximator
    out[0] = -x[1] - x[2]
    out[1] = 0.0
    out[2] = p[1] + x[2] * (x[0] - p[2])


@nb.njit(cache=True)
def rossler_learn_jac(x, p, u, J):
    rossler_jac(x, p, u, J)
    J[1, 0] = 0.0
    J[1, 1] = 0.0


def rossler_rhs(state, params: RosslerParams = RosslerParams()):
    x, y, z = state
    return np.array([-y - z, x + params.a * y, params.b + z * (x - params.c)])


def rossler_missing_term(states, params: RosslerParams = RosslerParams()):
    """The term the approximator must learn for the Rössler benchmark: x + a*y."""
    states = np.atleast_2d(states)
    return states[:, 0] + params.a * states[:, 1]


# ----------------------------------------------------------- Petrzela-Polak


@dataclass(frozen=True)
class PPParams:
    a: float = 1.25
    b: float = 0.5
    c: float = 1.0
    # physical circuit constants, documentation only
    R_L: str = "0.5 kOhm"
    R_M: str = "0.08 kOhm"
    C1: str = "1.0 uF"
    C2: str = "1.0 uF"
    L: str = "1.0 H"
    I0: str = "1.0 mA"

    def as_vector(self):
        return np.array([self.a, self.b, self.c], dtype=float)


@nb.njit(cache=True)
def pp_f(x, p, u, out):
    out[0] = x[2]
    out[1] = p[0] * x[0] * x[0] - x[2] - p[2]
    out[2] = x[1] - x[0] - p[1] * x[2]


@nb.njit(cache=True)
def pp_jac(x, p, u, J):
    J[0, 0] = 0.0
    J[0, 1] = 0.0
    J[0, 2] = 1.0
    J[1, 0] = 2.0 * p[0] * x[0]
    J[1, 1] = 0.0
    J[1, 2] = -1.0
    J[2, 0] = -1.0
    J[2, 1] = 1.0
    J[2, 2] = -p[1]


@nb.njit(cache=True)
def pp_learn_f(x, p, u, out):
    out[0] = x[2]
    out[1] = 0.0
    out[2] = x[1] - x[0] - p[1] * x[2]


@nb.njit(cache=True)
def pp_learn_jac(x, p, u, J):
    pp_jac(x, p, u, J)
    J[1, 0] = 0.0
    J[1, 2] = 0.0


def pp_rhs(state, params: PPParams = PPParams()):
    x, y, z = state
    return np.array([z, params.a * x * x - z - params.c, y - x - params.b * z])


# ------------------------------------------------------------------- NGNMM


@dataclass(frozen=True)
class IzhNetParams:
    N: int = 1000
    p_c: float = 1.0
    alpha: float = 0.6215
    g_syn: float = 1.2308
    I_ext: float = 0.0
    e_r: float = 1.0
    a: float = 0.0077
    b: float = -0.0062
    w_jump: float = 0.0189
    tau_s: float = 2.6
    s_jump0: float = 1.2308
    v_peak: float = 200.0
    v_reset: float = 200.0
    eta_bar: float = 0.12
    delta: float = 0.02

    def __post_init__(self):
        if self.N < 1:
            raise InvalidArgument("N must be >= 1")
        if not 0.0 < self.p_c <= 1.0:
            raise InvalidArgument("p_c must lie in (0, 1]")
        if self.tau_s <= 0 or self.delta <= 0:
            raise InvalidArgument("tau_s and delta must be positive")

    @property
    def s_jump(self) -> float:
        """Synaptic jump rescaled for sparsity, s_jump0 / sqrt(p_c)."""
        return self.s_jump0 / math.sqrt(self.p_c)

    def as_vector(self):
        return np.array([self.alpha, self.g_syn, self.I_ext, self.e_r, self.a, self.b,
                         self.w_jump, self.tau_s, self.s_jump, self.eta_bar, self.delta])


NGNMM_CHANNELS = ("r", "v", "w", "s")


@dataclass(frozen=True)
class NgnmmState:
    r: float
    v: float
    w: float
    s: float

    def __post_init__(self):
        if self.r < 0:
            raise InvalidArgument("firing rate r must be non-negative")

    def as_vector(self):
        return np.array([self.r, self.v, self.w, self.s], dtype=float)


@dataclass(frozen=True)
class SparseCorrection:
    phi1: float = -0.45
    phi2: float = -0.20
    phi3: float = 0.55
    phi4: float = 0.89
    phi5: float = 1.72
    c1: float = 0.17
    c2: float = -0.14
    p_c: float = 1.0

    def as_vector(self):
        return np.array([self.phi1, self.phi2, self.phi3, self.phi4, self.phi5,
                         self.c1, self.c2, self.p_c])

    @classmethod
    def zero(cls, p_c: float = 1.0) -> "SparseCorrection":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, p_c)


@nb.njit(cache=True)
def ngnmm_f(x, p, u, out):
    r, v, w, s = x[0], x[1], x[2], x[3]
    alpha, g, I, er, a, b, wj, tau, sj, eta, delta = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10])
    out[0] = delta / np.pi + 2.0 * r * v - (alpha + g * s) * r
    out[1] = v * (v - alpha) - w + eta + I + g * s * (er - v) - (np.pi * r) ** 2
    out[2] = a * (b * v - w) + wj * r
    out[3] = -s / tau + sj * r


@nb.njit(cache=True)
def ngnmm_jac(x, p, u, J):
    r, v, s = x[0], x[1], x[3]
    alpha, g, er, a, b, wj, tau, sj = p[0], p[1], p[3], p[4], p[5], p[6], p[7], p[8]
    J[0, 0] = 2.0 * v - (alpha + g * s)
    J[0, 1] = 2.0 * r
    J[0, 2] = 0.0
    J[0, 3] = -g * r
    J[1, 0] = -2.0 * np.pi * np.pi * r
    J[1, 1] = 2.0 * v - alpha - g * s
    J[1, 2] = -1.0
    J[1, 3] = g * (er - v)
    J[2, 0] = wj
    J[2, 1] = a * b
    J[2, 2] = -a
    J[2, 3] = 0.0
    J[3, 0] = sj
    J[3, 1] = 0.0
    J[3, 2] = 0.0
    J[3, 3] = -1.0 / tau


@nb.njit(cache=True)
def sparse_ngnmm_f(x, p, u, out):
    ngnmm_f(x, p, u, out)
    r, v, w, s = x[0], x[1], x[2], x[3]
    phi1, phi2, phi3, phi4, phi5, c1, c2, pc = (
        p[11], p[12], p[13], p[14], p[15], p[16], p[17], p[18])
    out[0] += phi1 * s + phi2 * pc + phi3 * v * pc + c1
    out[1] += phi4 * r + phi5 * w * w + c2


@nb.njit(cache=True)
def sparse_ngnmm_jac(x, p, u, J):
    ngnmm_jac(x, p, u, J)
    J[0, 3] += p[11]
    J[0, 1] += p[13] * p[18]
    J[1, 0] += p[14]
    J[1, 2] += 2.0 * p[15] * x[2]


def _as_state(state):
    if isinstance(state, NgnmmState):
        return state.as_vector()
    return np.asarray(state, dtype=float)


def ngnmm_rhs(state, params: IzhNetParams = IzhNetParams()):
    out = np.empty(4)
    ngnmm_f(_as_state(state), params.as_vector(), np.empty(0), out)
    return out


def sparse_ngnmm_rhs(state, params: IzhNetParams = IzhNetParams(), corr: SparseCorrection = SparseCorrection()):
    out = np.empty(4)
    p = np.concatenate([params.as_vector(), corr.as_vector()])
    sparse_ngnmm_f(_as_state(state), p, np.empty(0), out)
    return out


def sparse_correction_terms(state, corr: SparseCorrection):
    """(f1, f2): the additive corrections to dr/dt and dv/dt."""
    r, v, w, s = _as_state(state)
    f1 = corr.phi1 * s + corr.phi2 * corr.p_c + corr.phi3 * v * corr.p_c + corr.c1
    f2 = corr.phi4 * r + corr.phi5 * w * w + corr.c2
    return f1, f2


# ------------------------------------------------------ system constructors

def _kernel_rhs(f, dim):
    def rhs(x, t, pvec, u):
        out = np.empty(dim)
        f(np.asarray(x, dtype=float), pvec, np.empty(0) if u is None else np.asarray(u, float), out)
        return out
    return rhs


def _system(f, jac, pvec, dim, names, record, observed=None):
    pvec = np.asarray(pvec, dtype=float)
    return DynamicalSystem(dim=dim, rhs=_kernel_rhs(f, dim), params=pvec,
                           observed=observed, channel_names=names,
                           kernel=Kernel(f, jac, pvec))


def rossler_system(params: RosslerParams = RosslerParams(), learn: bool = False) -> DynamicalSystem:
    """Full Rössler flow, or with ``learn=True`` the known part only (dy/dt = 0)."""
    f, jac = (rossler_learn_f, rossler_learn_jac) if learn else (rossler_f, rossler_jac)
    return _system(f, jac, params.as_vector(), 3, ("x", "y", "z"), params)


def pp_system(params: PPParams = PPParams(), learn: bool = False) -> DynamicalSystem:
    f, jac = (pp_learn_f, pp_learn_jac) if learn else (pp_f, pp_jac)
    return _system(f, jac, params.as_vector(), 3, ("x", "y", "z"), params)


def ngnmm_system(params: IzhNetParams = IzhNetParams(), corr: Optional[SparseCorrection] = None,
                 observed=(True, True, False, False)) -> DynamicalSystem:
    if corr is None:
        return _system(ngnmm_f, ngnmm_jac, params.as_vector(), 4, NGNMM_CHANNELS, params, observed)
    p = np.concatenate([params.as_vector(), corr.as_vector()])
    return _system(sparse_ngnmm_f, sparse_ngnmm_jac, p, 4, NGNMM_CHANNELS, params, observed)


R_FLOOR = np.array([0.0, -np.inf, -np.inf, -np.inf])


def simulate_ngnmm(params: IzhNetParams = IzhNetParams(), corr: Optional[SparseCorrection] = None,
                   x0=(0.1, 0.0, 0.0, 0.0), t_end: float = 300.0, dt: float = 1e-3,
                   record_dt: float = 0.01, clamp: bool = True) -> TimeSeries:
    """Fixed-step RK4 solution of the (optionally corrected) mean-field model.

    With ``clamp`` the firing rate is held at zero whenever a step would take
    it negative. Raises :class:`DivergedTrajectory` on blow-up.
    """
    from .errors import DivergedTrajectory
    from .pem import free_run, null_correction

    every = max(1, int(round(record_dt / dt)))
    lower = R_FLOOR if clamp else None
    out = free_run(ngnmm_system(params, corr), null_correction(4), np.zeros(0), x0, t_end, dt,
                   every, lower)
    if out.failed:
        raise DivergedTrajectory(f"mean-field model diverged after t={out.times[-1]:.6g}", out)
    return out


# ---------------------------------------------------------- spiking network

def lorentzian_quantiles(N: int, eta_bar: float, delta: float) -> np.ndarray:
    """Deterministic Lorentzian(eta_bar, delta) sample placed at the (j/(N+1)) quantiles."""
    if N < 1 or delta <= 0:
        raise InvalidArgument("need N >= 1 and delta > 0")
    j = np.arange(1, N + 1)
    return eta_bar + delta * np.tan(np.pi * (2 * j - N - 1) / (2.0 * (N + 1)))


@dataclass(frozen=True, eq=False)
class SpikeRaster:
    neuron_ids: np.ndarray
    spike_times: np.ndarray
    N: int
    duration: float

    def __post_init__(self):
        ids = np.asarray(self.neuron_ids, dtype=np.int64)
        ts = np.asarray(self.spike_times, dtype=float)
        order = np.lexsort((ts, ids))
        object.__setattr__(self, "neuron_ids", ids[order])
        object.__setattr__(self, "spike_times", ts[order])
        if ts.size and (ts.min() < 0 or ts.max() > self.duration):
            raise InvalidArgument("spike times must lie in [0, duration]")

    def __len__(self):
        return self.spike_times.size

    def __eq__(self, other):
        return (isinstance(other, SpikeRaster) and self.N == other.N
                and np.array_equal(self.neuron_ids, other.neuron_ids)
                and np.array_equal(self.spike_times, other.spike_times))

    def trains(self):
        """Per-neuron increasing spike-time arrays."""
        bounds = np.searchsorted(self.neuron_ids, np.arange(self.N + 1))
        return [self.spike_times[bounds[j]:bounds[j + 1]] for j in range(self.N)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write("neuron_id,spike_time\n")
            for j, t in zip(self.neuron_ids, self.spike_times):
                fh.write(f"{int(j)},{float(t)!r}\n")
        return path

    @classmethod
    def from_csv(cls, path, N: int, duration: float) -> "SpikeRaster":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if table.size == 0:
            return cls(np.zeros(0, np.int64), np.zeros(0), N, duration)
        return cls(table[:, 0].astype(np.int64), table[:, 1], N, duration)


@nb.njit(cache=True)
def symmetric_reset(v_peak, v_reset):
    """Voltage after a spike: cutoffs at +v_peak / -v_reset."""
    return -v_reset


def erdos_renyi(N: int, p_c: float, seed: int):
    """Postsynaptic target lists in CSR form (self-connections allowed)."""
    rng = np.random.default_rng(seed)
    ptr = np.zeros(N + 1, dtype=np.int64)
    rows = []
    for k in range(N):
        post = np.flatnonzero(rng.random(N) < p_c)
        rows.append(post)
        ptr[k + 1] = ptr[k] + post.size
    idx = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    return ptr, idx


@nb.njit(cache=True)
def _spiking_kernel(V, w, s, eta, prm, dt, n_steps, rec_every, ptr, idx, all_to_all):
    alpha, g, I, er, a, b, wj, tau, sj, v_peak, v_reset = (
        prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7], prm[8], prm[9], prm[10])
    N = V.shape[0]
    n_rec = n_steps // rec_every + 1
    rec = np.empty((n_rec, 3))
    counts = np.zeros(n_steps + 1, dtype=np.int64)
    cap = 1024
    sp_id = np.empty(cap, dtype=np.int64)
    sp_step = np.empty(cap, dtype=np.int64)
    n_sp = 0
    fired = np.empty(N, dtype=np.int64)
    rec[0, 0] = np.median(V)
    rec[0, 1] = w.mean()
    rec[0, 2] = s.mean()
    limit = 10.0 * v_peak
    for n in range(n_steps):
        nf = 0
        for j in range(N):
            vj = V[j]
            dv = vj * (vj - alpha) - w[j] + eta[j] + I + g * s[j] * (er - vj)
            dw = a * (b * vj - w[j])
            vj += dt * dv
            w[j] += dt * dw
            if not abs(vj) <= limit:
                return rec, counts, sp_id[:n_sp], sp_step[:n_sp], n + 1
            if vj >= v_peak:
                vj = symmetric_reset(v_peak, v_reset)
                w[j] += wj
                fired[nf] = j
                nf += 1
                if n_sp == cap:
                    cap *= 2
                    new_id = np.empty(cap, dtype=np.int64)
                    new_st = np.empty(cap, dtype=np.int64)
                    new_id[:n_sp] = sp_id[:n_sp]
                    new_st[:n_sp] = sp_step[:n_sp]
                    sp_id = new_id
                    sp_step = new_st
                sp_id[n_sp] = j
                sp_step[n_sp] = n + 1
                n_sp += 1
            V[j] = vj
        decay = np.exp(-dt / tau)  # exact decay between spikes
        for j in range(N):
            s[j] *= decay
        if nf > 0:
            kick = sj / N
            if all_to_all:
                for j in range(N):
                    s[j] += kick * nf
            else:
                for q in range(nf):
                    k = fired[q]
                    for e in range(ptr[k], ptr[k + 1]):
                        s[idx[e]] += kick
        counts[n + 1] = nf
        if (n + 1) % rec_every == 0:
            m = (n + 1) // rec_every
            rec[m, 0] = np.median(V)
            rec[m, 1] = w.mean()
            rec[m, 2] = s.mean()
    return rec, counts, sp_id[:n_sp], sp_step[:n_sp], -1


def windowed_rate(counts, N: int, dt: float, window: float, record_steps) -> np.ndarray:
    """Population rate: spikes in a centred window divided by N * window length."""
    c = np.concatenate([[0], np.cumsum(counts[1:])])
    n = len(counts) - 1
    half = int(round(window / dt)) // 2
    lo = np.clip(record_steps - half, 0, n)
    hi = np.clip(record_steps + half, 0, n)
    hi = np.maximum(hi, lo + 1)
    return (c[hi] - c[lo]) / (N * (hi - lo) * dt)


def simulate_spiking(params: IzhNetParams, adjacency_seed: int, duration: float, dt: float = 1e-3,
                     x0=(0.1, 0.0, 0.0, 0.0), record_dt: float = 0.01,
                     window: float = 0.1) -> Tuple[TimeSeries, SpikeRaster]:
    """Euler simulation of the Izhikevich population with Erdős–Rényi synapses.

    Voltages start Lorentzian-distributed around ``v0`` with half-width
    ``pi * r0`` (the mean-field manifold), in a seeded random order. The
    returned series holds r (windowed rate), v (median voltage, i.e. the
    centre of the Lorentzian voltage density), mean w and mean s.
    """
    if duration <= 0 or dt <= 0:
        raise InvalidArgument("duration and dt must be positive")
    N = params.N
    r0, v0, w0, s0 = (float(v) for v in x0)
    rng = np.random.default_rng(adjacency_seed)
    q = lorentzian_quantiles(N, 0.0, 1.0)
    eta = params.eta_bar + params.delta * q
    V = v0 + math.pi * r0 * rng.permutation(q)
    V = np.clip(V, -params.v_reset, params.v_peak - 1e-9)
    w = np.full(N, w0)
    s = np.full(N, s0)
    all_to_all = params.p_c >= 1.0
    if all_to_all:
        ptr, idx = np.zeros(N + 1, np.int64), np.zeros(0, np.int64)
    else:
        ptr, idx = erdos_renyi(N, params.p_c, adjacency_seed + 1)
    rec_every = max(1, int(round(record_dt / dt)))
    n_steps = int(round(duration / dt))
    prm = np.array([params.alpha, params.g_syn, params.I_ext, params.e_r, params.a, params.b,
                    params.w_jump, params.tau_s, params.s_jump, params.v_peak, params.v_reset])
    rec, counts, sp_id, sp_step, bad = _spiking_kernel(V, w, s, eta, prm, dt, n_steps, rec_every,
                                                       ptr, idx, all_to_all)
    if bad >= 0:
        raise IntegrationUnstable(f"|V| exceeded 10*v_peak at t={bad * dt:.6g}; reduce dt")
    steps = np.arange(rec.shape[0]) * rec_every
    r = windowed_rate(counts, N, dt, window, steps)
    series = TimeSeries(steps * dt, np.column_stack([r, rec]), NGNMM_CHANNELS)
    raster = SpikeRaster(sp_id, np.minimum(sp_step * dt, duration), N, n_steps * dt)
    return series, raster


def params_dict(obj) -> dict:
    return asdict(obj)


def params_from_dict(cls, doc: dict):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in doc.items() if k in names})
