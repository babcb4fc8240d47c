"""End-to-end experiment pipelines behind the command line.

Each ``run_*`` function takes an :class:`ExperimentConfig`, writes its
artifacts (CSV series, JSON models and reports, SVG figures) under
``out_dir/<experiment>`` and returns a :class:`RunManifest` holding the
built-in checks. A manifest passes when every check passes.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import svg
from .config import ExperimentConfig
from .errors import DivergedTrajectory, InvalidArgument, NoPeak
from .metrics import (attractor_diameter, dominant_frequency, kuramoto_Z, max_lyapunov, mean_abs_Z,
                      plv_of_signals, shadow_divergence, spikes_to_lfp_proxy)
from .odesim import SolverConfig, TimeSeries, add_observation_noise, integrate, uniform_grid
from .pem import (PemUdeProblem, TrainReport, export_regression_set, free_run, network_correction,
                  null_correction, polynomial_correction, train)
from .rbfnet import AdamWHyper, RbfNetwork, init_network, save_checkpoint
from .symreg import (SymbolicModel, build_library, direct_stlsq_on_derivatives,
                     refine_parameters, save_models, stlsq)
from .systems import (NGNMM_CHANNELS, R_FLOOR, IzhNetParams, PPParams, RosslerParams,
                      SparseCorrection, ngnmm_system, pp_system, rossler_system, simulate_ngnmm,
                      simulate_spiking)

Log = Callable[[str], None]


def _quiet(msg: str) -> None:
    pass


# ------------------------------------------------------------- manifests

@dataclass
class Check:
    name: str
    passed: bool
    value: Any = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": _jsonable(self.value),
                "detail": self.detail}


@dataclass
class RunManifest:
    experiment: str
    config: dict
    out_dir: str
    wall_time: float = 0.0
    artifacts: Dict[str, str] = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, value=None, detail: str = "") -> Check:
        c = Check(name, bool(passed), value, detail)
        self.checks.append(c)
        return c

    def add(self, name: str, path) -> Path:
        self.artifacts[name] = str(path)
        return Path(path)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "wall_time_s": self.wall_time,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": self.config,
            "artifacts": self.artifacts,
            "checks": [c.to_dict() for c in self.checks],
            "summary": _jsonable(self.summary),
        }

    def save(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _start(cfg: ExperimentConfig):
    out = Path(cfg.out_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.experiment, cfg.to_dict(), str(out))
    (out / "config.json").write_text(cfg.to_json())
    man.add("config", out / "config.json")
    return out, man


def _write_table(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _grid(spec) -> np.ndarray:
    """``[lo, hi, step]`` to an inclusive grid without float drift."""
    lo, hi, step = (float(v) for v in spec)
    if step <= 0 or hi < lo:
        raise InvalidArgument(f"bad grid specification {spec}")
    return lo + step * np.arange(int(round((hi - lo) / step)) + 1)


def _linspace(spec) -> np.ndarray:
    lo, hi, n = spec
    return np.linspace(float(lo), float(hi), int(n))


# ------------------------------------------------------- shared building blocks

def reference_data(system, x0, t_end: float, dt_obs: float, abstol: float = 1e-12,
                   reltol: float = 1e-12) -> TimeSeries:
    """Tight adaptive solve sampled on the uniform observation grid."""
    grid = uniform_grid(0.0, t_end, dt_obs)
    return integrate(system, x0, (0.0, grid[-1]),
                     SolverConfig(abstol=abstol, reltol=reltol, save_times=grid))


def make_network(data: TimeSeries, n_out: int, seed: int, normalize: bool,
                 mask=None) -> RbfNetwork:
    """Network sized for ``data``; with ``normalize`` its inputs are standardised
    by the data mean and standard deviation (frozen, not trained)."""
    if not normalize:
        return init_network(data.dim, n_out, seed)
    v = data.values
    shift, scale = v.mean(axis=0), v.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return init_network(data.dim, n_out, seed, shift=shift, scale=scale)


def hyper_from(tcfg: dict) -> AdamWHyper:
    return AdamWHyper(learning_rate=float(tcfg["learning_rate"]),
                      weight_decay=float(tcfg.get("weight_decay", 1e-4)))


def fit(problem: PemUdeProblem, theta0, tcfg: dict, seed: int, log: Log = _quiet,
        label: str = "") -> TrainReport:
    epochs = int(tcfg["epochs"])
    every = max(1, epochs // 10)

    def cb(ep, val):
        if ep % every == 0:
            log(f"{label} epoch {ep}/{epochs} loss {val:.6g}")

    rep = train(problem, theta0, epochs, hyper_from(tcfg), seed=seed,
                jitter=float(tcfg.get("jitter", 1e-2)), callback=cb,
                time_limit=tcfg.get("time_limit"), lr_final=tcfg.get("lr_final"))
    rep.meta.update({"label": label, "learning_rate": float(tcfg["learning_rate"]),
                     "gain": [float(g) for g in problem.gain]})
    return rep


def sparse_fit(X, Y, names: Sequence[str], targets: Sequence[str], degree: int,
               threshold: float, provenance: str = "pem-ude") -> List[SymbolicModel]:
    lib, Theta = build_library(X, names, degree)
    return [stlsq(Theta, Y[:, k], threshold, library=lib, target=t, provenance=provenance)
            for k, t in enumerate(targets)]


def refine_schedule(models, problem: PemUdeProblem, gains: Sequence[Sequence[float]],
                    exog=(), log: Log = _quiet):
    """Trajectory refinement with the gain lowered stage by stage."""
    history = []
    for g in gains:
        res = refine_parameters(models, problem.with_gain(g), exog)
        history.append({"gain": list(g), "loss": res.loss, "initial_loss": res.initial_loss,
                        "converged": res.converged, "n_evals": res.n_evals})
        log(f"refine gain {list(g)} loss {res.initial_loss:.3g} -> {res.loss:.3g}")
        if res.diverged:
            break
        models = res.models
    return models, history


def model_correction(models: Sequence[SymbolicModel], channel_names: Sequence[str], exog=()):
    """Polynomial correction plus parameter vector reproducing fitted models."""
    lib = models[0].library
    terms = sorted(set().union(*(set(m.support) for m in models))) or [0]
    targets = [list(channel_names).index(m.target) for m in models]
    corr = polynomial_correction(lib.exponents[terms], targets, exog)
    theta = np.array([[m.coefficients[t] for m in models] for t in terms]).reshape(-1)
    return corr, theta


def _overlay(path, data: TimeSeries, fit_: TimeSeries, channel: str, title: str):
    k = data.channel_names.index(channel)
    return svg.line_plot(path, [(data.times, data.values[:, k], "data"),
                                (fit_.times, fit_.values[:, k], "model")],
                         title=title, xlabel="t", ylabel=channel)


# --------------------------------------------------------- Rössler recovery

def run_rossler_recovery(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, so, tc, yc = cfg["system"], cfg["solver"], cfg["training"], cfg["symreg"]
    params = RosslerParams(sc["a"], sc["b"], sc["c"])
    data = reference_data(rossler_system(params), sc["x0"], sc["t_end"], sc["dt_obs"],
                          so["abstol"], so["reltol"])
    man.add("data", data.to_csv(out / "data.csv"))

    net = make_network(data, 1, int(tc["net_seed"]), bool(tc["normalize_inputs"]))
    known = rossler_system(params, learn=True)
    problem = PemUdeProblem(known, network_correction(net, [1]), data, tc["gain"],
                            substeps=int(so["substeps"]))
    rep = fit(problem, net.flatten(), tc, cfg.seed, log, "pem")
    rep.save(out / "train_pem.json", out / "loss_pem.csv")
    man.add("loss_pem", out / "loss_pem.csv")
    man.add("checkpoint", save_checkpoint(out / "network.json", net, rep.final_theta, rep.epochs))
    fitted = problem.simulate(rep.final_theta)
    man.add("fit", fitted.to_csv(out / "fit.csv"))
    man.add("fit_svg", _overlay(out / "fit.svg", data, fitted, "y", "PEM-corrected fit"))
    traces = [(np.arange(1, rep.epochs + 1), rep.loss_trace, "PEM gain")]
    man.summary["final_loss_pem"] = rep.final_loss
    man.check("training did not diverge", not rep.diverged, rep.n_diverged)

    if tc.get("compare_without_pem", True):
        zero = [0.0] * 3
        rep0 = fit(problem.with_gain(zero), net.flatten(), tc, cfg.seed, log, "no-pem")
        rep0.save(out / "train_nopem.json", out / "loss_nopem.csv")
        man.add("loss_nopem", out / "loss_nopem.csv")
        traces.append((np.arange(1, rep0.epochs + 1), rep0.loss_trace, "no gain"))
        ratio = loss_ratio(rep0.loss_trace, rep.loss_trace)
        tenth = max(1, rep.epochs // 10)
        ratio10 = loss_ratio(rep0.loss_trace[:tenth], rep.loss_trace[:tenth])
        man.summary.update({"final_loss_nopem": rep0.final_loss, "loss_ratio": ratio,
                            "loss_ratio_at_10pct": ratio10})
        man.check("no-gain loss >= 10x PEM loss", ratio >= 10.0, ratio)
        man.check("ratio >= 10x at 10% of budget", ratio10 >= 10.0, ratio10)
    man.add("loss_svg", svg.line_plot(out / "loss.svg", traces, "training loss", "epoch", "loss", logy=True))

    X, Y = export_regression_set(problem, rep.final_theta)
    models = sparse_fit(X, Y, data.channel_names, ["y"], int(yc["degree"]), float(yc["threshold"]))
    save_models(out / "model_stlsq.json", models)
    man.add("model_stlsq", out / "model_stlsq.json")
    man.summary["stlsq"] = models[0].render(6)
    log("stlsq " + models[0].render(6))
    if yc.get("refine", True) and not models[0].empty:
        gains = [[0.0, g, 0.0] for g in yc.get("refine_gains", [tc["gain"][1]])]
        models, hist = refine_schedule(models, problem, gains, log=log)
        man.summary["refinement"] = hist
    save_models(out / "model.json", models)
    man.add("model", out / "model.json")
    m = models[0]
    man.summary["model"] = m.render(6)
    p1, p2 = m.coefficient("x"), m.coefficient("y")
    man.check("support is {x, y}", m.support_terms == frozenset({"x", "y"}), sorted(m.support_terms))
    man.check("|p1 - 1| <= 1e-3", abs(p1 - 1.0) <= 1e-3, p1)
    man.check(f"|p2 - {params.a}| <= 1e-3", abs(p2 - params.a) <= 1e-3, p2)

    if not m.empty:
        val = forward_validation(m, params, data, float(cfg["validation"]["extension"]),
                                 math.sqrt(max(rep.final_loss, 0.0)), int(so["substeps"]))
        val["series"].to_csv(out / "forward.csv")
        man.add("forward", out / "forward.csv")
        man.add("forward_svg", svg.line_plot(
            out / "forward.svg", [(val["series"].times, val["series"].values[:, 0], "truth y"),
                                  (val["series"].times, val["series"].values[:, 1], "model y")],
            "beyond the training window", "t", "y"))
        man.summary["forward"] = {k: v for k, v in val.items() if k != "series"}
        man.check("forward run stays within 10x training RMSE for one Lyapunov time",
                  val["max_dev_one_lyapunov"] <= val["tube"], val["max_dev_one_lyapunov"],
                  f"tube {val['tube']:.3g}")
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


def loss_ratio(reference, candidate) -> float:
    """Final-loss ratio, treating diverged (sentinel) epochs as the sentinel value."""
    if len(reference) == 0 or len(candidate) == 0:
        return float("nan")
    return float(reference[-1] / max(candidate[-1], 1e-300))


def forward_validation(model: SymbolicModel, params: RosslerParams, data: TimeSeries,
                       extension: float, rmse: float, substeps: int = 4) -> dict:
    """Run the recovered model past the training window from the last true state."""
    t0 = float(data.times[-1])
    dt = float(data.times[1] - data.times[0])
    span = max(extension * t0, 2 * dt)
    truth = reference_data(rossler_system(params), data.values[-1], span, dt)
    corr, theta = model_correction([model], data.channel_names)
    run = free_run(rossler_system(params, learn=True), corr, theta, data.values[-1], truth.times[-1],
                   dt / substeps, substeps)
    n = min(len(run), len(truth))
    dev = np.linalg.norm(run.values[:n] - truth.values[:n], axis=1)
    lyap = max_lyapunov(rossler_system(params), data.values[-1], 500.0)
    t_l = lyap.lyapunov_time or span
    within = truth.times[:n] <= t_l
    series = TimeSeries(t0 + truth.times[:n],
                        np.column_stack([truth.values[:n, 1], run.values[:n, 1], dev]),
                        ("y_true", "y_model", "deviation"), failed=run.failed)
    return {"series": series, "lyapunov_time": t_l, "tube": 10.0 * rmse,
            "max_dev_one_lyapunov": float(dev[within].max()) if within.any() else float("inf"),
            "failed": run.failed}


# ---------------------------------------------------------- noisy circuit

def run_circuit_noisy(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, so, tc, yc = cfg["system"], cfg["solver"], cfg["training"], cfg["symreg"]
    params = PPParams(sc["a"], sc["b"], sc["c"])
    clean = reference_data(pp_system(params), sc["x0"], sc["t_end"], sc["dt_obs"],
                           so["abstol"], so["reltol"])
    noisy = circuit_noise(clean, float(sc["noise_multiplier"]), sc["noisy_channel"],
                          float(sc["background_noise"]), int(sc["noise_seed"]))
    man.add("clean", clean.to_csv(out / "clean.csv"))
    man.add("noisy", noisy.to_csv(out / "noisy.csv"))

    truth = frozenset({"x^2", "z", "1"})
    base = direct_stlsq_on_derivatives(noisy, yc["baseline_thresholds"], "y", int(yc["degree"]),
                                       int(yc["savgol_window"]), int(yc["savgol_order"]))
    rows, fails, drops = [], [], []
    for lam, m in base.items():
        has_x = any("x" in t for t in m.support_terms)
        rows.append([lam, m.render(3), int(has_x), int(m.support_terms == truth)])
        fails.append(m.support_terms != truth)
        if lam >= 0.3 - 1e-12:
            drops.append(not has_x)
    man.add("baseline", _write_table(out / "baseline.csv", ["lambda", "model", "contains_x", "correct"], rows))
    man.summary["baseline"] = {str(r[0]): r[1] for r in rows}
    man.check("baseline fails for every threshold", all(fails), [r[1] for r in rows])
    man.check("baseline drops x for thresholds >= 0.3", all(drops) and len(drops) > 0)

    net = make_network(noisy, 1, int(tc["net_seed"]), bool(tc["normalize_inputs"]))
    x0 = clean.values[0] if sc.get("true_initial_state", True) else noisy.values[0]
    problem = PemUdeProblem(pp_system(params, learn=True), network_correction(net, [1]), noisy,
                            tc["gain"], x0=x0, substeps=int(so["substeps"]))
    rep = fit(problem, net.flatten(), tc, cfg.seed, log, "pem")
    rep.save(out / "train_pem.json", out / "loss_pem.csv")
    man.add("loss_pem", out / "loss_pem.csv")
    man.add("checkpoint", save_checkpoint(out / "network.json", net, rep.final_theta, rep.epochs))
    fitted = problem.simulate(rep.final_theta)
    man.add("fit", fitted.to_csv(out / "fit.csv"))
    man.add("fit_svg", _overlay(out / "fit.svg", clean, fitted, "y", "PEM-corrected fit (clean y)"))
    man.summary["final_loss_pem"] = rep.final_loss
    man.check("training did not diverge", not rep.diverged, rep.n_diverged)

    X, Y = export_regression_set(problem, rep.final_theta)
    models = sparse_fit(X, Y, clean.channel_names, ["y"], int(yc["degree"]), float(yc["threshold"]))
    save_models(out / "model_stlsq.json", models)
    man.add("model_stlsq", out / "model_stlsq.json")
    m = models[0]
    man.summary["stlsq"] = m.render(4)
    log("stlsq " + m.render(4))
    man.check("PEM-UDE support is {x^2, z, 1}", m.support_terms == truth, sorted(m.support_terms))
    if yc.get("refine", True) and not m.empty:
        gains = [[0.0, g, 0.0] for g in yc.get("refine_gains", [tc["gain"][1]])]
        refined, hist = refine_schedule(models, problem, gains, log=log)
        save_models(out / "model.json", refined)
        man.add("model", out / "model.json")
        man.summary["model"] = refined[0].render(4)
        man.summary["refinement"] = hist
        man.check("refinement keeps the support", refined[0].support_terms == m.support_terms)
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


def circuit_noise(clean: TimeSeries, multiplier: float, channel: str, background: float,
                  seed: int) -> TimeSeries:
    """Gaussian noise of ``multiplier`` times the channel std on one channel and
    ``background`` times the std on the others."""
    sd = clean.values.std(axis=0)
    sigma = background * sd
    k = clean.channel_names.index(channel)
    sigma[k] = multiplier * sd[k]
    return add_observation_noise(clean, sigma, seed)


# ----------------------------------------------------- NGNMM sparsity study

def mean_field_error(spiking: TimeSeries, mean_field: TimeSeries, t_min: float) -> float:
    """Relative L2 distance of (r, v) after ``t_min`` on the shared time grid."""
    n = min(len(spiking), len(mean_field))
    m = spiking.times[:n] > t_min
    a = spiking.values[:n][m][:, :2]
    b = mean_field.values[:n][m][:, :2]
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def oscillation_summary(series: TimeSeries, transient: float) -> dict:
    """Dominant frequency of v and time-mean |Z| after the transient."""
    m = series.times > transient
    r, v = series.values[m, 0], series.values[m, 1]
    dt = float(series.times[1] - series.times[0])
    try:
        f = dominant_frequency(v, 1.0 / dt)
    except NoPeak:
        f = float("nan")
    return {"frequency": f, "mean_abs_Z": mean_abs_Z(kuramoto_Z(r, v))}


def table_model_curves(p_c_values: Sequence[float], t_end: float, transient: float,
                       dt: float = 0.01, record_dt: float = 0.05, corr: Optional[SparseCorrection] = None,
                       base: IzhNetParams = IzhNetParams()) -> List[dict]:
    """Frequency and |Z| of the sparsity-corrected mean-field model per p_c."""
    from dataclasses import replace
    rows = []
    for pc in p_c_values:
        prm = replace(base, p_c=float(pc))
        c = replace(corr or SparseCorrection(), p_c=float(pc))
        try:
            ser = simulate_ngnmm(prm, c, t_end=t_end, dt=dt, record_dt=record_dt)
            rows.append({"p_c": float(pc), "diverged": False, **oscillation_summary(ser, transient)})
        except DivergedTrajectory as exc:
            rows.append({"p_c": float(pc), "diverged": True, "frequency": float("nan"),
                         "mean_abs_Z": float("nan"), "diverged_at": float(exc.partial.times[-1])})
    return rows


def sparsity_trends(rows: Sequence[dict]):
    """(frequency strictly increases, |Z| strictly decreases) as p_c decreases."""
    rows = sorted(rows, key=lambda r: -r["p_c"])
    f = np.array([r["frequency"] for r in rows])
    z = np.array([r["mean_abs_Z"] for r in rows])
    ok_f = bool(np.all(np.isfinite(f)) and np.all(np.diff(f) > 0))
    ok_z = bool(np.all(np.isfinite(z)) and np.all(np.diff(z) < 0))
    return ok_f, ok_z


def run_ngnmm_sparsity(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, tc, yc, ac = cfg["system"], cfg["training"], cfg["symreg"], cfg["analysis"]
    grid = sorted(float(p) for p in sc["p_c_grid"])
    Xs, Ys = [], []
    per_pc = []
    for pc in grid:
        prm = IzhNetParams(N=int(sc["N"]), p_c=pc)
        ts, raster = simulate_spiking(prm, int(sc["adjacency_seed"]), float(sc["duration"]),
                                      float(sc["dt"]), sc["x0"], record_dt=float(sc["dt_obs"]))
        tag = f"pc{pc:g}"
        man.add(f"spiking_{tag}", ts.to_csv(out / f"spiking_{tag}.csv"))
        if pc == 1.0:
            mf = simulate_ngnmm(prm, x0=sc["x0"], t_end=float(sc["duration"]), dt=float(sc["dt"]),
                                record_dt=float(sc["dt_obs"]))
            err = mean_field_error(ts, mf, float(sc["transient"]))
            tol = 0.1 if prm.N >= 1000 else 0.2
            man.summary["mean_field_rel_l2"] = err
            man.check(f"mean-field matches spiking network (rel L2 <= {tol})", err <= tol, err)
        data = ts.window(float(sc["transient"]), float(sc["duration"]))
        data = TimeSeries(data.times - data.times[0], data.values, data.channel_names)
        net = make_network(data, 2, int(tc["net_seed"]), bool(tc["normalize_inputs"]))
        problem = PemUdeProblem(ngnmm_system(prm), network_correction(net, [0, 1]), data,
                                tc["gain"], x0=data.values[0], lower=R_FLOOR)
        rep = fit(problem, net.flatten(), tc, cfg.seed, log, tag)
        rep.save(out / f"train_{tag}.json", out / f"loss_{tag}.csv")
        fitted = problem.simulate(rep.final_theta)
        man.add(f"fit_{tag}", fitted.to_csv(out / f"fit_{tag}.csv"))
        man.add(f"fit_{tag}_svg", _overlay(out / f"fit_{tag}.svg", data, fitted, "r", f"p_c = {pc:g}"))
        X, Y = export_regression_set(problem, rep.final_theta)
        Xs.append(np.column_stack([X, np.full(len(X), pc)]))
        Ys.append(Y)
        per_pc.append({"p_c": pc, "final_loss": rep.final_loss, "diverged": rep.diverged,
                       "n_spikes": len(raster)})
    man.summary["training"] = per_pc

    X, Y = np.vstack(Xs), np.vstack(Ys)
    names = NGNMM_CHANNELS + ("p_c",)
    models = sparse_fit(X, Y, names, ["r", "v"], int(yc["degree"]), float(yc["threshold"]))
    save_models(out / "model.json", models)
    man.add("model", out / "model.json")
    man.summary["model"] = [m.render(3) for m in models]

    t_end, trans, rdt = float(ac["t_end"]), float(ac["transient"]), float(ac["record_dt"])
    adt = float(ac.get("dt", 0.01))
    learned = []
    for pc in grid:
        prm = IzhNetParams(p_c=pc)
        corr, theta = model_correction(models, names[:4], exog=(pc,))
        ser = free_run(ngnmm_system(prm), corr, theta, sc["x0"], t_end, adt,
                       max(1, int(round(rdt / adt))), R_FLOOR)
        row = {"p_c": pc, "diverged": ser.failed}
        row.update(oscillation_summary(ser, trans) if not ser.failed and ser.times[-1] > trans
                   else {"frequency": float("nan"), "mean_abs_Z": float("nan")})
        learned.append(row)
    table = table_model_curves(grid, t_end, trans, adt, rdt)
    rows = [[l["p_c"], l["frequency"], l["mean_abs_Z"], t["frequency"], t["mean_abs_Z"]]
            for l, t in zip(learned, table)]
    man.add("curves", _write_table(out / "curves.csv",
                                   ["p_c", "freq_learned", "absZ_learned", "freq_table", "absZ_table"], rows))
    pcs = np.array(grid)
    man.add("freq_svg", svg.line_plot(out / "frequency.svg",
                                      [(pcs, [r[1] for r in rows], "learned"), (pcs, [r[3] for r in rows], "table")],
                                      "dominant frequency", "p_c", "frequency"))
    man.add("absz_svg", svg.line_plot(out / "abs_z.svg",
                                      [(pcs, [r[2] for r in rows], "learned"), (pcs, [r[4] for r in rows], "table")],
                                      "time-mean |Z|", "p_c", "|Z|"))
    man.summary["curves_learned"] = learned
    man.summary["curves_table"] = table
    sub = [t for t in table if any(abs(t["p_c"] - q) < 1e-12 for q in (1.0, 0.3, 0.05))]
    if len(sub) == 3:
        ok_f, ok_z = sparsity_trends(sub)
        man.check("table model: frequency increases as p_c decreases", ok_f,
                  [t["frequency"] for t in sub])
        man.check("table model: mean |Z| decreases as p_c decreases", ok_z,
                  [t["mean_abs_Z"] for t in sub])
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


# ----------------------------------------------------------- loss landscape

def strict_local_minima(values) -> int:
    """Number of strict interior local minima of a 1-D sweep."""
    L = np.asarray(values, dtype=float)
    if L.size < 3:
        return 0
    return int(np.sum((L[1:-1] < L[:-2]) & (L[1:-1] < L[2:])))


def parameter_sweep(system, data: TimeSeries, index: int, values, gain, substeps: int = 4,
                    base=None) -> np.ndarray:
    """PEM loss of the full known model with parameter ``index`` set to each value."""
    prob = PemUdeProblem(system, null_correction(system.dim), data, gain, substeps=substeps)
    p0 = np.array(system.kernel.pvec if base is None else base, dtype=float)
    empty = np.zeros(0)
    out = np.empty(len(values))
    for i, v in enumerate(values):
        p = p0.copy()
        p[index] = v
        out[i] = prob.with_params(p).loss(empty)
    return out


def run_landscape(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, so, sw = cfg["system"], cfg["solver"], cfg["sweep"]
    params = RosslerParams(sc["a"], sc["b"], sc["c"])
    system = rossler_system(params)
    data = reference_data(system, sc["x0"], sc["t_end"], sc["dt_obs"], so["abstol"], so["reltol"])
    gains = [float(g) for g in sw["gains"]]
    ch = int(sw["gain_channel"])
    sub = int(so["substeps"])
    truth = {"a": params.a, "b": params.b, "c": params.c}
    minima = {}
    for idx, name in enumerate("abc"):
        grid = _grid(sw[name])
        curves = []
        for K in gains:
            g = np.zeros(3)
            g[ch] = K
            curves.append(parameter_sweep(system, data, idx, grid, g, sub))
            log(f"sweep {name} K={K} done")
        curves = np.array(curves)
        man.add(f"sweep_{name}", _write_table(out / f"sweep_{name}.csv", [name] + [f"K={K:g}" for K in gains],
                                              np.column_stack([grid, curves.T])))
        man.add(f"sweep_{name}_svg", svg.line_plot(out / f"sweep_{name}.svg",
                                                   [(grid, c, f"K={K:g}") for K, c in zip(gains, curves)],
                                                   f"loss along {name}", name, "loss", logy=True))
        counts = [strict_local_minima(c) for c in curves]
        arg = [float(grid[np.argmin(c)]) for c in curves]
        minima[name] = {"local_minima": counts, "argmin": arg}
        i_true = int(np.argmin(np.abs(grid - truth[name])))
        if name == "a":
            man.check("a: local-minima count non-increasing in K",
                      all(x >= y for x, y in zip(counts, counts[1:])), counts)
            man.check("a: argmin within one cell of truth for every K",
                      all(abs(int(np.argmin(c)) - i_true) <= 1 for c in curves), arg)
        else:
            ok = [int(np.argmin(c)) == i_true for K, c in zip(gains, curves) if K <= 0.5]
            man.check(f"{name}: global minimum at the true value for K <= 0.5", all(ok), arg)
    man.summary["sweeps"] = minima

    plane = sw.get("plane")
    if plane:
        ga, gb = _grid(plane["a"]), _grid(plane["b"])
        for K in (gains[0], gains[-1]):
            g = np.zeros(3)
            g[ch] = K
            prob = PemUdeProblem(system, null_correction(3), data, g, substeps=sub)
            M = np.empty((gb.size, ga.size))
            for i, b in enumerate(gb):
                for j, a in enumerate(ga):
                    M[i, j] = prob.with_params([a, b, params.c]).loss(np.zeros(0))
            tag = f"plane_K{K:g}"
            _write_table(out / f"{tag}.csv", ["b\\a"] + [f"{a:.6g}" for a in ga],
                         np.column_stack([gb, M]))
            man.add(tag, out / f"{tag}.csv")
            man.add(f"{tag}_svg", svg.heatmap(out / f"{tag}.svg", np.log10(M), f"log10 loss, K={K:g}",
                                              [f"{a:.3g}" for a in ga], [f"{b:.3g}" for b in gb]))
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


# -------------------------------------------------------- shadow divergence

def run_shadow(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, so, sw = cfg["system"], cfg["solver"], cfg["sweep"]
    params = RosslerParams(sc["a"], sc["b"], sc["c"])
    system = rossler_system(params)
    ref = reference_data(system, sc["x0"], sc["t_end"], sc["dt_obs"], so["abstol"], so["reltol"])
    diam = attractor_diameter(ref)
    kw = dict(t_total=float(sc["t_end"]), x0=sc["x0"], dt_obs=float(sc["dt_obs"]),
              substeps=int(so["substeps"]), reference=ref)
    gains = [float(g) for g in sw["gains"]]
    devs = {K: shadow_divergence(system, float(sw["delta"]), K, **kw) for K in gains}
    man.add("deviation", _write_table(out / "deviation.csv", ["t"] + [f"K={K:g}" for K in gains],
                                      np.column_stack([ref.times] + [devs[K].values[:, 0] for K in gains])))
    man.add("deviation_svg", svg.line_plot(out / "deviation.svg",
                                           [(ref.times, devs[K].values[:, 0], f"K={K:g}") for K in gains],
                                           f"deviation for delta a = {sw['delta']:g}", "t", "|dx|", logy=True))
    peak = {K: float(np.max(devs[K].values)) for K in gains}
    man.summary.update({"diameter": diam, "max_deviation": {f"{K:g}": v for K, v in peak.items()}})
    if 0.0 in peak:
        man.check("K=0 deviation >= 0.1 x diameter", peak[0.0] >= 0.1 * diam, peak[0.0], f"diameter {diam:.4g}")
    if 0.18 in peak:
        man.check("K=0.18 deviation <= 1e-3", peak[0.18] <= 1e-3, peak[0.18])
    deltas = [float(d) for d in sw["deltas"]]
    Kd = float(sw["delta_gain"])
    by_delta = [float(np.max(shadow_divergence(system, d, Kd, **kw).values)) for d in deltas]
    man.add("delta_sweep", _write_table(out / "delta_sweep.csv", ["delta", "max_deviation"],
                                        zip(deltas, by_delta)))
    man.summary["delta_sweep"] = dict(zip([f"{d:g}" for d in deltas], by_delta))
    man.check(f"K={Kd:g} deviation monotone in delta", all(np.diff(by_delta) > 0), by_delta)
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


# ----------------------------------------------------------- Lyapunov CDF

def run_lyapunov_cdf(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    sc, lc, sw = cfg["system"], cfg["lyapunov"], cfg["sweep"]
    kw = dict(t_total=float(lc["t_total"]), renorm_interval=float(lc["renorm_interval"]),
              d0=float(lc["d0"]), dt=float(lc["dt"]))
    nominal = max_lyapunov(rossler_system(RosslerParams(sc["a"], sc["b"], sc["c"])), sc["x0"], **kw)
    man.summary["nominal_lambda"] = nominal.lambda_max
    man.summary["nominal_lyapunov_time"] = nominal.lyapunov_time
    t_l = nominal.lyapunov_time or float("inf")
    man.check("nominal Lyapunov time in [7, 13]", 7.0 <= t_l <= 13.0, t_l)
    rows = []
    for a in _linspace(sw["a"]):
        for b in _linspace(sw["b"]):
            for c in _linspace(sw["c"]):
                res = max_lyapunov(rossler_system(RosslerParams(a, b, c)), sc["x0"], **kw)
                rows.append([a, b, c, res.lambda_max, int(res.diverged)])
    man.add("grid", _write_table(out / "lyapunov_grid.csv", ["a", "b", "c", "lambda", "diverged"], rows))
    lam = np.array([r[3] for r in rows])
    ok = np.array([not r[4] for r in rows]) & np.isfinite(lam)
    chaotic = ok & (lam > float(lc["chaos_threshold"]))
    times = np.sort(1.0 / lam[chaotic])
    frac = float(np.mean(times <= 25.0)) if times.size else float("nan")
    man.summary.update({"n_points": len(rows), "n_chaotic": int(chaotic.sum()),
                        "n_unbounded": int((~ok).sum()), "fraction_within_25": frac})
    if times.size:
        cdf = np.arange(1, times.size + 1) / times.size
        man.add("cdf", _write_table(out / "cdf.csv", ["lyapunov_time", "cdf"], zip(times, cdf)))
        man.add("cdf_svg", svg.line_plot(out / "cdf.svg", [(times, cdf, "chaotic grid points")],
                                         "Lyapunov-time CDF", "1/lambda", "fraction"))
    man.check(">= 80% of chaotic points have Lyapunov time <= 25", times.size > 0 and frac >= 0.8, frac)
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


# ------------------------------------------------------------ PLV analysis

def plv_matrix(series: TimeSeries, edge: float = 0.05) -> np.ndarray:
    d = series.dim
    M = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            M[i, j] = M[j, i] = plv_of_signals(series.values[:, i], series.values[:, j], edge)
    return M


def _mean_offdiag(M) -> float:
    d = M.shape[0]
    return float((M.sum() - np.trace(M)) / (d * (d - 1))) if d > 1 else float("nan")


def run_plv_analysis(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    t_start = time.perf_counter()
    out, man = _start(cfg)
    ic, sc = cfg["input"], cfg["system"]
    edge = float(ic["edge_fraction"])
    sources = []
    for path in ic.get("recordings") or []:
        sources.append((Path(path).stem, TimeSeries.from_csv(path)))
    if not sources:
        for pc in sc["p_c"]:
            prm = IzhNetParams(N=int(sc["N"]), p_c=float(pc))
            _, raster = simulate_spiking(prm, int(sc["adjacency_seed"]), float(sc["duration"]),
                                         float(sc["dt"]))
            cells = np.array_split(np.arange(prm.N), int(sc["electrodes"]))
            lfp, _ = spikes_to_lfp_proxy(raster, float(sc["window"]), cells,
                                         float(sc["transient"]), float(sc["duration"]))
            sources.append((f"pc{float(pc):g}", lfp))
    rows = []
    for name, series in sources:
        M = plv_matrix(series, edge)
        _write_table(out / f"plv_{name}.csv", [""] + list(series.channel_names),
                     [[n] + list(r) for n, r in zip(series.channel_names, M)])
        man.add(f"plv_{name}", out / f"plv_{name}.csv")
        man.add(f"plv_{name}_svg", svg.heatmap(out / f"plv_{name}.svg", M, f"PLV {name}",
                                               series.channel_names, series.channel_names))
        rows.append([name, _mean_offdiag(M)])
        man.check(f"{name}: PLV entries in [0, 1] with unit diagonal",
                  bool(np.all((M >= 0) & (M <= 1)) and np.allclose(np.diag(M), 1.0)))
    man.add("summary", _write_table(out / "plv_summary.csv", ["source", "mean_plv"], rows))
    man.summary["mean_plv"] = dict(rows)
    man.wall_time = time.perf_counter() - t_start
    man.save()
    return man


RUNNERS = {
    "rossler-recovery": run_rossler_recovery,
    "circuit-noisy": run_circuit_noisy,
    "ngnmm-sparsity": run_ngnmm_sparsity,
    "landscape": run_landscape,
    "shadow": run_shadow,
    "lyapunov-cdf": run_lyapunov_cdf,
    "plv-analysis": run_plv_analysis,
}


def run_experiment(cfg: ExperimentConfig, log: Log = _quiet) -> RunManifest:
    return RUNNERS[cfg.experiment](cfg, log)
