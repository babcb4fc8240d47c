"""End-to-end acceptance checks at the full desk-scale budgets.

Each criterion prints one ``PASS``/``FAIL`` line (also repeated in the pytest
terminal summary). Set ``PEMUDE_ACCEPTANCE_FAST=1`` to use the reduced budgets;
only the mean-field criterion has a stated reduced-budget threshold, so other
criteria may fail in that mode.
"""

import math
import os

import numpy as np
import pytest

from conftest import gradient_rel_error
from pemude.config import ExperimentConfig
from pemude.experiments import (make_network, mean_field_error, reference_data, run_experiment,
                                sparsity_trends, table_model_curves)
from pemude.odesim import TimeSeries
from pemude.metrics import inverse_kuramoto, kuramoto_Z, plv
from pemude.pem import PemUdeProblem, export_regression_set, network_correction
from pemude.rbfnet import finite_difference_gradient, load_checkpoint
from pemude.systems import (IzhNetParams, R_FLOOR, ngnmm_system, pp_system, rossler_missing_term,
                            rossler_system, simulate_ngnmm, simulate_spiking)

FAST = os.environ.get("PEMUDE_ACCEPTANCE_FAST", "") not in ("", "0")
RESULTS = {}


def report(capsys, number: int, title: str, checks):
    """Record and print one line per criterion, then fail on any failed check."""
    failed = [f"{name} [{value}]" for name, ok, value in checks if not ok]
    line = f"{'PASS' if not failed else 'FAIL'}  criterion {number:2d}: {title}"
    if failed:
        line += "  (" + "; ".join(failed) + ")"
    RESULTS[number] = line
    with capsys.disabled():
        print("\n" + line)
    assert not failed, line


def checks_of(man, *names):
    by = {c.name: c for c in man.checks}
    out = []
    for n in names:
        c = by.get(n)
        out.append((n, c is not None and c.passed, None if c is None else c.value))
    return out


def run(name, tmp_path_factory, **overrides):
    out = tmp_path_factory.mktemp(name)
    cfg = ExperimentConfig.from_dict(overrides, name, fast=FAST, out_dir=str(out))
    return run_experiment(cfg)


@pytest.fixture(scope="module")
def rossler_run(tmp_path_factory):
    return run("rossler-recovery", tmp_path_factory)


@pytest.fixture(scope="module")
def circuit_run(tmp_path_factory):
    return run("circuit-noisy", tmp_path_factory)


def test_criterion_01_rossler_recovery(rossler_run, capsys):
    report(capsys, 1, "Rössler hidden term recovered as 1.000*x + 0.200*y",
           checks_of(rossler_run, "training did not diverge", "support is {x, y}",
                     "|p1 - 1| <= 1e-3", "|p2 - 0.2| <= 1e-3"))


def test_rossler_network_explains_hidden_term(rossler_run):
    # the trained network, read back from its checkpoint, matches x + 0.2*y along the fit
    net, _ = load_checkpoint(rossler_run.artifacts["checkpoint"])
    data = reference_data(rossler_system(), [1.0, 1.0, 1.0], 100.0, 0.1)
    prob = PemUdeProblem(rossler_system(learn=True), network_correction(net, [1]), data,
                         [0.0, 0.25, 0.0])
    X, Y = export_regression_set(prob, net.flatten())
    true = rossler_missing_term(X)
    r2 = 1.0 - np.sum((Y[:, 0] - true) ** 2) / np.sum((true - true.mean()) ** 2)
    assert r2 > 0.99


def test_criterion_02_pem_necessity(rossler_run, capsys):
    report(capsys, 2, "zero-gain loss >= 10x PEM loss (final and at 10% budget)",
           checks_of(rossler_run, "no-gain loss >= 10x PEM loss", "ratio >= 10x at 10% of budget"))


def test_criterion_03_landscape(tmp_path_factory, capsys):
    man = run("landscape", tmp_path_factory)
    names = [c.name for c in man.checks if c.name.startswith(("a:", "b:", "c:"))]
    assert len(names) == 4
    report(capsys, 3, "gain smooths the parameter loss landscape", checks_of(man, *names))


def test_criterion_04_shadow(tmp_path_factory, capsys):
    man = run("shadow", tmp_path_factory)
    report(capsys, 4, "gain suppresses shadow divergence",
           checks_of(man, "K=0 deviation >= 0.1 x diameter", "K=0.18 deviation <= 1e-3",
                     "K=0.25 deviation monotone in delta"))


def test_criterion_05_circuit(circuit_run, capsys):
    report(capsys, 5, "noisy circuit: PEM-UDE finds {x^2, z, 1}, direct baseline fails",
           checks_of(circuit_run, "training did not diverge", "PEM-UDE support is {x^2, z, 1}",
                     "baseline fails for every threshold", "baseline drops x for thresholds >= 0.3"))


def test_criterion_06_mean_field(capsys):
    N, tol = (200, 0.2) if FAST else (1000, 0.1)
    prm = IzhNetParams(N=N, p_c=1.0)
    spk, _ = simulate_spiking(prm, 0, 300.0, 1e-3, record_dt=0.5)
    mf = simulate_ngnmm(prm, t_end=300.0, dt=1e-3, record_dt=0.5)
    err = mean_field_error(spk, mf, 20.0)
    report(capsys, 6, f"fully connected network matches mean field (N={N})",
           [(f"relative L2 error <= {tol}", err <= tol, err)])


def test_criterion_07_sparsity_trends(capsys):
    rows = table_model_curves([1.0, 0.3, 0.05], 3000.0, 1000.0)
    ok_f, ok_z = sparsity_trends(rows)
    report(capsys, 7, "table corrections: frequency up and |Z| down as p_c decreases",
           [("frequency strictly increasing", ok_f, [r["frequency"] for r in rows]),
            ("mean |Z| strictly decreasing", ok_z, [r["mean_abs_Z"] for r in rows])])


def _gradient_problems():
    ros = reference_data(rossler_system(), [1.0, 1.0, 1.0], 100.0, 0.1)
    net = make_network(ros, 1, 1, True)
    yield "rossler", PemUdeProblem(rossler_system(learn=True), network_correction(net, [1]), ros,
                                   [0.0, 0.25, 0.0]), net
    pp = reference_data(pp_system(), [0.1, 0.0, 0.0], 100.0, 0.1)
    net = make_network(pp, 1, 1, False)
    yield "circuit", PemUdeProblem(pp_system(learn=True), network_correction(net, [1]), pp,
                                   [0.0, 0.5, 0.0]), net
    prm = IzhNetParams()
    mf = simulate_ngnmm(prm, t_end=100.0, dt=1e-3, record_dt=0.5).window(20.0, 100.0)
    mf = TimeSeries(mf.times - mf.times[0], mf.values, mf.channel_names)
    net = make_network(mf, 2, 1, True)
    yield "ngnmm", PemUdeProblem(ngnmm_system(prm), network_correction(net, [0, 1]), mf,
                                 [0.25, 0.25, 0.0, 0.0], x0=mf.values[0], lower=R_FLOOR), net


def test_criterion_08_gradients(capsys):
    checks = []
    for name, prob, net in _gradient_problems():
        worst = 0.0
        for k in range(5):
            rng = np.random.default_rng(100 + k)
            theta = net.flatten() + 0.1 * rng.standard_normal(net.n_params)
            coords = rng.choice(net.n_params, 20, replace=False)
            _, g, bad = prob.loss_and_grad(theta)
            assert not bad
            fd = finite_difference_gradient(prob.loss, theta, 1e-5, coords)
            worst = max(worst, gradient_rel_error(g, fd, coords))
        checks.append((f"{name}: max relative error <= 1e-4", worst <= 1e-4, worst))
    report(capsys, 8, "loss gradients agree with central differences", checks)


def test_criterion_09_lyapunov(tmp_path_factory, capsys):
    man = run("lyapunov-cdf", tmp_path_factory)
    report(capsys, 9, "Rössler Lyapunov time and sweep CDF",
           checks_of(man, "nominal Lyapunov time in [7, 13]",
                     ">= 80% of chaotic points have Lyapunov time <= 25"))


def test_criterion_10_synchrony(capsys):
    rng = np.random.default_rng(0)
    phi = rng.uniform(-np.pi, np.pi, 10_000)
    offset = [plv(phi, phi + c) for c in (0.0, 0.3, -2.0, 7.5)]
    below = 0
    for seed in range(200):
        r = np.random.default_rng(seed)
        below += plv(r.uniform(-np.pi, np.pi, 10_000), r.uniform(-np.pi, np.pi, 10_000)) < 0.05
    z0, z1 = complex(kuramoto_Z(0.0, 0.0)), complex(kuramoto_Z(1.0 / math.pi, 0.0))
    report(capsys, 10, "PLV and Kuramoto identities",
           [("PLV(phi, phi + c) == 1", all(v == 1.0 for v in offset), offset),
            ("independent PLV < 0.05 in >= 99% of seeds", below / 200 >= 0.99, below / 200),
            ("Z(W=0) == 1 to 1e-12", abs(z0 - 1.0) <= 1e-12, z0),
            ("Z(W=1) == 0 to 1e-12", abs(z1) <= 1e-12, z1),
            ("W(Z(W)) == W", abs(inverse_kuramoto(z0)) <= 1e-12, inverse_kuramoto(z0))])
