"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment criteria run the desk-scale presets (minutes, not hours); the
whole module takes roughly half an hour on one core.  The MNIST smoke check
runs only when ``DCRNN_MNIST_DIR`` points at the IDX files.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from dcrnn import dynsys, grad, linalg, net, stability
from dcrnn.harness import checkpoint as ck
from dcrnn.harness import config, experiment, presets, report
from dcrnn.harness.config import ModelSpec
from dcrnn.net import DcrnnParams
from dcrnn.stability import EigTarget
from dcrnn.train import place_eigenvalues

from conftest import ACCEPTANCE_LINES
from helpers import fd_param_grads, grads_close, random_instance


def verdict(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------- 1. backprop vs finite differences

def test_criterion_01_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, failures, count = 0.0, 0, 0
    for cell in net.CELLS:
        for _ in range(100):
            p, x, w = random_instance(cell, rng, n_max=4, k_max=3, T_max=8, d_max=3)
            _, tape = net.forward(p, x)
            ok, excess = grads_close(grad.backprop(tape, p, w).tensors(), fd_param_grads(p, x, w),
                                     rel=1e-6, floor=1e-8)
            failures += not ok
            worst = max(worst, excess)
            count += 1
    elapsed = time.perf_counter() - t0
    verdict(1, failures == 0 and elapsed < 60,
            f"{count} instances, {failures} mismatches, worst error/tolerance {worst:.3g}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2. closed-form BPTT

def test_criterion_02_closed_form():
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in (1, 2, 3):
        for T in range(1, 11):
            p = DcrnnParams(np.array([[0.7]]), np.array([[rng.uniform(-0.5, 0.5)]]), np.zeros(1),
                            rng.uniform(-0.6, 0.6, size=(k, 1)), np.array([[1.0]]), np.zeros(1))
            x = rng.normal(size=(T, 1))
            w = np.zeros((T, 1))
            w[-1] = 1.0
            _, tape = net.dcrnn_forward(p, x, rng.normal(size=(k, 1)), activation="linear")
            _, dH = grad.backprop(tape, p, w, return_hidden=True)
            J = [p.alphas[0, 0] + p.W_rec[0, 0]] + [p.alphas[i, 0] for i in range(1, k)]
            worst = max(worst, abs(dH[k - 1, 0] - grad.closed_form_hidden_grad(k, T, J)))
    c6 = [t.coefficient for t in grad.path_terms(2, 6)]
    c4 = [t.coefficient for t in grad.path_terms(2, 4)]
    verdict(2, worst <= 1e-12 and c6 == [1, 5, 6, 1] and c4 == [1, 3, 1],
            f"max |tape - closed form| = {worst:.2e}; coefficients T=6 {c6}, T=4 {c4}")


# ---------------------------------------------------------------- 3. eigensolver

def test_criterion_03_eigensolver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {"residual": 0.0, "trace": 0.0, "det": 0.0}
    for _ in range(1000):
        m = int(rng.integers(2, 13))
        A = rng.normal(size=(m, m))
        d = linalg.eig(A)
        nrm = np.linalg.norm(A, 2)
        res = np.linalg.norm(A @ d.right_vectors - d.right_vectors * d.values, axis=0).max() / nrm
        tr = abs(d.values.sum() - np.trace(A)) / max(abs(np.trace(A)), nrm)
        det = np.linalg.det(A)
        de = abs(np.prod(d.values) - det) / max(abs(det), linalg.EPS * nrm ** m)
        for key, val in (("residual", res), ("trace", tr), ("det", de)):
            worst[key] = max(worst[key], val)
    # companion matrices of polynomials with known, separated roots (degree 1..4)
    root_err = 0.0
    for _ in range(300):
        deg = int(rng.integers(1, 5))
        while True:
            roots = list(rng.uniform(-2, 2, size=deg).astype(complex))
            if deg >= 2 and rng.random() < 0.5:
                z = complex(rng.uniform(-2, 2), rng.uniform(0.1, 2))
                roots[:2] = [z, z.conjugate()]
            r = np.array(roots)
            if deg == 1 or min(abs(a - b) for i, a in enumerate(r) for b in r[i + 1:]) > 0.05:
                break
        got = linalg.eigvals(linalg.companion(np.poly(r)[1:].real))
        for g in got:
            root_err = max(root_err, float(np.min(np.abs(r - g))))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-8 and root_err <= 1e-7 and elapsed < 60
    verdict(3, ok, f"worst relative residual {worst['residual']:.2e}, trace {worst['trace']:.2e}, "
                   f"det {worst['det']:.2e}; companion root error {root_err:.2e}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 4. regularizer gradient

def test_criterion_04_regularizer_gradient():
    rng = np.random.default_rng(4)
    worst, done = 0.0, 0
    while done < 100:
        n, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        p = DcrnnParams.init(n, 2, 1, k, seed=rng)
        p.alphas += rng.normal(0, 0.3, size=p.alphas.shape)
        tgt = EigTarget.constant(n * k, 0.3)
        d = linalg.eig(stability.build_linearized(p).A)
        if min(linalg.eigen_gap(d, i) for i in range(n * k)) < 1e-3:
            continue  # simple spectra only
        g = stability.eig_loss_grad(p, tgt, "alphas_and_wrec")
        fd = stability.eig_loss_fd_grad(p, tgt, "alphas_and_wrec", step=1e-6)
        a = np.concatenate([g.alphas.ravel(), g.W_rec.ravel()])
        f = np.concatenate([fd.alphas.ravel(), fd.W_rec.ravel()])
        worst = max(worst, np.linalg.norm(a - f) / np.linalg.norm(f))
        done += 1
    verdict(4, worst <= 1e-5, f"100 instances, worst relative gradient error {worst:.2e}")


# ---------------------------------------------------------------- 5. eigenvalue placement

def test_criterion_05_placement():
    errors = []
    for seed in range(5):
        p = DcrnnParams.init(2, 3, 3, 2, seed=seed)
        tgt = EigTarget.constant(4, 0.3)
        q, _ = place_eigenvalues(p, tgt, steps=2000, lr=0.05, lr_final=1e-6, scope="alphas_and_wrec")
        vals = linalg.eigvals(stability.build_linearized(q).A)
        errors.append(float(np.max(np.abs(vals - 0.3))))
    verdict(5, max(errors) < 1e-2,
            f"n=2, k=2, 2000 Adam steps, seeds 0-4: max |lambda - 0.3| = {[round(e, 4) for e in errors]}")


# ---------------------------------------------------------------- 6 + 11. forecasting

@pytest.fixture(scope="module")
def forecast_run():
    t0 = time.perf_counter()
    res = experiment.run_experiment(presets.preset("lorenz-forecast"))
    return res, time.perf_counter() - t0


def test_criterion_06_forecast(forecast_run):
    res, elapsed = forecast_run
    d, lstm, rnn = (res.values(m) for m in ("dcrnn-k1", "lstm", "rnn"))
    n = len(d)
    wins_lstm = sum(a < b for a, b in zip(d, lstm))
    wins_rnn = sum(a < b for a, b in zip(d, rnn))
    red = float(np.mean([1 - a / b for a, b in zip(d, lstm)]))
    ok = n == 10 and wins_lstm >= 9 and red >= 0.5 and wins_rnn >= 7 and elapsed < 1800
    verdict(6, ok, f"DCRNN < LSTM in {wins_lstm}/{n}, < RNN in {wins_rnn}/{n}, mean MSE reduction vs LSTM "
                   f"{red:.1%}; mean MSE dcrnn {np.mean(d):.4g}, lstm {np.mean(lstm):.4g}, rnn {np.mean(rnn):.4g}; "
                   f"{elapsed / 60:.1f} min")


def test_criterion_11_stability(forecast_run):
    res, _ = forecast_run
    radii = [r.final["spectral_radius"] for r in res.select(model="dcrnn-k1")]
    verdict(11, len(radii) == 10 and max(radii) < 1.0,
            f"spectral radius of A after training: max {max(radii):.4f} over {len(radii)} trials")


# ---------------------------------------------------------------- 7 + 8. classification

@pytest.fixture(scope="module")
def classify_t10():
    spec = presets.preset("lorenz-classify")
    spec.data["T"] = [10]
    t0 = time.perf_counter()
    res = experiment.run_experiment(spec)
    return res, time.perf_counter() - t0


def test_criterion_07_classification(classify_t10):
    res, elapsed = classify_t10
    acc_d, acc_l = res.values("dcrnn-k1", 10), res.values("lstm", 10)
    gap = lambda m: float(np.mean(np.array(res.values(m, 10, "train")) - np.array(res.values(m, 10))))
    gd, gl = gap("dcrnn-k1"), gap("lstm")
    ok = len(acc_d) == len(acc_l) == 5 and np.mean(acc_d) > np.mean(acc_l) and gl > gd and elapsed < 1800
    verdict(7, ok, f"test accuracy dcrnn {np.mean(acc_d):.4f} vs lstm {np.mean(acc_l):.4f}; "
                   f"train-test gap dcrnn {gd:.4f} vs lstm {gl:.4f}; {elapsed / 60:.1f} min (incl. k=2)")


def test_criterion_08_length_trend(classify_t10):
    res10, _ = classify_t10
    spec = presets.preset("lorenz-classify")
    spec.data["T"] = [100]
    spec.models = [ModelSpec("dcrnn", 2)]
    res100 = experiment.run_experiment(spec)
    a10 = float(np.mean(res10.values("dcrnn-k2", 10)))
    a100 = float(np.mean(res100.values("dcrnn-k2", 100)))
    verdict(8, a100 - a10 >= 0.02, f"DCRNN(k=2) mean test accuracy T=10 {a10:.4f}, T=100 {a100:.4f}, "
                                   f"difference {a100 - a10:+.4f}")


# ---------------------------------------------------------------- 9. copy task

def test_criterion_09_copy():
    spec = presets.preset("copy")
    spec.models = [ModelSpec("dcrnn", 1)]
    res = experiment.run_experiment(spec)
    ce = res.values("dcrnn-k1")[0]
    base = dynsys.copy_baseline_loss(20)
    verdict(9, ce >= base - 0.05, f"T=20, 50 epochs: test cross entropy {ce:.4f}, memoryless baseline {base:.5f}")


# ---------------------------------------------------------------- 10. Jacobian bound

def test_criterion_10_jacobian_bound():
    rng = np.random.default_rng(10)
    worst = -math.inf
    for _ in range(100):
        n, k, d = int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        p = DcrnnParams.init(n, d, 2, k, seed=rng)
        p.alphas += rng.normal(0, 0.5, size=p.alphas.shape)
        p.W_rec *= rng.uniform(0.2, 3.0)
        _, tape = net.dcrnn_forward(p, rng.normal(0, 3, size=(4, int(rng.integers(1, 20)), d)))
        norms = np.linalg.norm(stability.step_jacobians(tape, p), ord=2, axis=(-2, -1))
        worst = max(worst, float(norms.max() - stability.jacobian_bound(p)))
    verdict(10, worst <= 1e-10, f"100 forward passes: max(realized norm - bound) = {worst:.3g}")


# ---------------------------------------------------------------- 12. infrastructure

TINY = """\
[experiment]
name = lorenz-forecast
trials = 2
seed = 3
[train]
hidden = 6
epochs = 3
batch_size = 4
[data]
n_ic = 6
traj_len = 30
[model]
cell = dcrnn
k = 2
[model]
cell = lstm
"""


def _strip_wall_time(files):
    out = {}
    for name, text in files.items():
        if name.startswith("metrics/"):
            recs = [json.loads(line) for line in text.splitlines()]
            text = [{k: v for k, v in r.items() if k != "wall_time"} for r in recs]
        out[name] = text
    return out


def test_criterion_12_infrastructure(tmp_path):
    spec = config.parse_config_text(TINY)
    a = experiment.run_experiment(spec)
    b = experiment.run_experiment(config.parse_config_text(TINY))
    same_report = _strip_wall_time(report.render_report(a)) == _strip_wall_time(report.render_report(b))
    same_ckpt = all(ck.dumps_checkpoint(ck.Checkpoint(x.params, x.steps, x.rng_state))
                    == ck.dumps_checkpoint(ck.Checkpoint(y.params, y.steps, y.rng_state))
                    for x, y in zip(a.records, b.records))
    roundtrip = True
    for rec in a.records:
        c = ck.Checkpoint(rec.params, rec.steps, rec.rng_state, {"trial": rec.trial})
        path = tmp_path / f"{rec.model}-{rec.trial}.dcrn"
        ck.save_checkpoint(path, c)
        back = ck.load_checkpoint(path)
        roundtrip &= back == c and ck.dumps_checkpoint(back) == path.read_bytes()
        roundtrip &= all(getattr(back.params, k).tobytes() == v.tobytes() for k, v in c.params.tensors().items())
    lines = []
    for text, line in (("[experiment]\nname = copy\n[train]\nepochs = ten\n", 4),
                       ("[experiment]\nname = copy\n\n\nmystery = 1\n", 5),
                       ("[experiment]\nname = copy\n[nope]\n", 3)):
        try:
            config.parse_config_text(text)
            lines.append(False)
        except Exception as exc:  # noqa: BLE001 - checking the error type below
            lines.append(getattr(exc, "line", None) == line and str(exc).startswith(f"line {line}:"))
    verdict(12, roundtrip and same_report and same_ckpt and all(lines),
            f"checkpoint bitwise round trip {roundtrip}; deterministic reports {same_report} and "
            f"checkpoints {same_ckpt}; config errors with line numbers {all(lines)}")


# ---------------------------------------------------------------- MNIST smoke

@pytest.mark.skipif(not os.environ.get("DCRNN_MNIST_DIR"), reason="DCRNN_MNIST_DIR not set (no MNIST files)")
def test_mnist_smoke():
    res = experiment.run_experiment(presets.preset("mnist-rows"))
    accs = {label: res.values(label) for label in res.model_labels}
    ok = all(v and v[0] >= 0.85 for v in accs.values())
    verdict("mnist", ok, "2000-image subset, 20 epochs: " + ", ".join(
        f"{k} {v[0]:.3f}" if v else f"{k} failed" for k, v in accs.items()))
