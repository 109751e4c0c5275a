"""The compiled and pure-Python kernels must agree to rounding."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mmrec import backend, _pykernels
from mmrec.fm import FeatureEncoder, init_fm

BACKENDS = backend.available()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")


def fm_problem(seed=0, n_users=15, n_items=40, width=6):
    rng = np.random.default_rng(seed)
    joint = rng.random((n_items, width)) * (rng.random((n_items, width)) > 0.5)
    enc = FeatureEncoder(n_users, n_items, joint)
    m = init_fm(enc.layout, 5, seed, init_std=0.1)
    users = rng.integers(n_users, size=200)
    items = rng.integers(n_items, size=200)
    labels = (rng.random(200) > 0.7).astype(float)
    order = rng.permutation(200).astype(np.int64)
    return m, enc.encode(users, items), labels, order


def sim_problem(seed=0, n=25, d=4, D=3):
    rng = np.random.default_rng(seed)
    params = dict(P=rng.normal(size=(n, d)) * 0.3, O=rng.normal(size=(n, d)) * 0.3,
                  M=rng.normal(size=(D, d)) * 0.3, codes=rng.normal(size=(n, D)),
                  A=rng.normal(size=(d, 2 * d)) * 0.3, z=rng.normal(size=d) * 0.3)
    hist = [np.sort(rng.choice(n, size=int(rng.integers(0, 6)), replace=False)) for _ in range(8)]
    indptr = np.concatenate(([0], np.cumsum([h.size for h in hist]))).astype(np.int64)
    indices = np.concatenate(hist).astype(np.int64)
    users = rng.integers(8, size=60).astype(np.int64)
    items = rng.integers(n, size=60).astype(np.int64)
    labels = (rng.random(60) > 0.5).astype(float)
    order = rng.permutation(60).astype(np.int64)
    return params, users, items, labels, indptr, indices, order


def test_backend_selection_reports_name():
    assert backend.NAME in BACKENDS
    assert backend.kernels.NAME == backend.NAME
    assert "python" in BACKENDS


def test_predict_backends(kernel_module):
    m, csr, _, _ = fm_problem()
    y = kernel_module.fm_predict(m.w0, m.w, m.V, *csr)
    ref = _pykernels.fm_predict(m.w0, m.w, m.V, *csr)
    assert np.allclose(y, ref, rtol=1e-13, atol=1e-15)


@needs_both
@pytest.mark.parametrize("seed", range(3))
def test_fm_epoch_backends_agree(seed):
    out = {}
    for name, k in BACKENDS.items():
        m, csr, labels, order = fm_problem(seed)
        w0, w, V = np.array([0.05]), m.w.copy(), m.V.copy()
        loss = k.fm_sgd_epoch(w0, w, V, *csr, labels, order, 0.05, 1e-3)
        out[name] = (loss, w0, w, V)
    (la, *pa), (lb, *pb) = out.values()
    assert la == pytest.approx(lb, rel=1e-12)
    for x, y in zip(pa, pb):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-15)


@needs_both
@pytest.mark.parametrize("seed", range(3))
def test_sim_epoch_backends_agree(seed):
    out = {}
    for name, k in BACKENDS.items():
        params, users, items, labels, indptr, indices, order = sim_problem(seed)
        arrs = {key: v.copy() for key, v in params.items()}
        loss = k.sim_sgd_epoch(arrs["P"], arrs["O"], arrs["M"], arrs["codes"], arrs["A"], arrs["z"], 0.5,
                               users, items, labels, indptr, indices, order, 0.05, 1e-3)
        out[name] = (loss, arrs)
    (la, a), (lb, b) = out.values()
    assert la == pytest.approx(lb, rel=1e-12)
    for key in a:
        assert np.allclose(a[key], b[key], rtol=1e-12, atol=1e-15), key


def test_fm_epoch_single_step_by_hand():
    # one instance, x = e_0 + e_1: the update is plain SGD on the logistic loss
    w0, w = np.array([0.0]), np.zeros(2)
    V = np.array([[0.1, 0.2], [0.3, -0.1]])
    V_before = V.copy()
    indptr, indices, values = np.array([0, 2]), np.array([0, 1]), np.array([1.0, 1.0])
    y = float(V[0] @ V[1])
    loss = _pykernels.fm_sgd_epoch(w0, w, V, indptr, indices, values, np.array([1.0]), np.array([0]), 0.1, 0.0)
    g = 1 / (1 + np.exp(-y)) - 1.0
    assert loss == pytest.approx(np.log1p(np.exp(-y)), rel=1e-14)
    assert w0[0] == pytest.approx(-0.1 * g, rel=1e-14)
    assert np.allclose(V[0], V_before[0] - 0.1 * g * V_before[1], rtol=1e-14)


def test_env_override_selects_python_backend():
    env = {**os.environ, "MMREC_BACKEND": "python"}
    res = subprocess.run([sys.executable, "-c", "from mmrec import backend; print(backend.NAME)"],
                         capture_output=True, text=True, env=env)
    assert res.stdout.strip() == "python"


def test_benchmark_script_runs():
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    res = subprocess.run([sys.executable, str(script), "--users", "30", "--items", "300", "--repeat", "1"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0, res.stderr
    assert "fm_sgd_epoch" in res.stdout and "sim_sgd_epoch" in res.stdout
