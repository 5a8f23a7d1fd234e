from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arlab import _accel, kernels
from arlab.diagnostics import eluder_levels, pair_differences

NAMES = [
    "backward_induction",
    "backward_induction_batch",
    "evaluate_policy",
    "sample_path",
    "linear_backward",
    "eluder_longest",
]


def _variants(name):
    loops = getattr(kernels, f"{name}_loops")
    out = {"loops": loops, "numpy": getattr(kernels, f"{name}_numpy")}
    if hasattr(loops, "py_func"):
        out["python"] = loops.py_func
    return out


def _args(name, seed):
    rng = np.random.default_rng(seed)
    S, A, H = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    P = rng.dirichlet(np.ones(S), size=(S, A))
    r = rng.random((S, A))
    if name == "backward_induction":
        return (P, r, H)
    if name == "backward_induction_batch":
        return (rng.dirichlet(np.ones(S), size=(3, S, A)), r, H)
    if name == "evaluate_policy":
        return (P, r, rng.integers(A, size=(H, S)))
    if name == "sample_path":
        return (np.cumsum(P, axis=2), rng.integers(A, size=(H, S)), int(rng.integers(S)), rng.random(H))
    if name == "linear_backward":
        d = int(rng.integers(1, 4))
        phi = rng.random((S, A, S, d)) / (S * d)
        B = rng.normal(size=(d, d))
        sig_inv = np.linalg.inv(np.eye(d) + B @ B.T)
        return (phi, r, H, rng.normal(size=d), 0.5 * (sig_inv + sig_inv.T), float(rng.uniform(0, 2)))
    table = rng.integers(0, 3, size=(int(rng.integers(2, 5)), int(rng.integers(1, 6)))).astype(float)
    diff = pair_differences(table)
    strict = bool(rng.integers(2))
    levels = eluder_levels(diff, 0.5, strict)
    if levels.size == 0:
        levels = np.array([1.0])
    return (diff, levels, strict)


def _same(a, b):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _same(x, y)
    elif isinstance(a, np.ndarray) and a.dtype.kind in "iu":
        assert np.array_equal(a, b)
    else:
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", NAMES)
@given(seed=st.integers(0, 2**31 - 1))
def test_loop_and_numpy_versions_agree(name, seed):
    args = _args(name, seed)
    outs = {k: f(*args) for k, f in _variants(name).items()}
    ref = outs.pop("numpy")
    for out in outs.values():
        _same(out, ref)


@pytest.mark.parametrize("name", NAMES)
def test_public_name_binds_to_selected_backend(name):
    public = getattr(kernels, name)
    expected = getattr(kernels, f"{name}_loops" if _accel.USE_NUMBA else f"{name}_numpy")
    assert public is expected


def test_ties_go_to_lowest_action():
    P = np.full((2, 3, 2), 0.5)
    r = np.ones((2, 3))
    for f in _variants("backward_induction").values():
        _, _, pi = f(P, r, 2)
        assert np.all(pi == 0)


def test_sample_path_respects_cumulative_boundaries():
    cum = np.cumsum(np.array([[[0.25, 0.25, 0.5]]] * 3), axis=2)
    pi = np.zeros((3, 3), dtype=np.int64)
    for f in _variants("sample_path").values():
        states, _ = f(cum, pi, 0, np.array([0.0, 0.25, 0.999]))
        # u < 0.25 -> 0, 0.25 <= u < 0.5 -> 1, otherwise 2
        assert states.tolist() == [0, 0, 1, 2]


def test_disable_switch_is_read_from_environment(monkeypatch):
    import importlib

    monkeypatch.setenv("ARLAB_DISABLE_NUMBA", "1")
    mod = importlib.reload(_accel)
    try:
        assert mod.USE_NUMBA is False
        assert mod.backend_name() == "numpy"
    finally:
        monkeypatch.delenv("ARLAB_DISABLE_NUMBA")
        importlib.reload(_accel)


def test_numpy_backend_end_to_end_matches(tmp_path):
    import json
    import os
    import subprocess
    import sys

    code = (
        "import json, numpy as np, arlab\n"
        "from arlab.mdp import random_mdp, value_iteration\n"
        "m = random_mdp(4, 3, 3, np.random.default_rng(3))\n"
        "vt, pol = value_iteration(m.true_kernel, m.reward, 3)\n"
        "print(json.dumps([arlab.backend_name(), vt.values.tolist(), pol.actions.tolist()]))\n"
    )
    outs = {}
    for flag in ("1", "0"):
        env = {**os.environ, "ARLAB_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs[flag] = json.loads(res.stdout)
    assert outs["1"][0] == "numpy"
    assert np.allclose(outs["1"][1], outs["0"][1], atol=1e-12)
    assert outs["1"][2] == outs["0"][2]
