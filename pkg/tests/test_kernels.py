import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import floyd_warshall as scipy_floyd_warshall

from lorentz_embed import _kernels_py, kernels

try:
    from lorentz_embed import _kernels as compiled
except ImportError:
    compiled = None

BACKENDS = [_kernels_py] + ([compiled] if compiled is not None else [])
seeds = st.integers(0, 2**32 - 1)


def random_weights(rng, n):
    W = np.full((n, n), np.inf)
    np.fill_diagonal(W, 0.0)
    for _ in range(2 * n):
        i, j = rng.integers(n, size=2)
        if i != j:
            W[i, j] = W[j, i] = min(W[i, j], rng.uniform(0.1, 3))
    return W


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=40, deadline=None)
@given(seed=seeds, n=st.integers(1, 25))
def test_floyd_warshall_matches_scipy(impl, seed, n):
    W = random_weights(np.random.default_rng(seed), n)
    dist, nxt = impl.floyd_warshall(W)
    ref = scipy_floyd_warshall(np.where(np.isinf(W), 0, W), directed=False)
    np.testing.assert_allclose(dist, ref, atol=1e-12)
    # following the successor table reproduces the distance
    for i in range(n):
        for j in range(n):
            if np.isfinite(dist[i, j]) and i != j:
                total, k = 0.0, i
                while k != j:
                    step = int(nxt[k, j])
                    total += W[k, step]
                    k = step
                assert total == pytest.approx(dist[i, j], abs=1e-12)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=40, deadline=None)
@given(seed=seeds, k=st.integers(1, 6))
def test_min_eigenvalue_matches_eigvalsh(impl, seed, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(30, k, k))
    mats = A + A.transpose(0, 2, 1)
    np.testing.assert_allclose(impl.batch_min_eigenvalue(mats), np.linalg.eigvalsh(mats)[:, 0], atol=1e-9)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@settings(max_examples=40, deadline=None)
@given(seed=seeds, m=st.integers(2, 30))
def test_polyline_at_interpolates(impl, seed, m):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(m, 3))
    cum = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, m - 1))])
    q = np.concatenate([cum, rng.uniform(-0.5, cum[-1] + 0.5, 20)])
    ref = np.column_stack([np.interp(q, cum, pts[:, c]) for c in range(3)])
    np.testing.assert_allclose(impl.polyline_at(cum, pts, q), ref, atol=1e-12)


@pytest.mark.skipif(compiled is None, reason="extension not built")
def test_compiled_backend_is_selected_by_default():
    if os.environ.get("LORENTZ_EMBED_PURE"):
        pytest.skip("fallback forced by the environment")
    assert kernels.BACKEND == "cython"


def test_environment_forces_the_fallback():
    env = dict(os.environ, LORENTZ_EMBED_PURE="1")
    res = subprocess.run([sys.executable, "-c", "from lorentz_embed import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert res.stdout.strip() == "python"
