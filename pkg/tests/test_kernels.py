import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from eeral import _kernels

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")


def batch(rng, G, N, ts, ta, scale=1.0):
    B = rng.uniform(-scale, scale, (ta, ta))
    return (rng.uniform(-scale, scale, (G, ts)), rng.uniform(-scale, scale, (G, N, ta)),
            rng.uniform(-scale, scale, (ts, ta)), 0.5 * (B + B.T))


@needs_numba
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 10), st.integers(2, 9), st.integers(2, 9),
       st.integers(1, 12), st.sampled_from([0.0, 0.3, 0.7]), st.integers(0, 2**32 - 1))
def test_numba_matches_numpy(G, N, ts, ta, rounds, damping, seed):
    rng = np.random.default_rng(seed)
    us, ua, A, B = batch(rng, G, N, ts, ta, scale=3.0)
    a = _kernels.bp_marginals_numba(us, ua, A, B, rounds, damping)
    b = _kernels.bp_marginals_numpy(us, ua, A, B, rounds, damping)
    assert_allclose(a[0], b[0], atol=1e-12)
    assert_allclose(a[1], b[1], atol=1e-12)


@needs_numba
def test_numba_handles_clamp_rows(rng):
    us, ua, A, B = batch(rng, 3, 4, 3, 4)
    ua[:, 1] = _kernels.CLAMP_OFF
    ua[:, 1, 2] = 0.0
    a = _kernels.bp_marginals_numba(us, ua, A, B, 6)
    b = _kernels.bp_marginals_numpy(us, ua, A, B, 6)
    assert_allclose(a[1], b[1], atol=1e-12)
    assert_allclose(a[1][:, 1, 2], 1.0)


def test_batch_rows_independent(rng):
    us, ua, A, B = batch(rng, 4, 3, 3, 3)
    full = _kernels.bp_marginals(us, ua, A, B, 5)
    for g in range(4):
        one = _kernels.bp_marginals(us[g:g + 1], ua[g:g + 1], A, B, 5)
        assert_allclose(one[1][0], full[1][g], atol=1e-15)


@pytest.mark.parametrize("flag, expected", [("0", "False"), ("1", str(_kernels.NUMBA_AVAILABLE))])
def test_env_flag_selects_path(flag, expected):
    env = dict(os.environ, EERAL_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from eeral import _kernels; print(_kernels.USE_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
