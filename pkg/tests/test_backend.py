import os
import subprocess
import sys

import numpy as np
import pytest

from graphsync import backend


class TestKernelParity:
    @pytest.mark.skipif(backend.sinkhorn_square_numba is None, reason="numba unavailable")
    def test_numba_matches_numpy(self):
        rng = np.random.default_rng(0)
        for n in (2, 5, 16, 33):
            logw = rng.uniform(-10, 10, (n, n)) / 0.05
            out_a, devs_a, iters_a = backend.sinkhorn_square_numpy(logw, 50, 1e-9)
            out_b, devs_b, iters_b = backend.sinkhorn_square_numba(logw, 50, 1e-9)
            assert iters_a == iters_b
            assert np.abs(out_a - out_b).max() < 1e-12
            assert np.abs(np.asarray(devs_a) - np.asarray(devs_b)).max() < 1e-12

    def test_marginals_exact_after_rounding(self):
        rng = np.random.default_rng(1)
        logw = rng.uniform(-200, 200, (12, 12))
        out, _, _ = backend.sinkhorn_square(logw, 5, 1e-12)
        assert np.abs(out.sum(axis=0) - 1.0).max() < 1e-12
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12


class TestBackendSelection:
    def test_default_backend_reported(self):
        assert backend.BACKEND in ("numba", "numpy")

    def test_env_flag_forces_numpy(self):
        env = dict(os.environ, GRAPHSYNC_BACKEND="numpy")
        code = (
            "import graphsync.backend as b; "
            "assert b.BACKEND == 'numpy'; "
            "assert b.sinkhorn_square is b.sinkhorn_square_numpy"
        )
        subprocess.run([sys.executable, "-c", code], check=True, env=env)
