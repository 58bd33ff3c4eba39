"""Both kernel backends agree with each other and with a direct loop."""
import os
import subprocess
import sys

import numpy as np
import pytest

from agdnet import _kernels_py, kernels

try:
    from agdnet import _kernels
except ImportError:  # compiled extension not built
    _kernels = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
BACKENDS.append(pytest.param(_kernels, id="compiled", marks=pytest.mark.skipif(_kernels is None, reason="extension not built")))


def loop_forward(x, w):
    c, h, wd = x.shape
    pad = np.zeros((c, h + 2, wd + 2))
    pad[:, 1:-1, 1:-1] = x
    out = np.zeros_like(x)
    for a in range(3):
        for b in range(3):
            out += w[:, a, b, None, None] * pad[:, a:a + h, b:b + wd]
    return out


@pytest.mark.parametrize("mod", BACKENDS)
@pytest.mark.parametrize("shape", [(1, 1, 1), (2, 1, 5), (3, 6, 7), (4, 2, 2)])
def test_forward_matches_loop(mod, shape):
    rng = np.random.default_rng(sum(shape))
    x, w = rng.normal(size=shape), rng.normal(size=(shape[0], 3, 3))
    np.testing.assert_allclose(mod.dwconv3x3_forward(x, w), loop_forward(x, w), atol=1e-12)


@pytest.mark.parametrize("mod", BACKENDS)
def test_gradients_are_adjoints(mod):
    rng = np.random.default_rng(9)
    x, w, g = rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 5, 4))
    inner = (mod.dwconv3x3_forward(x, w) * g).sum()
    assert np.isclose((x * mod.dwconv3x3_grad_input(g, w)).sum(), inner, rtol=1e-12)
    assert np.isclose((w * mod.dwconv3x3_grad_weight(g, x)).sum(), inner, rtol=1e-12)


@pytest.mark.skipif(_kernels is None, reason="extension not built")
def test_backends_agree():
    rng = np.random.default_rng(10)
    x, w, g = rng.normal(size=(8, 9, 11)), rng.normal(size=(8, 3, 3)), rng.normal(size=(8, 9, 11))
    np.testing.assert_allclose(_kernels.dwconv3x3_forward(x, w), _kernels_py.dwconv3x3_forward(x, w), atol=1e-12)
    np.testing.assert_allclose(_kernels.dwconv3x3_grad_input(g, w), _kernels_py.dwconv3x3_grad_input(g, w), atol=1e-12)
    np.testing.assert_allclose(_kernels.dwconv3x3_grad_weight(g, x), _kernels_py.dwconv3x3_grad_weight(g, x), atol=1e-11)


def test_backend_selection_env():
    code = "from agdnet import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "AGDNET_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "compiled")
