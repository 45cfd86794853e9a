import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hybridphase import kernels
from hybridphase.dynamics import TABLEAUX, Scheme
from hybridphase.kernels import CompiledPolynomial
from helpers import random_polynomial

needs_cython = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled extension not built")


def _sample(seed=0, n=1, N=2):
    rng = np.random.default_rng(seed)
    polys = [random_polynomial(rng, n, N, max_degree=4, max_terms=6) for _ in range(2)]
    Y = rng.uniform(-1, 1, (7, 2 * (n + N)))
    return polys, Y


def _symbolic_field(poly, y):
    out = np.empty_like(y)
    for v in range(poly.dim):
        if v % 2 == 0:
            out[v] = poly.diff(v + 1)(y)
        else:
            out[v] = -poly.diff(v - 1)(y)
    return out


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_value_and_field_match_symbolic(backend):
    polys, Y = _sample()
    cp = CompiledPolynomial.from_polynomial(polys[0])
    vals = cp.value(Y, backend=backend)
    fields = cp.field(Y, backend=backend)
    for k, y in enumerate(Y):
        assert vals[k] == pytest.approx(polys[0](y), rel=1e-13, abs=1e-13)
        np.testing.assert_allclose(fields[k], _symbolic_field(polys[0], y), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_group_scales(backend):
    polys, Y = _sample(1)
    cp = CompiledPolynomial.from_groups(polys)
    combined = polys[0] + 2.5 * polys[1]
    np.testing.assert_allclose(
        cp.value(Y, [1.0, 2.5], backend=backend), [combined(y) for y in Y], rtol=1e-13, atol=1e-13
    )


@needs_cython
def test_backends_agree():
    polys, Y = _sample(2, n=2, N=3)
    cp = CompiledPolynomial.from_groups(polys)
    s = [1.0, 0.7]
    np.testing.assert_allclose(cp.value(Y, s, backend="cython"), cp.value(Y, s, backend="python"), rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(cp.field(Y, s, backend="cython"), cp.field(Y, s, backend="python"), rtol=1e-14, atol=1e-14)
    A, b = TABLEAUX[Scheme.GAUSS4]
    Yc, ic, rc = cp.gauss_step(Y * 0.3, 1e-2, A, b, s, backend="cython")
    Yp, ip, rp = cp.gauss_step(Y * 0.3, 1e-2, A, b, s, backend="python")
    np.testing.assert_allclose(Yc, Yp, rtol=1e-13, atol=1e-14)
    np.testing.assert_array_equal(ic, ip)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_gauss_step_reports_nonconvergence(backend):
    polys, Y = _sample(3)
    cp = CompiledPolynomial.from_polynomial(polys[0] * 50)
    A, b = TABLEAUX[Scheme.IMPLICIT_MIDPOINT]
    _, iters, _ = cp.gauss_step(Y * 3, 1.0, A, b, tol=1e-15, maxit=3, backend=backend)
    assert np.any(iters < 0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, HYBRIDPHASE_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", "from hybridphase import kernels; print(kernels.BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.slow
def test_benchmark_script_runs(tmp_path):
    script = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")
    out = tmp_path / "bench.json"
    subprocess.run([sys.executable, script, "--repeat", "1", "--json", str(out)], check=True, capture_output=True)
    data = json.loads(out.read_text())
    assert all(r["max_backend_diff"] < 1e-12 for r in data["results"])
