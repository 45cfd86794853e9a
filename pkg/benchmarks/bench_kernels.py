"""Compare the compiled and numpy kernel backends on representative workloads.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each workload is timed on every available backend (best of ``--repeat``), and
the results of the two backends are checked against each other.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from hybridphase import kernels
from hybridphase.dynamics import TABLEAUX, IntegratorConfig, Scheme
from hybridphase.ensemble import liouville_propagate
from hybridphase.phase import expand_state
from hybridphase.scenarios import (
    PeresTernoConfig,
    ToyModelConfig,
    coherent_state,
    peres_terno_hamiltonian,
    toy_hamiltonian,
    toy_initial_ensemble,
)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads():
    toy = ToyModelConfig(count=20_000)
    H_toy = toy_hamiltonian(toy)
    ens = toy_initial_ensemble(toy)
    Y_toy = ens.coords

    pt = PeresTernoConfig()
    H_pt, _, _ = peres_terno_hamiltonian(pt)
    rng = np.random.default_rng(0)
    psi = expand_state(coherent_state(pt.N, pt.alpha)).coords
    Y_pt = np.hstack([rng.normal(0.5, 0.1, (256, 2)), np.tile(psi, (256, 1))])
    A6, b6 = TABLEAUX[Scheme.GAUSS6]
    scales_pt = H_pt.scales(1.0)
    scales_toy = H_toy.scales(toy.g)

    def ensemble(backend):
        cfg = IntegratorConfig(toy.T / 20, Scheme.IMPLICIT_MIDPOINT, backend=backend)
        return liouville_propagate(ens, H_toy, 0.0, toy.T, cfg).coords

    return {
        "toy field, 20000 points": lambda b: H_toy.compiled.field(Y_toy, scales_toy, backend=b),
        "oscillator field (N=20), 256 points": lambda b: H_pt.compiled.field(Y_pt, scales_pt, backend=b),
        "oscillator GAUSS6 step, 256 points": lambda b: H_pt.compiled.gauss_step(
            Y_pt, 0.01, A6, b6, scales_pt, backend=b
        )[0],
        "toy ensemble, 20 midpoint steps": ensemble,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write timings to this file")
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    rows = []
    for name, fn in workloads().items():
        outputs = {b: fn(b) for b in backends}
        ref = outputs[backends[0]]
        diff = max(float(np.abs(out - ref).max()) for out in outputs.values())
        timing = {b: best_of(lambda b=b: fn(b), args.repeat) for b in backends}
        rows.append({"workload": name, "seconds": timing, "max_backend_diff": diff})

    width = max(len(r["workload"]) for r in rows)
    print(f"{'workload':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + "    speedup   max diff")
    for r in rows:
        t = r["seconds"]
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        cells = "  ".join(f"{t[b] * 1e3:>8.2f}ms" for b in backends)
        print(f"{r['workload']:<{width}}  {cells}  {speed:>8.1f}x  {r['max_backend_diff']:.1e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"backends": backends, "results": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
