"""Compare the compiled and pure-numpy backends on the two hot paths.

The backend is chosen at import time through the QNDSIM_BACKEND environment
variable, so this script re-runs itself in a subprocess per backend and
prints a small comparison table.  The numeric checksums of both runs are
compared to confirm the fallback path computes the same physics.

Usage: python benchmarks/benchmark_backends.py [--repeat 3]
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time


def setup_propagation():
    """Stacked master-equation propagation of the reference detection run."""
    from qndsim.dynamics import (
        PulseSchedule,
        optimize_delay,
        output_mode_moments,
    )
    from qndsim.model import build_model, default_params, gaussian_input_mode

    params = default_params()
    mode = gaussian_input_mode(500e-9)
    model = build_model(params)
    delay = optimize_delay(params, mode)
    sched = PulseSchedule(
        -400e-9, 700e-9, 800e-9, mode, alpha_in=math.sqrt(0.165)
    )
    out = mode.delayed(delay)

    def run():
        ms = output_mode_moments(model, sched, output_mode=out, delay=delay)
        return float(ms.mean_photon)

    return run


def setup_reconstruction():
    """Iterative likelihood maximization on a sampled quadrature record."""
    import numpy as np

    from qndsim import tomography
    from qndsim.linalg import QuantumState, coherent, ket_density

    state = QuantumState(ket_density(coherent(5, math.sqrt(0.137))), (5,))
    record = tomography.sample(
        state, tomography.phase_settings(30), 2_000, eta=0.43, seed=5
    )

    def run():
        est = tomography.mle_reconstruct(record, iterations=300)
        return float(np.arange(5) @ tomography.photon_distribution(est))

    return run


WORKLOADS = {
    "propagation": setup_propagation,
    "reconstruction": setup_reconstruction,
}


def run_worker(repeat):
    from qndsim import _kernels

    results = {"backend": _kernels.BACKEND, "timings": {}, "checksums": {}}
    for name, setup in WORKLOADS.items():
        fn = setup()
        fn()  # warm-up (and JIT compilation on the compiled backend)
        best = math.inf
        value = None
        for _ in range(repeat):
            t0 = time.perf_counter()
            value = fn()
            best = min(best, time.perf_counter() - t0)
        results["timings"][name] = best
        results["checksums"][name] = value
    print(json.dumps(results))


def run_backend(backend, repeat):
    env = dict(os.environ, QNDSIM_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--worker", "--repeat", str(repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3,
                    help="timed repetitions per workload (best is kept)")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.worker:
        run_worker(args.repeat)
        return

    reports = {}
    for backend in ("numba", "numpy"):
        try:
            reports[backend] = run_backend(backend, args.repeat)
        except subprocess.CalledProcessError as exc:
            sys.stderr.write(exc.stderr)
            print(f"{backend:>8}: unavailable")
    if "numba" not in reports or "numpy" not in reports:
        return

    print(f"{'workload':>16} {'numba':>10} {'numpy':>10} {'speedup':>9}")
    for name in WORKLOADS:
        t_jit = reports["numba"]["timings"][name]
        t_np = reports["numpy"]["timings"][name]
        print(f"{name:>16} {t_jit:>9.3f}s {t_np:>9.3f}s {t_np / t_jit:>8.1f}x")
        a = reports["numba"]["checksums"][name]
        b = reports["numpy"]["checksums"][name]
        if abs(a - b) > 1e-9 * max(1.0, abs(a), abs(b)):
            print(f"{'':>16} WARNING: checksum mismatch ({a!r} vs {b!r})")


if __name__ == "__main__":
    main()
