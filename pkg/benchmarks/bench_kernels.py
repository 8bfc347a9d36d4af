"""Time the compiled kernels against their numpy / pure-Python fallbacks.

Each backend runs in its own interpreter so that ``SWNT_KUBO_DISABLE_NUMBA``
takes effect at import time:

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from swnt_kubo import (CylinderGeometry, KuboSystem, ModelParams, PairKernelTable,
                       PeriodicPotentialSpec, assemble_hamiltonian, backend_name, bessel_k0,
                       build_basis, momentum_operator, time_domain_conductivity)
from swnt_kubo.spectral import eigensolve

repeat = int(sys.argv[1])


def best(fn):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


x = np.geomspace(1e-6, 50, 200_000)
geom = CylinderGeometry(r=0.2, a=1.0, L=4)
params = ModelParams(geom, N=2, lam=1.0, v_per=PeriodicPotentialSpec({1: 0.5}), M_modes=12)
table = PairKernelTable.build(geom, 24)
basis = build_basis(params)
H = assemble_hamiltonian(params, basis, table)
small = ModelParams(geom, N=2, lam=1.0, v_per=PeriodicPotentialSpec({1: 0.5}), M_modes=4)
sb = build_basis(small)
res = eigensolve(assemble_hamiltonian(small, sb, PairKernelTable.build(geom, 8)))
system = KuboSystem.from_spectrum(res, momentum_operator(sb, geom), 2, geom)
out = {
    "backend": backend_name(),
    "bessel_k0 (2e5 points)": best(lambda: bessel_k0(x)),
    f"assemble H (dim {basis.dim})": best(lambda: assemble_hamiltonian(params, basis, table)),
    f"oracle pass (dim {res.dim}, eta 1)": best(
        lambda: time_domain_conductivity(system, 2.0, 3.0, 1.0)),
}
print(json.dumps(out))
"""


def run(backend, repeat):
    env = dict(os.environ)
    env.pop("SWNT_KUBO_DISABLE_NUMBA", None)
    if backend == "numpy":
        env["SWNT_KUBO_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    fast = run("numba", args.repeat)
    slow = run("numpy", args.repeat)
    print(f"{'kernel':34s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speed-up':>9s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:34s} {fast[key]:12.4f} {slow[key]:12.4f} {slow[key] / fast[key]:8.1f}x")
    print(f"backends: {fast['backend']} / {slow['backend']}")


if __name__ == "__main__":
    main()
