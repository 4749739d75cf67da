"""Compare the compiled and numpy IPF kernels.

Two measurements:

* kernel: ``ipf_batch`` on a T-tick observation batch with both backends in one
  process (results must agree to 1e-9);
* end to end: one ``mre_hipois`` fit run in a subprocess with and without
  ``NETTOMO_DISABLE_NUMBA=1``.

Usage::

    python benchmarks/bench_kernels.py --nodes 6 --ticks 100 --repeat 5
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from nettomo import _accel
from nettomo._kernels import ipf_batch
from nettomo.network import ObservationScheme, Topology, apply_operator, build_operator
from nettomo.simulate import SimConfig, Streams, gen_ground_truth, sample_traffic

E2E_SNIPPET = """
import json, sys, time
from nettomo import _accel
from nettomo.estimators import EstimatorSettings, mre_hipois
from nettomo.network import ObservationScheme, apply_operator, build_operator
from nettomo.simulate import SimConfig, Streams, gen_ground_truth, sample_traffic
n, T = int(sys.argv[1]), int(sys.argv[2])
cfg = SimConfig(n_exterior=n, T=T)
st = Streams(0, 0)
gt = gen_ground_truth(cfg, st)
op = build_operator(gt.topology, ObservationScheme.nodes_only(gt.topology))
obs = apply_operator(op, sample_traffic(gt, T, st))
mre_hipois(obs, op, gt.baseline, EstimatorSettings(em_max_iter=5))  # warm-up / compile
t = time.perf_counter()
rep = mre_hipois(obs, op, gt.baseline, EstimatorSettings())
print(json.dumps({"numba": _accel.HAVE_NUMBA, "seconds": time.perf_counter() - t,
                  "iterations": rep.iterations, "lambda": rep.lambda_hat.values.tolist()}))
"""


def _problem(n: int, T: int, seed: int):
    cfg = SimConfig(n_exterior=n, T=T)
    st = Streams(seed, 0)
    gt = gen_ground_truth(cfg, st)
    op = build_operator(gt.topology, ObservationScheme.nodes_only(gt.topology))
    obs = apply_operator(op, sample_traffic(gt, T, st))
    indptr, indices = op.csr()
    x0 = np.maximum(gt.baseline.values, 1e-3)
    return x0, indptr, indices, obs.y.astype(float), np.ones(T)


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_kernel(n, T, repeat, seed=0):
    x0, indptr, indices, Y, w = _problem(n, T, seed)
    rows = {}
    results = {}
    backends = [("numpy", False)] + ([("numba", True)] if _accel.HAVE_NUMBA else [])
    for name, flag in backends:
        ipf_batch(x0, indptr, indices, Y[:2], w[:2], 1e-8, 500, use_numba=flag)  # compile
        sec, out = _time(lambda: ipf_batch(x0, indptr, indices, Y, w, 1e-8, 500, use_numba=flag), repeat)
        rows[name] = sec
        results[name] = out[0]
    if len(results) == 2:
        gap = float(np.max(np.abs(results["numpy"] - results["numba"])))
        if gap > 1e-9:
            raise SystemExit(f"backends disagree: max gap {gap:.3e}")
    return rows


def bench_end_to_end(n, T):
    out = {}
    for name, env in (("numba", {}), ("numpy", {_accel.DISABLE_ENV: "1"})):
        proc = subprocess.run([sys.executable, "-c", E2E_SNIPPET, str(n), str(T)], capture_output=True, text=True,
                              env={**os.environ, **env}, check=True)
        out[name] = json.loads(proc.stdout)
    gap = float(np.max(np.abs(np.subtract(out["numba"]["lambda"], out["numpy"]["lambda"]))))
    return {k: v["seconds"] for k, v in out.items()}, gap, out["numba"]["iterations"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--ticks", type=int, default=100)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--skip-e2e", action="store_true", help="only time the kernel")
    args = p.parse_args(argv)

    k = bench_kernel(args.nodes, args.ticks, args.repeat)
    line = f"ipf_batch n={args.nodes} T={args.ticks}: " + ", ".join(f"{b} {s * 1e3:.2f} ms" for b, s in k.items())
    if "numba" in k:
        line += f" (speed-up x{k['numpy'] / k['numba']:.1f})"
    print(line)
    if not args.skip_e2e:
        secs, gap, it = bench_end_to_end(args.nodes, args.ticks)
        print(f"mre_hipois end to end ({it} EM iterations): numba {secs['numba']:.2f} s, numpy {secs['numpy']:.2f} s "
              f"(x{secs['numpy'] / secs['numba']:.1f}); max |rate gap| {gap:.2e}")


if __name__ == "__main__":
    main()
