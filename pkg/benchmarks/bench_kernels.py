#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two hot kernels (GRU cell, masked softmax) at molecule-sized
shapes, then an end-to-end generation comparison via subprocesses (backend
selection happens at import time through HISTVAE_PURE_PYTHON).
"""
import os
import subprocess
import sys
import time

import numpy as np

from histvae._kernels import numpy_backend

try:
    from histvae._kernels import _cext
except ImportError:
    _cext = None


def time_fn(fn, *args, repeat=2000):
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best * 1e6  # microseconds


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<38}{'numpy us':>10}{'compiled us':>13}{'speedup':>9}")
    for atoms, dim in ((9, 200), (38, 200), (9, 32)):
        x = rng.standard_normal((atoms, dim)).astype(np.float32)
        h = rng.standard_normal((atoms, dim)).astype(np.float32)
        wx = (0.1 * rng.standard_normal((dim, 3 * dim))).astype(np.float32)
        wh = (0.1 * rng.standard_normal((dim, 3 * dim))).astype(np.float32)
        bx = rng.standard_normal(3 * dim).astype(np.float32)
        bh = rng.standard_normal(3 * dim).astype(np.float32)
        g = rng.standard_normal((atoms, dim)).astype(np.float32)

        caches = {numpy_backend: numpy_backend.gru_cell_fwd(x, h, wx, wh, bx, bh)[1]}
        if _cext is not None:
            caches[_cext] = _cext.gru_cell_fwd(x, h, wx, wh, bx, bh)[1]
        rows = [(f"gru fwd ({atoms}x{dim})",
                 lambda be: be.gru_cell_fwd(x, h, wx, wh, bx, bh))]
        rows.append((f"gru bwd ({atoms}x{dim})",
                     lambda be: be.gru_cell_bwd(caches[be], wx, wh, g)))
        logits = rng.standard_normal((atoms + 1,)).astype(np.float32)
        mask = np.ones(atoms + 1, dtype=np.float32)
        mask[:: 3] = 0.0
        mask[-1] = 1.0
        rows.append((f"masked softmax ({atoms + 1})",
                     lambda be: be.masked_softmax_fwd(logits, mask)))

        for name, runner in rows:
            t_np = time_fn(runner, numpy_backend)
            if _cext is not None:
                t_c = time_fn(runner, _cext)
                print(f"{name:<38}{t_np:>10.1f}{t_c:>13.1f}{t_np / t_c:>9.2f}x")
            else:
                print(f"{name:<38}{t_np:>10.1f}{'n/a':>13}{'':>9}")


GEN_SNIPPET = r"""
import time
import numpy as np
import histvae._kernels as K
from histvae.chemgraph import qm9_vocabulary
from histvae.config import ModelConfig
from histvae.histograms import HistogramDistribution
from histvae.model import GenerativeModel
from histvae.smiles import load_dataset
import importlib.resources as res

vocab = qm9_vocabulary()
corpus = load_dataset(str(res.files("histvae").joinpath("data/toy_qm9_500.smi")), vocab).graphs
dist = HistogramDistribution.from_graphs(corpus)
model = GenerativeModel(vocab, ModelConfig(latent_dim=100, hidden_dim=100,
                                           mp_steps=12, mlp_hidden=250), dist,
                        np.random.default_rng(0))
rng = np.random.default_rng(1)
for _ in range(20):
    model.generate(rng)  # warm up
start = time.perf_counter()
n = 200
for _ in range(n):
    model.generate(rng)
per = (time.perf_counter() - start) / n * 1000
print(f"backend={K.BACKEND}: {per:.2f} ms/molecule")
"""


def bench_generation():
    print("\nend-to-end generation (paper-sized model, 200 molecules):")
    for pure in ("0", "1"):
        env = dict(os.environ, HISTVAE_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", GEN_SNIPPET], env=env,
                             capture_output=True, text=True)
        print(" ", out.stdout.strip() or out.stderr.strip().splitlines()[-1])


if __name__ == "__main__":
    bench_kernels()
    bench_generation()
