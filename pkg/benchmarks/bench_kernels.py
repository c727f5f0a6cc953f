#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the hot kernels at sizes representative of training the forecasting
models, plus one full forward/backward training step per backend. Run
after building the extension in place:

    python setup.py build_ext --inplace
    python benchmarks/bench_kernels.py
"""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from energytl import kernels  # noqa: E402


def best_of(fn, repeats=5, inner=10):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def kernel_cases(mod, rng):
    a64 = rng.normal(size=(64, 64))
    b64 = rng.normal(size=(64, 64))
    a_big = rng.normal(size=(256, 256))
    b_big = rng.normal(size=(256, 256))
    batch_a = rng.normal(size=(8, 168, 32))
    batch_b = rng.normal(size=(8, 32, 168))
    rows = rng.normal(size=(512, 168))
    flat = rng.normal(size=100_000)
    param = rng.normal(size=50_000)
    grad = rng.normal(size=50_000)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    state = {"t": 0}

    def adam():
        state["t"] += 1
        mod.adam_step(param, grad, m, v, state["t"], 1e-4, 0.9, 0.999, 1e-8)

    return {
        "matmul 64x64x64": lambda: mod.matmul(a64, b64),
        "matmul 256x256x256": lambda: mod.matmul(a_big, b_big),
        "matmul batched 8x168x32": lambda: mod.matmul(batch_a, batch_b),
        "softmax 512x168": lambda: mod.softmax_last(rows),
        "layer_norm 512x168": lambda: mod.layer_norm_last(rows, 1e-5),
        "gelu 100k": lambda: mod.gelu(flat),
        "adam 50k params": adam,
    }


def training_step_case(backend_name):
    os.environ["ENERGYTL_KERNELS"] = backend_name
    for name in [n for n in list(sys.modules) if n.startswith("energytl")]:
        del sys.modules[name]
    from energytl.models import ModelConfig, build_model  # noqa: E402
    from energytl.optim import Adam  # noqa: E402
    from energytl.rng import RunRng  # noqa: E402
    from energytl.tensor import mse_loss  # noqa: E402

    config = ModelConfig(
        arch="vanilla", d_model=32, n_heads=4, n_encoder_layers=2, n_decoder_layers=2,
        ff_dim=64, dropout_rate=0.1, lookback=168, horizon=24, n_features=7,
    )
    model = build_model(config, RunRng(0))
    opt = Adam(model.params, lr=1e-4)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 168, 7))
    y = rng.normal(size=(16, 24))

    def step():
        loss = mse_loss(model.forward(x, train_mode=True), y)
        model.zero_grad()
        loss.backward()
        opt.step()

    return step


def main():
    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernel core not built; run: python setup.py build_ext --inplace")

    rng = np.random.default_rng(42)
    results = {}
    for name in backends:
        mod = kernels.get_backend(name)
        for case, fn in kernel_cases(mod, rng).items():
            results.setdefault(case, {})[name] = best_of(fn)

    print(f"{'kernel':<28} " + " ".join(f"{b:>14}" for b in backends) + ("  speedup" if len(backends) > 1 else ""))
    for case, timings in results.items():
        row = f"{case:<28} " + " ".join(f"{timings[b] * 1e6:>11.1f} us" for b in backends)
        if len(backends) > 1:
            row += f"  {timings[backends[0]] / timings[backends[1]]:>6.2f}x"
        print(row)

    print()
    print("full training step (vanilla, d_model=32, L=168, H=24, batch 16):")
    for name in backends:
        step = training_step_case(name)
        step()  # warm up
        t = best_of(step, repeats=3, inner=3)
        print(f"  {name:<10} {t * 1e3:8.1f} ms/step")
    os.environ.pop("ENERGYTL_KERNELS", None)


if __name__ == "__main__":
    main()
