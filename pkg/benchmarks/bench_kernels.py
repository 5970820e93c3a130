"""Compare the numba and numpy LSTM recurrence kernels.

    python3 benchmarks/bench_kernels.py [--repeats 20]

Shapes mirror the desk model: a frequency LSTM (short sequences, large
batch of frames) and the time LSTM (long sequences, small batch).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from unified_asr import _kernels as kn

SHAPES = {
    # name: (steps, batch, hidden)
    "flstm_view": (15, 480, 8),
    "tlstm": (30, 16, 64),
}


def _time(fn, repeats):
    fn()  # warm-up (and numba compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


_STEP = """
import time
from unified_asr import _kernels, corpus
from unified_asr.model import ModelConfig, UnifiedModel
cfg = corpus.SimConfig()
utts = [corpus.make_utterance(cfg, "train_mc", i, 5.0, i % 2 == 0) for i in range(16)]
model = UnifiedModel.create(ModelConfig())
items = [model.prepare(u) for u in utts]
model.loss_and_grads(items)
best = float("inf")
for _ in range({repeats}):
    t0 = time.perf_counter()
    model.loss_and_grads(items)
    best = min(best, time.perf_counter() - t0)
print(_kernels.BACKEND, best)
"""


def _model_step(backend, repeats):
    env = dict(os.environ, UASR_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", _STEP.format(repeats=repeats)], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    if not kn.HAVE_NUMBA:
        print("numba is not importable; only the numpy backend exists")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, (s, b, h) in SHAPES.items():
        zx = rng.standard_normal((s, b, 4 * h))
        wh = 0.3 * rng.standard_normal((h, 4 * h))
        zero = np.zeros((b, h))
        hs, cs, acts = kn.lstm_forward_numpy(zx, wh, zero, zero, False)
        dh = rng.standard_normal(hs.shape)
        cases = {
            "fwd": (lambda: kn.lstm_forward_numpy(zx, wh, zero, zero, False),
                    lambda: kn.lstm_forward_numba(zx, wh, zero, zero, False)),
            "bwd": (lambda: kn.lstm_backward_numpy(dh, wh, acts, cs, zero, False),
                    lambda: kn.lstm_backward_numba(dh, wh, acts, cs, zero, False)),
        }
        for kind, (f_np, f_nb) in cases.items():
            t_np, t_nb = _time(f_np, args.repeats), _time(f_nb, args.repeats)
            print(f"{name + ' ' + kind:<20}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
    # whole forward + backward of a desk batch (16 utterances, both paths)
    reps = max(3, args.repeats // 5)
    (b_np, t_np), (b_nb, t_nb) = _model_step("numpy", reps), _model_step("numba", reps)
    assert (b_np, b_nb) == ("numpy", "numba")
    print(f"{'model step':<20}{1e3 * t_np:>12.1f}{1e3 * t_nb:>12.1f}{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
