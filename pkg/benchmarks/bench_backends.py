"""Time the pure-numpy and compiled training loops on the skewed benchmark.

    python3 benchmarks/bench_backends.py --epochs 20 --batch-sizes 8,64,512

Both backends run the same configuration from the same initial parameters;
the script reports seconds per epoch, the speedup and the largest parameter
difference between the two final models.
"""
import argparse
import time

import numpy as np

from fairgrad import HAVE_COMPILED
from fairgrad.data import biased_benchmark
from fairgrad.fairness import AP, EODDS, eopp
from fairgrad.trainer import TrainConfig, train

NOTIONS = {"ap": AP, "eodds": EODDS, "eopp": eopp(1)}


def timed(cfg, tr, va, notion, backend, repeats):
    best, result = float("inf"), None
    for _ in range(repeats):
        start = time.perf_counter()
        result = train(cfg, tr, va, notion, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=8000, help="benchmark size before splitting")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-sizes", default="8,64,512")
    p.add_argument("--fairness", choices=sorted(NOTIONS), default="eodds")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--repeats", type=int, default=3, help="best-of timing repeats")
    args = p.parse_args(argv)
    if not HAVE_COMPILED:
        p.error("the compiled extension is not built; run `pip install -e . --no-build-isolation`")

    tr, va, _ = biased_benchmark(args.n, 0, label_sep=0.7)
    notion = NOTIONS[args.fairness]
    print(f"train {tr.n} x {tr.dim}, {args.fairness}, {args.epochs} epochs, best of {args.repeats}")
    print(f"{'batch':>6} {'python s/ep':>12} {'compiled s/ep':>14} {'speedup':>8} {'max |dtheta|':>13}")
    for bs in (int(b) for b in args.batch_sizes.split(",")):
        cfg = TrainConfig(epochs=args.epochs, batch_size=bs, epsilon=args.epsilon)
        t_py, r_py = timed(cfg, tr, va, notion, "python", args.repeats)
        t_c, r_c = timed(cfg, tr, va, notion, "compiled", args.repeats)
        diff = float(np.max(np.abs(r_py.final_params.theta - r_c.final_params.theta)))
        print(f"{bs:>6} {t_py / args.epochs:>12.5f} {t_c / args.epochs:>14.5f} {t_py / t_c:>7.1f}x {diff:>13.2e}")


if __name__ == "__main__":
    main()
