#!/usr/bin/env python3
"""Headline benchmark: noisy lagged two-channel signal, 10 seeds.

Trains the unfiltered SVM, the fixed-average-filter SVM and the
jointly-learned-filter SVM with validation-selected hyperparameters,
then reports mean test error for online and Viterbi decoding plus the
signed-rank p-value of the learned filter against the unfiltered SVM.
"""

import argparse
import time

import numpy as np

from marginfilter.harness import ExperimentConfig, run_benchmark, wilcoxon_signed_rank
from marginfilter.signals import ToyParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sigma-n", type=float, default=1.0)
    ap.add_argument("--lag", type=int, default=5)
    ap.add_argument("--nbtot", type=int, default=2)
    ap.add_argument("--n-test", type=int, default=10000)
    ap.add_argument("--max-cg-iters", type=int, default=30)
    args = ap.parse_args()

    config = ExperimentConfig(
        base=ToyParams(n=1, sigma_n=args.sigma_n, lag=args.lag, nbtot=args.nbtot),
        n_test=args.n_test, seeds=tuple(range(args.seeds)),
        learner_kwargs={"max_cg_iters": args.max_cg_iters})
    methods = ("svm", "avg_svm", "kf_svm")

    t0 = time.time()
    errs = run_benchmark(config, methods)
    print(f"finished in {time.time() - t0:.0f}s\n")

    print(f"{'method':10} {'online':>8} {'viterbi':>8}   per-seed online errors")
    for m in methods:
        on, vit = errs[m]["online"], errs[m]["viterbi"]
        print(f"{m:10} {on.mean():8.4f} {vit.mean():8.4f}   {np.round(on, 3)}")

    p = wilcoxon_signed_rank(errs["kf_svm"]["online"], errs["svm"]["online"])
    print(f"\nsigned-rank p (kf_svm vs svm, online): {p:.4g}")


if __name__ == "__main__":
    main()
