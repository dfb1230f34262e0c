#!/usr/bin/env python3
"""Two-panel chain diagnostics: log-likelihood trace and acceptance rate.

Usage: plot_trace.py TRACE_CSV OUT_IMAGE [--window N]
"""

import argparse
import sys

import matplotlib.pyplot as plt
import numpy as np

from . import ioutil, style


def render(trace_csv, out_image, window=200):
    data = ioutil.read_csv(trace_csv, "iter,loglik,accepted,delta")
    iters = data[:, 0]
    loglik = data[:, 1]
    accepted = data[:, 2]
    window = max(1, min(window, len(iters)))
    kernel = np.ones(window) / window
    rate = np.convolve(accepted, kernel, mode="valid")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=style.PANEL_FIGSIZE, dpi=style.DPI)
    ax1.plot(iters, loglik, lw=0.7)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("log-likelihood")
    ax2.plot(iters[window - 1 :], rate, lw=0.9)
    ax2.set_ylim(0.0, 1.0)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel(f"acceptance rate ({window}-step window)")
    style.save(fig, out_image)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("trace_csv")
    parser.add_argument("out_image")
    parser.add_argument("--window", type=int, default=200)
    args = parser.parse_args(argv)
    try:
        render(args.trace_csv, args.out_image, args.window)
    except ioutil.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
