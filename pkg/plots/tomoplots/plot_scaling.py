#!/usr/bin/env python3
"""Inversion time against latent dimension for both solver backends.

Usage: plot_scaling.py SCALING_CSV OUT_IMAGE [--log]
"""

import argparse
import sys

from . import ioutil, style


def render(scaling_csv, out_image, log_scale=False):
    data = ioutil.read_csv(scaling_csv, "dim,fem_seconds,net_seconds")
    if len(data) < 3:
        raise ioutil.InputError(f"{scaling_csv} needs at least 3 rows, found {len(data)}")
    dims = data[:, 0]
    fig, ax = style.new_figure(style.SCALING_FIGSIZE)
    ax.plot(dims, data[:, 1], "o-", label="exact solver")
    ax.plot(dims, data[:, 2], "s-", label="surrogate")
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("latent dimension")
    ax.set_ylabel("chain seconds")
    ax.legend()
    style.save(fig, out_image)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("scaling_csv")
    parser.add_argument("out_image")
    parser.add_argument("--log", action="store_true", help="logarithmic time axis")
    args = parser.parse_args(argv)
    try:
        render(args.scaling_csv, args.out_image, args.log)
    except ioutil.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
