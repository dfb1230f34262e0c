#!/usr/bin/env python3
"""Training loss curve with the learning-rate schedule overlaid.

Usage: plot_loss.py LOSS_CSV OUT_IMAGE
"""

import argparse
import sys

from . import ioutil, style


def render(loss_csv, out_image):
    data = ioutil.read_csv(loss_csv, "epoch,loss,lr")
    fig, ax = style.new_figure(style.SCALING_FIGSIZE)
    ax.semilogy(data[:, 0], data[:, 1], lw=1.0, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax2 = ax.twinx()
    ax2.semilogy(data[:, 0], data[:, 2], lw=0.8, color="tab:orange")
    ax2.set_ylabel("learning rate")
    style.save(fig, out_image)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("loss_csv")
    parser.add_argument("out_image")
    args = parser.parse_args(argv)
    try:
        render(args.loss_csv, args.out_image)
    except ioutil.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
