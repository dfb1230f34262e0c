#!/usr/bin/env python3
"""Triangulated pseudocolor rendering of a per-element field dump.

Usage: plot_field.py FIELD_CSV MESH_TXT OUT_IMAGE
"""

import argparse
import sys

import matplotlib.tri as mtri

from . import ioutil, style


def render(field_csv, mesh_txt, out_image):
    nodes, tris = ioutil.read_mesh_text(mesh_txt)
    data = ioutil.read_csv(field_csv, "element_id,x_centroid,y_centroid,value")
    if len(data) != len(tris):
        raise ioutil.InputError(
            f"{field_csv} has {len(data)} elements, mesh has {len(tris)} triangles"
        )
    values = data[:, 3]
    fig, ax = style.new_figure(style.FIELD_FIGSIZE)
    triangulation = mtri.Triangulation(nodes[:, 0], nodes[:, 1], tris)
    im = ax.tripcolor(triangulation, values, cmap=style.COLORMAP, shading="flat")
    fig.colorbar(im, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    style.save(fig, out_image)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("field_csv")
    parser.add_argument("mesh_txt")
    parser.add_argument("out_image")
    args = parser.parse_args(argv)
    try:
        render(args.field_csv, args.mesh_txt, args.out_image)
    except ioutil.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
