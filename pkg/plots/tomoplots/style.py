"""Fixed rendering style shared by every plot script.

Renders are file-to-file transforms: identical inputs must produce the same
image, so everything visual (sizes, colormap, dpi) is pinned here and no
timestamps or interactive elements are used.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIELD_FIGSIZE = (5.0, 4.2)
PANEL_FIGSIZE = (8.0, 3.2)
SCALING_FIGSIZE = (5.5, 4.0)
COLORMAP = "viridis"
DPI = 120


def new_figure(figsize):
    return plt.subplots(figsize=figsize, dpi=DPI)


def save(fig, out_path):
    fig.savefig(out_path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
