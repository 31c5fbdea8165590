"""Figure rendering for the report paths: occupancy heatmap and histograms.

CSV is the primary artifact; figures are rendered alongside it with
matplotlib (Agg backend, file output only).
"""

from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .geometry import EulerAngles
from .labelgen import LabeledSample


def stats_arrays(samples):
    """Raw per-sample statistics used by every histogram."""
    cx = np.array([s.box_left.cx for s in samples])
    cy = np.array([s.box_left.cy for s in samples])
    bw = np.array([s.box_left.w for s in samples])
    bh = np.array([s.box_left.h for s in samples])
    xyz = np.array([s.record.T_Cam_CT.translation for s in samples])
    eulers = np.array(
        [
            [e.roll, e.pitch, e.yaw]
            for e in (EulerAngles.from_quaternion(s.orientation) for s in samples)
        ]
    )
    return {"cx": cx, "cy": cy, "bw": bw, "bh": bh, "xyz": xyz, "euler_rad": eulers}


def _write_hist_csv(path, values, bins, lo, hi, label):
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"{label}_bin_lo", f"{label}_bin_hi", "count"])
        for i, c in enumerate(counts):
            w.writerow([f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", int(c)])
    return counts, edges


def write_stats(samples, out_dir, bins: int = 32, render: bool = True, fmt: str = "svg"):
    """CSV histograms (and figures when render=True) for a label set.

    Emits: occupancy grid of box centers, box width/height, x/y/z position in
    meters, and roll/pitch/yaw in degrees. Returns the list of files written.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty label file")
    os.makedirs(out_dir, exist_ok=True)
    arrays = stats_arrays(samples)
    written = []

    grid, xe, ye = np.histogram2d(
        arrays["cx"], arrays["cy"], bins=bins, range=((0, 1), (0, 1))
    )
    occ_path = os.path.join(out_dir, "occupancy.csv")
    with open(occ_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cx_bin", "cy_bin", "count"])
        for i in range(bins):
            for j in range(bins):
                w.writerow([i, j, int(grid[i, j])])
    written.append(occ_path)

    hist_specs = [
        ("box_width.csv", arrays["bw"], 0.0, 1.0, "width"),
        ("box_height.csv", arrays["bh"], 0.0, 1.0, "height"),
        ("pos_x.csv", arrays["xyz"][:, 0], -1.0, 1.0, "x_m"),
        ("pos_y.csv", arrays["xyz"][:, 1], -1.0, 1.0, "y_m"),
        ("pos_z.csv", arrays["xyz"][:, 2], 0.0, 1.0, "z_m"),
        ("roll_deg.csv", np.degrees(arrays["euler_rad"][:, 0]), -180.0, 180.0, "roll_deg"),
        ("pitch_deg.csv", np.degrees(arrays["euler_rad"][:, 1]), -180.0, 180.0, "pitch_deg"),
        ("yaw_deg.csv", np.degrees(arrays["euler_rad"][:, 2]), -180.0, 180.0, "yaw_deg"),
    ]
    for name, values, lo, hi, label in hist_specs:
        path = os.path.join(out_dir, name)
        _write_hist_csv(path, values, bins, lo, hi, label)
        written.append(path)

    if render:
        written.extend(render_stats_figures(arrays, out_dir, bins=bins, fmt=fmt))
    return written


def render_stats_figures(arrays, out_dir, bins: int = 32, fmt: str = "svg"):
    written = []

    fig, ax = plt.subplots(figsize=(6, 4.5))
    h = ax.hist2d(arrays["cx"], arrays["cy"], bins=bins, range=((0, 1), (0, 1)))
    ax.invert_yaxis()
    ax.set_xlabel("box center x (normalized)")
    ax.set_ylabel("box center y (normalized)")
    ax.set_title("Box-center occupancy")
    fig.colorbar(h[3], ax=ax)
    path = os.path.join(out_dir, f"occupancy.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, idx, name in zip(axes, range(3), "xyz"):
        ax.hist(arrays["xyz"][:, idx], bins=bins)
        ax.set_xlabel(f"{name} (m)")
    fig.suptitle("Tip position")
    fig.tight_layout()
    path = os.path.join(out_dir, f"position_hist.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, idx, name in zip(axes, range(3), ("roll", "pitch", "yaw")):
        ax.hist(np.degrees(arrays["euler_rad"][:, idx]), bins=bins, range=(-180, 180))
        ax.set_xlabel(f"{name} (deg)")
    fig.suptitle("Tip orientation")
    fig.tight_layout()
    path = os.path.join(out_dir, f"orientation_hist.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].hist(arrays["bw"], bins=bins, range=(0, 1))
    axes[0].set_xlabel("box width (normalized)")
    axes[1].hist(arrays["bh"], bins=bins, range=(0, 1))
    axes[1].set_xlabel("box height (normalized)")
    fig.suptitle("Box size")
    fig.tight_layout()
    path = os.path.join(out_dir, f"box_size_hist.{fmt}")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written


def render_error_figure(per_frame_errors, out_path):
    """Histogram of per-frame keypoint errors next to the evaluation CSV."""
    errs = np.asarray(per_frame_errors, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(errs, bins=min(50, max(5, len(errs) // 10 + 1)))
    ax.set_xlabel("keypoint error (px)")
    ax.set_ylabel("frames")
    ax.set_title("Per-frame keypoint error")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
