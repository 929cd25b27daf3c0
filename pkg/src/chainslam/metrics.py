"""Error statistics computed from a run log CSV alone."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

NA = "n/a"


def read_runlog(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty run log")
    header, body = rows[0], rows[1:]
    data = np.asarray(body, dtype=float).reshape(len(body), len(header))
    cols = {name: data[:, j] for j, name in enumerate(header)}
    for key in ("step", "link", "iterations", "valid_points", "converged"):
        if key not in cols:
            continue
        cols[key] = cols[key].astype(int)
    return cols


def reduction_pct(filtered: float, baseline: float):
    """Percent by which the filter lowers the baseline error; n/a without a baseline error."""
    if baseline <= 0.0:
        return NA
    return 100.0 * (1.0 - filtered / baseline)


def per_link_means(log: dict, column: str) -> np.ndarray:
    links = log["link"]
    n = links.max() + 1
    return np.array([log[column][links == i].mean() for i in range(n)])


def compute(log: dict, bias_tail_s: float = 20.0) -> dict:
    links = log["link"]
    n_bodies = int(links.max()) + 1
    steps = int(log["step"].max()) + 1
    filt = per_link_means(log, "err_pos_m")
    base = per_link_means(log, "base_err_pos_m")

    out: dict = {"steps": steps, "links": n_bodies - 1}
    out["end_link_filt_mean_err_m"] = filt[-1]
    out["end_link_base_mean_err_m"] = base[-1]
    out["reduction_pct"] = reduction_pct(filt[-1], base[-1])
    out["all_links_filt_mean_err_m"] = float(log["err_pos_m"].mean())
    out["all_links_base_mean_err_m"] = float(log["base_err_pos_m"].mean())
    out["all_links_reduction_pct"] = reduction_pct(out["all_links_filt_mean_err_m"],
                                                   out["all_links_base_mean_err_m"])
    out["max_filt_link_mean_err_m"] = float(filt[1:].max()) if n_bodies > 1 else 0.0
    out["max_err_pos_m"] = float(log["err_pos_m"].max())
    out["max_err_rot_rad"] = float(log["err_rot_rad"].max())
    out["max_base_err_pos_m"] = float(log["base_err_pos_m"].max())

    if n_bodies > 2 and np.ptp(base[1:]) > 0:
        rho = spearmanr(np.arange(1, n_bodies), base[1:]).statistic
        out["base_err_spearman_vs_link"] = float(rho)
    else:
        out["base_err_spearman_vs_link"] = NA

    root = links == 0
    out["root_pos_rmse_m"] = float(np.sqrt(np.mean(log["err_pos_m"][root] ** 2)))
    out["root_rot_rmse_rad"] = float(np.sqrt(np.mean(log["err_rot_rad"][root] ** 2)))

    if "converged" in log:
        updated = log["iterations"] > 0
        out["converged_fraction"] = float(log["converged"][updated].mean()) if updated.any() else 1.0
        out["mean_iterations"] = float(log["iterations"][updated].mean()) if updated.any() else 0.0

    t_end = log["time_s"].max()
    tail = log["time_s"] > t_end - bias_tail_s
    devs = []
    for i in range(1, n_bodies):
        sel = tail & (links == i)
        mean_b = float(log["bias_est"][sel].mean())
        true_b = float(log["bias_true"][sel].mean())
        out[f"bias_tail_mean_rad.link{i:02d}"] = mean_b
        devs.append(abs(mean_b - true_b))
    out["bias_tail_max_dev_rad"] = max(devs) if devs else 0.0

    for i in range(n_bodies):
        out[f"filt_mean_err_m.link{i:02d}"] = filt[i]
        out[f"base_mean_err_m.link{i:02d}"] = base[i]
    return out


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def write_metrics(path, summary: dict) -> None:
    with open(path, "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={format_value(v)}\n")


def read_metrics(path) -> dict:
    out: dict = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        k, v = line.split("=", 1)
        try:
            out[k] = int(v) if v.lstrip("-").isdigit() else float(v)
        except ValueError:
            out[k] = v
    return out


def write_link_table(path, log: dict) -> None:
    """Per-link time-averaged errors, filter against kinematics only."""
    cols = [per_link_means(log, c) for c in ("err_pos_m", "base_err_pos_m",
                                             "err_rot_rad", "base_err_rot_rad")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link", "filt_mean_err_pos_m", "base_mean_err_pos_m",
                    "filt_mean_err_rot_rad", "base_mean_err_rot_rad"])
        for i, row in enumerate(zip(*cols)):
            w.writerow([i, *map(format_value, row)])


def write_root_trajectory(path, log: dict) -> None:
    """Estimated and true root position and quaternion (x, y, z, w) per step."""
    sel = log["link"] == 0
    keys = ["step", "time_s", "px", "py", "pz", "qx", "qy", "qz", "qw",
            "true_px", "true_py", "true_pz", "true_qx", "true_qy", "true_qz", "true_qw"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for j in np.flatnonzero(sel):
            w.writerow([int(log["step"][j])] + [format_value(log[k][j]) for k in keys[1:]])
