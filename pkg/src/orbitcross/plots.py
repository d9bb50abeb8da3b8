"""Optional figure rendering for the CLI report paths (PNG output)."""

from __future__ import annotations

import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = {name: np.array([row[name] for row in rows])
                for name in (reader.fieldnames or ())}
    return cols


def _f(cols, name):
    return np.array([float(v) for v in cols[name]])


def plot_secular(secular_csv, events_csv, out_png):
    cols = _read_csv(secular_csv)
    t = _f(cols, "t_mjd") / 365.25
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(t, _f(cols, "G"), label="G")
    axes[0].plot(t, _f(cols, "Z"), label="Z")
    axes[0].set_ylabel("momenta")
    axes[0].legend()
    axes[1].plot(t, _f(cols, "g"), label="g")
    axes[1].plot(t, _f(cols, "z"), label="z")
    axes[1].set_ylabel("angles (rad)")
    axes[1].legend()
    axes[2].plot(t, _f(cols, "dmin_signed"))
    axes[2].axhline(0.0, color="k", lw=0.5)
    ev = _read_csv(events_csv)
    if ev and len(ev.get("t_mjd", ())) > 0:
        for tc in _f(ev, "t_mjd"):
            axes[2].axvline(tc / 365.25, color="r", ls="--", lw=0.7)
    axes[2].set_ylabel("signed $d_{min}$ (au)")
    axes[2].set_xlabel("t (yr)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)


def plot_equinoctial(full_csv, out_png):
    cols = _read_csv(full_csv)
    t = _f(cols, "t_mjd") / 365.25
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, name in zip(axes.flat, ("h", "k", "p", "q")):
        ax.plot(t, _f(cols, name))
        ax.set_ylabel(name)
    for ax in axes[-1]:
        ax.set_xlabel("t (yr)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)


def plot_compare(compare_csv, out_png):
    cols = _read_csv(compare_csv)
    t = _f(cols, "t_mjd") / 365.25
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, name in zip(axes.flat, ("h", "k", "p", "q")):
        mean = _f(cols, f"mean_{name}")
        std = _f(cols, f"std_{name}")
        ax.plot(t, _f(cols, f"sec_{name}"), label="secular")
        ax.plot(t, mean, label="ensemble mean")
        ax.fill_between(t, mean - 3 * std, mean + 3 * std, alpha=0.25,
                        label=r"$\pm 3\sigma$")
        ax.set_ylabel(name)
    axes[0, 0].legend(fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("t (yr)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
