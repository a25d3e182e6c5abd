"""Figure rendering for the report commands; PNGs land next to the CSVs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    }
)


def plot_compare_ddim(steps, euler_err, ddim_err, path) -> None:
    fig, ax = plt.subplots()
    ax.semilogy(steps, euler_err, marker="o", ms=3, label="Euler (rectified flow)")
    ax.semilogy(steps, ddim_err, marker="s", ms=3, label="DDIM (mixture score)")
    ax.set_xlabel("grid step")
    ax.set_ylabel("round-trip error")
    ax.set_title("Naive inversion round-trip error per step")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_iteration_sweep(iterations, median_mse, path) -> None:
    fig, ax = plt.subplots()
    ax.semilogy(iterations, median_mse, marker="o")
    ax.set_xlabel("fixed-point iterations")
    ax.set_ylabel("median round-trip MSE")
    ax.set_title("Reconstruction error vs iteration count")
    ax.set_xticks(list(iterations))
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_attention_sweep(taus, attain_rate, preservation, path) -> None:
    fig, ax1 = plt.subplots()
    ax1.plot(taus, attain_rate, marker="o", color="tab:blue", label="edit attainment rate")
    ax1.set_xlabel("injection fraction tau")
    ax1.set_ylabel("attainment rate", color="tab:blue")
    ax1.set_ylim(-0.05, 1.05)
    ax2 = ax1.twinx()
    ax2.plot(taus, preservation, marker="s", color="tab:red", label="median preservation error")
    ax2.set_ylabel("preservation error", color="tab:red")
    ax1.set_title("V-injection sweep: editing vs preservation")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
