import os
from typing import Final

import matplotlib.pyplot as plt
import numpy as np

from kan_compact import device, evaluate, training
from kan_compact.config import TrainConfig

# --- Experiment Constants ---
STEP: Final = 20
"""Train sub-grid spacing [mV]"""

V_D_FIXED: Final = 0.4
"""Drain voltage of the sweep [V]"""

SEEDS: Final = 5

FAMILIES: Final = ("MLP", "FKAN", "KAN")

script_dir = os.path.dirname(os.path.abspath(__file__))
results_dir = os.path.join(script_dir, "results")


def main():
    os.makedirs(results_dir, exist_ok=True)
    save_txt = os.path.join(results_dir, "python.txt")
    dataset = device.generate_dataset(STEP)
    workers = min(SEEDS, os.cpu_count() or 1)

    # --- Seed sweeps ---
    oracle = evaluate.SurrogateOracle("I_D")
    curves = {"surrogate": evaluate.derivative_sweep(oracle, V_D_FIXED)}
    rows = {}
    for family in FAMILIES:
        config = TrainConfig(family=family, target="I_D", step=STEP)
        summary = training.seed_sweep(config, SEEDS, dataset=dataset, workers=workers)
        runs = [r for r in summary.results if not r.diverged]
        sweeps = [evaluate.derivative_sweep(r.checkpoint, V_D_FIXED) for r in runs]
        scores = np.array([evaluate.waviness(c.g_m2) for c in sweeps])
        # The plotted curve is the seed with the median waviness
        curves[family] = sweeps[int(np.argsort(scores)[len(scores) // 2])]
        rows[family] = (summary.test.median, float(np.median(scores)), len(runs))
        print(f"{family}: median waviness(g_m2) {rows[family][1]:.4e}")

    with open(save_txt, "w", encoding="utf-8") as f:
        f.write(f"V_D = {V_D_FIXED} V, {STEP} mV train grid, medians over {SEEDS} seeds\n")
        f.write(f"{'model':10s} {'test MAPE':>10s} {'waviness(g_m2)':>15s} {'runs':>5s}\n")
        surrogate = evaluate.waviness(curves["surrogate"].g_m2)
        f.write(f"{'surrogate':10s} {0.0:9.3f}% {surrogate:15.4e} {1:5d}\n")
        for family, (test, wavy, n) in rows.items():
            f.write(f"{family:10s} {100 * test:9.3f}% {wavy:15.4e} {n:5d}\n")
        verdict = ">=" if rows["FKAN"][1] >= rows["MLP"][1] else "<"
        f.write(f"\nFKAN median waviness {verdict} MLP median waviness\n")

    print(f"Result saved to {save_txt}")

    # --- Plot results ---
    fig, axs = plt.subplots(2, 1, figsize=(8, 7), constrained_layout=True, sharex=True)
    fig.suptitle(f"Transconductance at $V_D$ = {V_D_FIXED} V (median-waviness seed)")

    for name, curve in curves.items():
        style = {"color": "black", "linestyle": "--"} if name == "surrogate" else {}
        axs[0].plot(curve.V_G, curve.g_m * 1e6, label=name, **style)
        axs[1].plot(curve.V_G, curve.g_m2 * 1e6, label=name, **style)

    axs[0].set_ylabel(r"$g_m$ / $\mu$S")
    axs[1].set_ylabel(r"$g_m'$ / $\mu$S/V")
    axs[-1].set_xlabel("$V_G$ / V")
    for ax in axs:
        ax.grid(True)
        ax.legend()

    # Save plot to file
    save_path = os.path.join(results_dir, "scipy.png")
    plt.savefig(save_path)
    print(f"Plot saved to {save_path}")


if __name__ == "__main__":
    main()
