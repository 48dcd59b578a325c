import os
from typing import Final

import matplotlib.pyplot as plt

from kan_compact import device, training
from kan_compact.config import TrainConfig

# --- Experiment Constants ---
STEP: Final = 20
"""Train sub-grid spacing [mV]"""

SEEDS: Final = 5

TARGETS: Final = ("I_D", "Q_S")

FAMILIES: Final = ("MLP", "FKAN", "KAN")

script_dir = os.path.dirname(os.path.abspath(__file__))
results_dir = os.path.join(script_dir, "results")


def main():
    dataset = device.generate_dataset(STEP)
    workers = min(SEEDS, os.cpu_count() or 1)

    # --- Sweeps ---
    sweeps = {}
    for target in TARGETS:
        for family in FAMILIES:
            config = TrainConfig(family=family, target=target, step=STEP)
            summary = training.seed_sweep(config, SEEDS, dataset=dataset, workers=workers)
            summary.to_csv(os.path.join(results_dir, f"{family}_{target}.csv"))
            sweeps[(family, target)] = summary
            print(f"{family} {target}: median test MAPE {100 * summary.test.median:.3f} %")

    # --- Plot results ---
    fig, axs = plt.subplots(1, len(TARGETS), figsize=(10, 4), constrained_layout=True)
    fig.suptitle(f"Test MAPE over {SEEDS} seeds, {STEP} mV train grid")

    for ax, target in zip(axs, TARGETS):
        data = [
            [100 * r.test_mape for r in sweeps[(family, target)].results if not r.diverged]
            for family in FAMILIES
        ]
        ax.boxplot(data, tick_labels=FAMILIES)
        ax.set_title(f"${target}$")
        ax.set_ylabel("MAPE / %")
        ax.set_yscale("log")
        ax.grid(True)

    # Save plot to file
    save_path = os.path.join(results_dir, "scipy.png")
    plt.savefig(save_path)
    print(f"Plot saved to {save_path}")


if __name__ == "__main__":
    main()
