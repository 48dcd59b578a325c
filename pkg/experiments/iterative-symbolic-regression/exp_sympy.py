import logging
import os
from typing import Final

import matplotlib.pyplot as plt

from kan_compact import device, evaluate, symbolic, training
from kan_compact.config import TrainConfig
from kan_compact.errors import DivergenceError

# --- Experiment Constants ---
STEP: Final = 20
"""Train sub-grid spacing [mV]"""

TARGET: Final = "Q_S"

K_VALUES: Final = (1, 3, 6)
"""Edges fixed per round"""

logging.basicConfig(level=logging.WARNING)

# --- Setup save txt ---
script_dir = os.path.dirname(os.path.abspath(__file__))
os.makedirs(os.path.join(script_dir, "results"), exist_ok=True)
save_txt = os.path.join(script_dir, "results", "python.txt")

# Clear the file (create empty if it doesn't exist)
open(save_txt, "w", encoding="utf-8").close()


def write_line(line: str):
    """Append a line of text to save_txt."""
    with open(save_txt, "a", encoding="utf-8") as f:
        f.write(line + "\n")


# --- Trained KAN ---
config = TrainConfig(family="KAN", preset="KAN-SR", target=TARGET, step=STEP)
dataset = device.generate_dataset(STEP)
checkpoint, _ = training.train(config, dataset=dataset)


def scores(model) -> tuple[float, float]:
    return tuple(evaluate.target_mape(model, dataset.split(s), TARGET) for s in ("train", "test"))


write_line(f"--- KAN-SR on {TARGET}, {STEP} mV train grid ---\n")
write_line("spline network: train {:.3%}, test {:.3%}".format(*scores(checkpoint)))

# --- Post-hoc ---
posthoc = symbolic.symbolize(checkpoint, dataset.train.inputs())
write_line("post-hoc fit:   train {:.3%}, test {:.3%}".format(*scores(posthoc)))
write_line(f"  {symbolic.extract_formula(posthoc).text}\n")

# --- Iterative ---
histories = {}
best = None
for k in K_VALUES:
    try:
        model, rounds = symbolic.iterative_sr(checkpoint, dataset, k, config)
    except DivergenceError as e:
        write_line(f"k = {k}: {e}")
        continue
    histories[k] = [r.mape for r in rounds]
    train, test = scores(model)
    write_line(f"iterative k={k}: train {train:.3%}, test {test:.3%}, {len(rounds)} rounds")
    write_line(f"  {symbolic.extract_formula(model).text}\n")
    if best is None or test < best[1]:
        best = (model, test)

# --- Ablation ---
if best is not None:
    model = best[0]
    for variable in symbolic.VARIABLES:
        ablated = symbolic.ablate_variable(model, variable)
        write_line("without {}: train {:.3%}, test {:.3%}".format(variable, *scores(ablated)))

print(f"Result saved to {save_txt}")

# --- Plot results ---
for k, history in histories.items():
    plt.plot(range(1, len(history) + 1), [100 * m for m in history], marker="o", label=f"k = {k}")
plt.axhline(100 * scores(posthoc)[0], color="tab:red", linestyle="--", label="post-hoc")

plt.xlabel("Round")
plt.ylabel("Train MAPE / %")
plt.yscale("log")
plt.title("Iterative symbolic regression of a [2, 6, 1] KAN")
plt.grid(True)
plt.legend()

# Save plot to file
save_path = os.path.join(script_dir, "results", "sympy.png")
plt.savefig(save_path)
print(f"Plot saved to {save_path}")
