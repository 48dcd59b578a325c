import os

import matplotlib.pyplot as plt

from kan_compact import networks

# --- Setup save txt ---
script_dir = os.path.dirname(os.path.abspath(__file__))
os.makedirs(os.path.join(script_dir, "results"), exist_ok=True)
save_txt = os.path.join(script_dir, "results", "python.txt")

# --- Parameter counts ---
rows = []
for name in networks.PRESETS:
    for target in ("I_D", "Q_S"):
        spec = networks.preset(name, target)
        rows.append((name, target, spec.widths, spec.grids, networks.param_count(spec)))

with open(save_txt, "w", encoding="utf-8") as f:
    f.write(f"{'preset':10s} {'target':6s} {'widths':18s} {'grids':12s} params\n")
    for name, target, widths, grids, count in rows:
        f.write(f"{name:10s} {target:6s} {widths!s:18s} {grids!s:12s} {count}\n")

print(f"Result saved to {save_txt}")

# --- KAN parameters against the spline grid ---
G_values = range(2, 33)
kan1 = [networks.param_count(networks.preset("KAN1", "I_D", G=G)) for G in G_values]
kan2 = [networks.param_count(networks.preset("KAN2", "I_D", G=G)) for G in G_values]

plt.plot(G_values, kan1, label="KAN1 [2, 3, 1, 1]")
plt.plot(G_values, kan2, label="KAN2 [2, 3, 3, 1, 1]")
for name, color in (("MLP1", "tab:red"), ("FKAN1", "tab:green")):
    count = networks.param_count(networks.preset(name, "I_D"))
    plt.axhline(count, color=color, linestyle="--", label=f"{name} ({count})")

plt.xlabel("Grid intervals G")
plt.ylabel("Trainable parameters")
plt.title("Network size of the drain-current presets")
plt.grid(True)
plt.legend()

# Save plot to file
save_path = os.path.join(script_dir, "results", "scipy.png")
plt.savefig(save_path)
print(f"Plot saved to {save_path}")
