import os

import matplotlib.pyplot as plt

from kan_compact import device

# --- Setup save txt ---
script_dir = os.path.dirname(os.path.abspath(__file__))
os.makedirs(os.path.join(script_dir, "results"), exist_ok=True)
save_txt = os.path.join(script_dir, "results", "python.txt")

# --- Splits ---
datasets = {step: device.generate_dataset(step) for step in device.SUPPORTED_STEPS}

with open(save_txt, "w", encoding="utf-8") as f:
    f.write("step_mV  train   test  train_%\n")
    for step, dataset in datasets.items():
        s = device.split_summary(dataset)
        f.write(f"{step:7d}  {s.train:5d}  {s.test:5d}  {s.train_percent:7.2f}\n")

print(f"Result saved to {save_txt}")

# --- Plot results ---
fig, axs = plt.subplots(1, 3, figsize=(12, 4), constrained_layout=True, sharey=True)
fig.suptitle("Train points inside the 0.2 V x 0.2 V corner of the master grid")

for ax, step in zip(axs, (10, 20, 50)):
    dataset = datasets[step]
    for name, style in (("test", dict(s=1, color="tab:gray")), ("train", dict(s=8, color="tab:red"))):
        table = dataset.split(name)
        corner = (table.V_D <= 0.2) & (table.V_G <= 0.2)
        ax.scatter(table.V_G[corner], table.V_D[corner], label=name, **style)
    ax.set_title(f"{step} mV step")
    ax.set_xlabel("$V_G$ / V")
    ax.legend(loc="upper right")

axs[0].set_ylabel("$V_D$ / V")

# Save plot to file
save_path = os.path.join(script_dir, "results", "scipy.png")
plt.savefig(save_path)
print(f"Plot saved to {save_path}")
