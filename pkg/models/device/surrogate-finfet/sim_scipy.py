import os

import matplotlib.pyplot as plt
import numpy as np

from kan_compact import device

# --- Sweeps ---
V_G = np.linspace(0, device.V_MAX, 165)
"""Gate voltage sweep [V]"""

V_D_curves = (0.05, 0.4, 0.82)
"""Drain voltages of the transfer curves [V]"""

V_D = np.linspace(0, device.V_MAX, 165)
"""Drain voltage sweep [V]"""

V_G_curves = (0.4, 0.6, 0.82)
"""Gate voltages of the output curves [V]"""

# --- Model Output ---
transfer = {v: device.surrogate(v, V_G) for v in V_D_curves}
output = {v: device.surrogate(V_D, v) for v in V_G_curves}

# --- Plot results ---
fig, axs = plt.subplots(2, 2, figsize=(10, 8), constrained_layout=True)
fig.suptitle("Surrogate FinFET")

for v, r in transfer.items():
    axs[0, 0].semilogy(V_G, r["I_D"] + device.I_LEAK, label=f"$V_D$ = {v} V")
axs[0, 0].set_xlabel("$V_G$ / V")
axs[0, 0].set_ylabel("$I_D$ / A")

for v, r in output.items():
    axs[0, 1].plot(V_D, r["I_D"] * 1e6, label=f"$V_G$ = {v} V")
axs[0, 1].set_xlabel("$V_D$ / V")
axs[0, 1].set_ylabel(r"$I_D$ / $\mu$A")

# Terminal charges from the 5 mV master grid
dataset = device.generate_dataset(device.MASTER_STEP_MV)
table = dataset.train
row = np.isclose(table.V_D, 0.4)
for name in ("Q_S", "Q_D", "Q_G"):
    axs[1, 0].plot(table.V_G[row], table.field(name)[row], label=f"${name}$")
axs[1, 0].plot(table.V_G[row], device.bulk_charge(table)[row], "--", label="$Q_B$")
axs[1, 0].set_xlabel("$V_G$ / V")
axs[1, 0].set_ylabel("Charge / aF")
axs[1, 0].set_title("$V_D$ = 0.4 V")

# Transconductance on the same grid
g_m = device.grid_derivative(dataset, "I_D", axis="V_G", order=1)
for v in V_D_curves:
    row = int(np.argmin(np.abs(dataset.train_vd_axis - v)))
    axs[1, 1].plot(dataset.train_vg_axis, g_m[row] * 1e6, label=f"$V_D$ = {v} V")
axs[1, 1].set_xlabel("$V_G$ / V")
axs[1, 1].set_ylabel(r"$g_m$ / $\mu$S")

for ax in axs.flat:
    ax.grid(True)
    ax.legend()

# Save plot to file
script_dir = os.path.dirname(os.path.abspath(__file__))
os.makedirs(os.path.join(script_dir, "simulations"), exist_ok=True)
save_path = os.path.join(script_dir, "simulations", "scipy.png")
plt.savefig(save_path)
print(f"Plot saved to {save_path}")
