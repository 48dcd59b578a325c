import subprocess
import sys
from pathlib import Path

print("--- Running device simulations ---")
for script in sorted(Path("models").rglob("sim*.py")):
    print(f"Running {script}...")
    subprocess.run([sys.executable, str(script)], check=True)
    print(f"Finished {script}.\n")


# Experiments train networks; the slow ones dominate the run time
print("--- Running all experiments ---")
for script in sorted(Path("experiments").rglob("exp*.py")):
    print(f"Running {script}...")
    subprocess.run([sys.executable, str(script)], check=True)
    print(f"Finished {script}.\n")
