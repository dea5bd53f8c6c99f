"""Compare MMSE, damped EP, and exhaustive ML detection on a small system.

Run:  python demos/02_detection_baselines.py
"""

import numpy as np

from epturbo.harness import ExperimentConfig, run_sweep

# 2x2 QPSK keeps the ML search tiny (16 candidates), so all three
# detectors can be swept over the same channel realizations.
config = ExperimentConfig(
    nt=2, nr=2, mod_order=4,
    snr_grid_db=(2.0, 6.0, 10.0, 14.0),
    snr_mode="es",
    variants=("mmse", "ep", "ml"),
    ep_layers=5,
    fixed_damping=0.1,
    min_bit_errors=200,
    max_bits=400_000,
    master_seed=7,
)

records = run_sweep(config)

print(f"{'variant':>8} {'Es/N0':>6} {'BER':>12} {'bits':>9}")
for r in records:
    print(f"{r.variant:>8} {r.snr_db:6.1f} {r.ber:12.4e} {r.bits:9d}")

print("\nEP closes most of the gap between MMSE and ML within 5 layers;")
print("the ML row is the optimum on these shared channel draws.")
