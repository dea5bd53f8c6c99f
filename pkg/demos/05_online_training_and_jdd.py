"""Online-train damping factors, then run the full turbo receiver.

Run:  python demos/05_online_training_and_jdd.py
"""

import numpy as np

from epturbo.channel import SnrSpec
from epturbo.epdetect import EpConfig, JddReceiver, sigmoid
from epturbo.harness import ExperimentConfig, run_sweep
from epturbo.metaopt import ChannelStats, meta_train, online_train
from epturbo.modem import Constellation
from epturbo.turbocode import TurboCodec

rng = np.random.default_rng(3)

# A quick meta-training pass stands in for the shipped offline optimizer.
from epturbo.metaopt import meta_train  # noqa: E402

theta, _ = meta_train(epochs=1500, lr=3e-3, rng=rng)

# Receiver under test: 4x4 16-QAM, rate-1/2 turbo code, two JDD stages.
codec = TurboCodec(k=40, decoder="max-log", n_iter=5)
c = Constellation(16)
layers, stages = 5, 2
snr = SnrSpec("eb-coded", 8.0, 16, code_rate=codec.rate)

receiver = JddReceiver(
    codec=codec, constellation=c,
    schedules=np.ones((stages, layers)),
    config=EpConfig(layers=layers),
)
stats = ChannelStats(nt=4, nr=4, mod_order=16, snr=snr,
                     n_samples=800, seed=5)

# The receiver generates its own labels from the channel statistics and
# trains each stage's five damping factors in sequence.
trained, curves = online_train(receiver, stats, theta, epochs=30)
for i, (curve, raw) in enumerate(zip(curves, trained.schedules)):
    print(f"stage {i + 1}: loss {curve[0]:.3f} -> {curve[-1]:.3f}, "
          f"damping {np.round(sigmoid(raw), 3)}")

# Sweep the trained receiver; each JDD stage reports its own BER row.
config = ExperimentConfig(
    nt=4, nr=4, mod_order=16, message_len=40,
    snr_grid_db=(8.0,), snr_mode="eb-coded",
    variants=("jdd",), jdd_stages=stages, ep_layers=layers,
    damping_source="table", damping_table=trained.schedules,
    min_bit_errors=150, max_bits=150_000, chunk_frames=256,
    master_seed=13,
)
print("\nBER by detection/decoding stage at Eb/N0 = 8 dB:")
for r in run_sweep(config):
    print(f"  {r.variant}: BER = {r.ber:.4e} over {r.bits} bits")
print("\nthe second pass refines the first stage's decisions via the")
print("decoder feedback priors")
