"""Walk through the modem layer: Gray mapping, priors, and soft demapping.

Run:  python demos/01_qam_mapping_and_llrs.py
"""

import numpy as np

from epturbo.modem import Constellation, demap_llr, llr_to_prior, map_bits, uniform_prior

rng = np.random.default_rng(0)

# A unit-energy 16-QAM constellation. The first two bits of each symbol
# label the in-phase amplitude, the last two the quadrature amplitude.
c = Constellation(16)
print("16-QAM amplitudes per rail:", np.round(c.amplitudes, 4))
print("mean symbol energy:", np.mean(np.abs(c.points) ** 2))

# Map a random bit frame onto symbols and back through a noisy observation.
bits = rng.integers(0, 2, 4 * c.bits_per_symbol)
syms = map_bits(bits, c)
print("\nbits:", bits, "\nsymbols:", np.round(syms, 3))

# Pretend a detector produced Gaussian beliefs centered near the true
# symbols. The demapper turns them into per-bit LLRs (positive = bit 0).
mean = np.concatenate([syms.real, syms.imag]) + 0.05 * rng.normal(size=8)
var = np.full(8, 0.05)
prior = uniform_prior(c, 8)
llr = demap_llr(mean, var, prior, c)
print("\nLLR frame:\n", np.round(llr, 2))
decided = (llr < 0).astype(int).reshape(-1)
print("bit errors after hard decision:", int(np.sum(decided != bits)))

# Decoder feedback enters as LLRs and becomes a factorized symbol prior;
# its per-dimension means/variances seed the next detection stage.
fb = llr_to_prior(0.8 * llr, c)
print("\nprior means:", np.round(fb.mean, 3))
print("prior variances:", np.round(fb.var, 3))
