"""Square M-QAM bit mapping, per-dimension symbol priors, and soft demapping.

All LLRs use the convention L = log P(b=0) / P(b=1).  A complex symbol
carries Q = log2(M) bits: the first Q/2 label the in-phase amplitude, the
last Q/2 the quadrature amplitude.  In the real-valued receiver model a
group of N symbols maps to 2N real dimensions ordered [all I, all Q], and
every per-dimension quantity here (prior rows, means, variances) follows
that ordering.
"""

import numpy as np

# LLRs are clamped here before anything is exponentiated; beyond +-50 the
# implied probabilities are indistinguishable at double precision.
LLR_CLAMP = 50.0


def maxstar(a, b):
    """Exact max*(a, b) = max(a, b) + log(1 + e^-|a-b|), the Jacobian logarithm."""
    return np.logaddexp(a, b)


def maxstar_reduce(x, axis=-1):
    """max* folded over one axis of an array."""
    return np.logaddexp.reduce(x, axis=axis)


def _gray_codes(n_bits):
    """Binary-reflected Gray sequence for indices 0 .. 2**n_bits - 1."""
    idx = np.arange(1 << n_bits)
    return idx ^ (idx >> 1)


class Constellation:
    """Gray-labeled unit-energy square QAM constellation.

    Parameters
    ----------
    order : int
        Constellation size M, one of 4, 16, 64.

    Attributes
    ----------
    order, bits_per_symbol : int
        M and Q = log2(M).
    amplitudes : ndarray (sqrt(M),)
        Real amplitudes shared by the I and Q rails, sorted descending so
        that the all-zero label lands on the most positive amplitude.
    labels : ndarray (sqrt(M), Q/2)
        Gray bit label of each amplitude, matching `amplitudes` order.
    points : ndarray (M,)
        Complex points, unit average energy.
    point_labels : ndarray (M, Q)
        Bit pattern of each point in `points`.
    """

    SUPPORTED = (4, 16, 64)

    def __init__(self, order):
        if order not in self.SUPPORTED:
            raise ValueError(f"unsupported constellation order {order}")
        self.order = int(order)
        self.bits_per_symbol = int(np.log2(order))
        q = self.bits_per_symbol // 2
        m = 1 << q  # amplitudes per rail, sqrt(M)

        # Odd levels +-1, +-3, ... scaled to unit complex symbol energy.
        delta = np.sqrt(3.0 / (2.0 * (order - 1)))
        self.amplitudes = delta * np.arange(m - 1, -m, -2).astype(float)

        gray = _gray_codes(q)
        self.labels = (gray[:, None] >> np.arange(q - 1, -1, -1)) & 1
        # label integer -> amplitude index (inverse of the Gray map)
        self._amp_index_of_label = np.empty(m, dtype=np.int64)
        self._amp_index_of_label[gray] = np.arange(m)

        # Full complex constellation: first q bits pick I, last q pick Q.
        amp_i = np.repeat(self.amplitudes, m)
        amp_q = np.tile(self.amplitudes, m)
        self.points = amp_i + 1j * amp_q
        self.point_labels = np.concatenate(
            [np.repeat(self.labels, m, axis=0), np.tile(self.labels, (m, 1))],
            axis=1,
        )

    @property
    def bits_per_dim(self):
        return self.bits_per_symbol // 2

    @property
    def n_amplitudes(self):
        return self.amplitudes.size

    def amp_indices(self, bits):
        """Map bit rows (..., Q/2) to amplitude indices via the Gray labeling."""
        bits = np.asarray(bits)
        weights = 1 << np.arange(self.bits_per_dim - 1, -1, -1)
        label_int = (bits * weights).sum(axis=-1)
        return self._amp_index_of_label[label_int]


class SymbolPrior:
    """Factorized prior over the real amplitudes of each real dimension.

    `probs` has shape (n_dims, n_amplitudes) with rows ordered like the
    real-valued model ([all I, all Q] within a symbol group).  Means and
    variances of each row are derived on construction.
    """

    def __init__(self, probs, constellation):
        probs = np.asarray(probs, dtype=float)
        self.probs = probs
        self.constellation = constellation
        amps = constellation.amplitudes
        self.mean = probs @ amps
        self.var = probs @ amps**2 - self.mean**2
        # tiny negatives from cancellation only
        self.var = np.maximum(self.var, 0.0)

    @property
    def n_dims(self):
        return self.probs.shape[-2]

    def validate(self, tol=1e-9):
        sums = self.probs.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=tol):
            raise ValueError("prior rows must sum to 1")
        if np.any(self.var < 0):
            raise ValueError("prior variance must be nonnegative")


def map_bits(bits, constellation):
    """Gray-map a bit vector onto complex constellation symbols.

    `bits` may carry leading batch axes; the last axis length must be a
    multiple of Q.
    """
    bits = np.asarray(bits)
    q2 = constellation.bits_per_symbol
    if bits.shape[-1] % q2:
        raise ValueError(
            f"bit count {bits.shape[-1]} not divisible by Q={q2}"
        )
    groups = bits.reshape(*bits.shape[:-1], -1, q2)
    q = constellation.bits_per_dim
    idx_i = constellation.amp_indices(groups[..., :q])
    idx_q = constellation.amp_indices(groups[..., q:])
    amps = constellation.amplitudes
    return amps[idx_i] + 1j * amps[idx_q]


def uniform_prior(constellation, n_dims):
    """Uninformative prior: 1/sqrt(M) on every real amplitude of every dimension."""
    m = constellation.n_amplitudes
    probs = np.full((n_dims, m), 1.0 / m)
    return SymbolPrior(probs, constellation)


def _bit_probs_from_llr(llr):
    """Stack (P(b=0), P(b=1)) computed stably from clamped LLRs."""
    llr = np.clip(llr, -LLR_CLAMP, LLR_CLAMP)
    p0 = 1.0 / (1.0 + np.exp(-llr))
    return np.stack([p0, 1.0 - p0], axis=-1)


def prior_probs_from_llr(llr, constellation):
    """Batched LLRs (..., n_sym, Q) -> amplitude probabilities (..., 2*n_sym, m).

    The symbol prior is the product of its per-bit probabilities, split
    between the I and Q rails by the labeling convention; output rows are
    ordered [I_0..I_{n-1}, Q_0..Q_{n-1}] along the second-to-last axis.
    """
    q = constellation.bits_per_dim
    bp = _bit_probs_from_llr(np.asarray(llr, dtype=float))
    labels = constellation.labels

    def rail(bit_probs):
        # product over the q bits of P(b_j = label_j(k)) for every amplitude k
        out = np.ones(bit_probs.shape[:-2] + (constellation.n_amplitudes,))
        for j in range(q):
            out = out * bit_probs[..., j, labels[:, j]]
        return out

    probs = np.concatenate([rail(bp[..., :q, :]), rail(bp[..., q:, :])], axis=-2)
    # product priors are normalized by construction; renormalize for hygiene
    return probs / probs.sum(axis=-1, keepdims=True)


def llr_to_prior(llr, constellation):
    """Turn decoder LLRs (n_sym, Q) into a per-real-dimension SymbolPrior."""
    llr = np.asarray(llr, dtype=float)
    q2 = constellation.bits_per_symbol
    if llr.ndim != 2 or llr.shape[1] != q2:
        raise ValueError(f"LLR frame must have shape (n_symbols, {q2})")
    return SymbolPrior(prior_probs_from_llr(llr, constellation), constellation)


def demap_llr(ext_mean, ext_var, prior, constellation):
    """Extrinsic bit LLRs from a Gaussian extrinsic pdf on each real dimension.

    Parameters
    ----------
    ext_mean, ext_var : ndarray (2n,)
        Moments of the extrinsic Gaussian per real dimension, ordered
        [all I, all Q].  Variances must be positive.
    prior : SymbolPrior
        A-priori amplitude probabilities per dimension.  For each bit the
        LLR includes the priors of the *other* bits on the same rail, so
        the result is extrinsic per bit; with a uniform prior this reduces
        to the plain Gaussian log-ratio over the constellation.

    Returns
    -------
    ndarray (n, Q) of LLRs, clamped to +-LLR_CLAMP.
    """
    mean = np.atleast_1d(np.asarray(ext_mean, dtype=float))
    var = np.atleast_1d(np.asarray(ext_var, dtype=float))
    if np.any(var <= 0):
        raise ValueError("extrinsic variances must be positive")
    probs = prior.probs if isinstance(prior, SymbolPrior) else np.asarray(prior)
    if probs.shape[-2] != mean.shape[-1]:
        raise ValueError("prior/extrinsic dimension mismatch")
    llr2 = _demap_dims(mean, var, probs, constellation)  # (..., 2n, q)
    n = mean.shape[-1] // 2
    return np.concatenate([llr2[..., :n, :], llr2[..., n:, :]], axis=-1)


def _demap_dims(mean, var, probs, constellation):
    """Per-dimension bit LLRs; mean/var/probs may carry leading batch axes."""
    amps = constellation.amplitudes
    labels = constellation.labels
    q = constellation.bits_per_dim

    gauss = -((amps - mean[..., None]) ** 2) / (2.0 * var[..., None])
    # per-bit prior marginals recovered from the amplitude probabilities
    log_bit = np.empty(mean.shape + (q, 2))
    for j in range(q):
        p0 = probs[..., labels[:, j] == 0].sum(axis=-1)
        log_bit[..., j, 0] = np.log(np.maximum(p0, 1e-300))
        log_bit[..., j, 1] = np.log(np.maximum(1.0 - p0, 1e-300))

    # log prior of each amplitude as a product over bits, then exclude the
    # bit being demapped so its own prior never feeds back
    own = np.empty(mean.shape + (q, amps.size))
    for j in range(q):
        own[..., j, :] = log_bit[..., j, labels[:, j]]
    total = own.sum(axis=-2)

    llr = np.empty(mean.shape + (q,))
    for j in range(q):
        w = gauss + total - own[..., j, :]
        mask0 = labels[:, j] == 0
        num = maxstar_reduce(w[..., mask0], axis=-1)
        den = maxstar_reduce(w[..., ~mask0], axis=-1)
        llr[..., j] = num - den
    return np.clip(llr, -LLR_CLAMP, LLR_CLAMP)
