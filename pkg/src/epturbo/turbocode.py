"""Rate-1/2 turbo code: RSC encoders, BCJR decoding, and extrinsic scaling.

The constituent code is the classic 8-state recursive systematic
convolutional encoder with feedback 1 + D^2 + D^3 and forward polynomial
1 + D + D^3.  Both trellises are terminated with three tail steps.

Codeword layout (V = 2K + 12 bits):

    [ systematic (K) | punctured parity (K) | tail1 (6) | tail2 (6) ]

The punctured parity stream takes odd positions from encoder 1 and even
positions from encoder 2 (0-based); each tail block interleaves the
encoder's systematic and parity tail bits step by step.  Depunctured
positions decode as erasures (LLR 0).
"""

from dataclasses import dataclass, field

import numpy as np

from .modem import maxstar

NEG_INF = -1e30

# LTE-style quadratic permutation polynomial coefficients (f1, f2) per K
QPP_COEFFS = {
    40: (3, 10),
    48: (7, 12),
    56: (19, 42),
    64: (7, 16),
    72: (7, 18),
    80: (11, 20),
    88: (5, 22),
    96: (11, 24),
    104: (7, 26),
    112: (41, 84),
    120: (103, 90),
    128: (15, 32),
}


class Trellis:
    """8-state RSC trellis with transition and termination tables.

    State index is m1*4 + m2*2 + m3 with m1 the most recent register.
    """

    def __init__(self):
        self.n_states = 8
        self.next_state = np.zeros((8, 2), dtype=np.int64)
        self.parity = np.zeros((8, 2), dtype=np.int64)
        self.term_input = np.zeros(8, dtype=np.int64)
        for s in range(8):
            m1, m2, m3 = (s >> 2) & 1, (s >> 1) & 1, s & 1
            for u in (0, 1):
                a = u ^ m2 ^ m3  # feedback 1 + D^2 + D^3
                p = a ^ m1 ^ m3  # forward 1 + D + D^3
                self.next_state[s, u] = (a << 2) | (m1 << 1) | m2
                self.parity[s, u] = p
            self.term_input[s] = m2 ^ m3
        # reverse tables: the two (state, input) pairs entering each state
        prev = [[] for _ in range(8)]
        for s in range(8):
            for u in (0, 1):
                prev[self.next_state[s, u]].append((s, u))
        self.prev_state = np.array([[p[0][0], p[1][0]] for p in prev])
        self.prev_input = np.array([[p[0][1], p[1][1]] for p in prev])

    def encode_stream(self, bits):
        """Run the RSC over `bits`, then terminate: returns (parity, tail_sys, tail_par)."""
        s = 0
        parity = np.empty(len(bits), dtype=np.int64)
        for k, u in enumerate(bits):
            parity[k] = self.parity[s, u]
            s = self.next_state[s, u]
        tail_sys = np.empty(3, dtype=np.int64)
        tail_par = np.empty(3, dtype=np.int64)
        for k in range(3):
            u = self.term_input[s]
            tail_sys[k] = u
            tail_par[k] = self.parity[s, u]
            s = self.next_state[s, u]
        assert s == 0, "termination must reach state 0"
        return parity, tail_sys, tail_par


def qpp_interleaver(k, seed=0):
    """Interleaver permutation: QPP where coefficients are published, else seeded random."""
    if k in QPP_COEFFS:
        f1, f2 = QPP_COEFFS[k]
        i = np.arange(k, dtype=np.int64)
        pi = (f1 * i + f2 * i * i) % k
        if len(np.unique(pi)) != k:
            raise ValueError(f"QPP coefficients for K={k} do not permute")
        return pi
    return np.random.default_rng(seed).permutation(k)


@dataclass
class ScaledDecoderWeights:
    """Extrinsic scale factors, one per constituent per turbo iteration."""

    values: np.ndarray  # (n_iter, 2)

    @classmethod
    def initial(cls, n_iter, value=0.7):
        return cls(np.full((n_iter, 2), float(value)))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("decoder weights must be finite")


@dataclass
class TurboCodec:
    """Immutable codec configuration shared by encoder and decoders."""

    k: int
    interleaver: np.ndarray = None
    decoder: str = "max-log"  # 'max-log' | 'log' | 'scaled-max-log'
    n_iter: int = 5
    seed: int = 0
    trellis: Trellis = field(default_factory=Trellis)
    weights: ScaledDecoderWeights = None

    def __post_init__(self):
        if self.interleaver is None:
            self.interleaver = qpp_interleaver(self.k, self.seed)
        self.interleaver = np.asarray(self.interleaver)
        if sorted(self.interleaver.tolist()) != list(range(self.k)):
            raise ValueError("interleaver must be a permutation of 0..K-1")
        if self.decoder not in ("max-log", "log", "scaled-max-log"):
            raise ValueError(f"unknown decoder kind {self.decoder!r}")

    @property
    def n_coded(self):
        """Transmitted codeword length V = 2K + 12."""
        return 2 * self.k + 12

    @property
    def rate(self):
        return self.k / self.n_coded

    def interleave(self, x):
        return np.asarray(x)[..., self.interleaver]

    def deinterleave(self, x):
        x = np.asarray(x)
        out = np.empty_like(x)
        out[..., self.interleaver] = x
        return out


def encode(msg, codec):
    """Encode K message bits into the V-bit punctured turbo codeword."""
    msg = np.asarray(msg, dtype=np.int64)
    if msg.shape != (codec.k,):
        raise ValueError(f"message must have length {codec.k}")
    par1, t1s, t1p = codec.trellis.encode_stream(msg)
    par2, t2s, t2p = codec.trellis.encode_stream(codec.interleave(msg))
    punct = np.where(np.arange(codec.k) % 2 == 1, par1, par2)
    tail1 = np.stack([t1s, t1p], axis=1).reshape(-1)
    tail2 = np.stack([t2s, t2p], axis=1).reshape(-1)
    return np.concatenate([msg, punct, tail1, tail2])


def _split_codeword_llrs(llrs, codec):
    """Depuncture channel LLRs into per-constituent (sys, par) arrays with tails.

    Accepts (V,) or (B, V); returns arrays with trailing length K + 3.
    Punctured parity positions become erasures (0).
    """
    llrs = np.atleast_2d(np.asarray(llrs, dtype=float))
    k = codec.k
    if llrs.shape[-1] != codec.n_coded:
        raise ValueError(f"expected {codec.n_coded} channel LLRs")
    b = llrs.shape[0]
    sys_msg = llrs[:, :k]
    punct = llrs[:, k : 2 * k]
    tail1 = llrs[:, 2 * k : 2 * k + 6].reshape(b, 3, 2)
    tail2 = llrs[:, 2 * k + 6 :].reshape(b, 3, 2)

    odd = np.arange(k) % 2 == 1
    par1 = np.where(odd, punct, 0.0)
    par2 = np.where(~odd, punct, 0.0)

    sys1 = np.concatenate([sys_msg, tail1[:, :, 0]], axis=1)
    p1 = np.concatenate([par1, tail1[:, :, 1]], axis=1)
    sys2 = np.concatenate([codec.interleave(sys_msg), tail2[:, :, 0]], axis=1)
    p2 = np.concatenate([par2, tail2[:, :, 1]], axis=1)
    return sys1, p1, sys2, p2


def _bcjr_batch(sys_llr, par_llr, apriori, trellis, algo, want_bit_posteriors=False):
    """Forward-backward pass over (B, K+3) LLR arrays.

    Returns (posterior, extrinsic) for the K message bits; with
    `want_bit_posteriors` also the systematic and parity bit posteriors
    over all K + 3 steps (used for detector feedback).
    """
    if algo == "log":
        star = maxstar
        star_reduce = lambda x: np.logaddexp.reduce(x, axis=-1)
    elif algo == "max-log":
        star = np.maximum
        star_reduce = lambda x: np.max(x, axis=-1)
    else:
        raise ValueError(f"unknown BCJR algorithm {algo!r}")

    sys_llr = np.asarray(sys_llr, dtype=float)
    par_llr = np.asarray(par_llr, dtype=float)
    apriori = np.asarray(apriori, dtype=float)
    b, n = sys_llr.shape
    k = apriori.shape[1]
    if par_llr.shape != (b, n) or n != k + 3:
        raise ValueError("misaligned BCJR input lengths")
    tr = trellis

    la_full = np.concatenate([apriori, np.zeros((b, 3))], axis=1)
    # branch metrics: gamma[b, k, s, u] with bit sign +1 for 0, -1 for 1
    sgn_u = 1.0 - 2.0 * np.arange(2)
    sgn_p = 1.0 - 2.0 * tr.parity  # (8, 2)
    half_sys = 0.5 * (sys_llr + la_full)
    gamma = (
        half_sys[:, :, None, None] * sgn_u[None, None, None, :]
        + 0.5 * par_llr[:, :, None, None] * sgn_p[None, None, :, :]
    )

    alpha = np.full((n + 1, b, 8), NEG_INF)
    alpha[0, :, 0] = 0.0
    for i in range(n):
        cand = alpha[i][:, tr.prev_state] + gamma[:, i][
            :, tr.prev_state, tr.prev_input
        ]
        a = star_reduce(cand)
        alpha[i + 1] = a - a.max(axis=1, keepdims=True)

    beta = np.full((n + 1, b, 8), NEG_INF)
    beta[n, :, 0] = 0.0
    for i in range(n - 1, -1, -1):
        cand = beta[i + 1][:, tr.next_state] + gamma[:, i]
        bt = star(cand[..., 0], cand[..., 1])
        beta[i] = bt - bt.max(axis=1, keepdims=True)

    def bit_llr(i, bit_of_transition):
        full = alpha[i][:, :, None] + gamma[:, i] + beta[i + 1][:, tr.next_state]
        flat = full.reshape(b, 16)
        mask0 = (bit_of_transition.reshape(-1) == 0)
        return star_reduce(flat[:, mask0]) - star_reduce(flat[:, ~mask0])

    input_bits = np.tile(np.arange(2), (8, 1))
    posterior = np.stack([bit_llr(i, input_bits) for i in range(k)], axis=1)
    extrinsic = posterior - apriori - sys_llr[:, :k]
    if not want_bit_posteriors:
        return posterior, extrinsic

    sys_post = np.stack([bit_llr(i, input_bits) for i in range(n)], axis=1)
    par_post = np.stack([bit_llr(i, tr.parity) for i in range(n)], axis=1)
    return posterior, extrinsic, sys_post, par_post


def bcjr(sys_llr, par_llr, apriori_llr, trellis, algo):
    """Single-frame soft-in soft-out decode of one constituent code.

    sys_llr and par_llr cover the K message steps plus 3 tail steps;
    apriori_llr covers the K message bits.  Returns (posterior, extrinsic)
    for the message bits, where extrinsic = posterior - apriori - sys.
    """
    post, ext = _bcjr_batch(
        np.atleast_2d(sys_llr),
        np.atleast_2d(par_llr),
        np.atleast_2d(apriori_llr),
        trellis,
        algo,
    )
    return post[0], ext[0]


def _decode_batch(ch_llrs, codec, n_iter=None, weights=None, want_feedback=False):
    """Iterative turbo decode over (B, V) channel LLRs."""
    n_iter = codec.n_iter if n_iter is None else n_iter
    if n_iter < 1:
        raise ValueError("need at least one turbo iteration")
    algo = "log" if codec.decoder == "log" else "max-log"
    if weights is None and codec.decoder == "scaled-max-log":
        weights = codec.weights or ScaledDecoderWeights.initial(n_iter)
    if weights is not None:
        wv = weights.values
        if wv.shape[0] < n_iter:
            raise ValueError("need one weight pair per turbo iteration")

    sys1, p1, sys2, p2 = _split_codeword_llrs(ch_llrs, codec)
    b, k = sys1.shape[0], codec.k
    la1 = np.zeros((b, k))
    le1 = np.zeros((b, k))
    le2 = np.zeros((b, k))
    for it in range(n_iter):
        last = it == n_iter - 1
        res1 = _bcjr_batch(sys1, p1, la1, codec.trellis, algo,
                           want_bit_posteriors=want_feedback and last)
        le1 = res1[1]
        if weights is not None:
            le1 = wv[it, 0] * le1
        la2 = codec.interleave(le1)
        res2 = _bcjr_batch(sys2, p2, la2, codec.trellis, algo,
                           want_bit_posteriors=want_feedback and last)
        le2 = res2[1]
        if weights is not None:
            le2 = wv[it, 1] * le2
        la1 = codec.deinterleave(le2)

    posterior = sys1[:, :k] + le1 + la1
    bits = (posterior < 0).astype(np.int64)
    if not want_feedback:
        return bits, posterior

    # extrinsic LLRs for every transmitted codeword position
    _, _, s1_post, p1_post = res1
    _, _, s2_post, p2_post = res2
    ext = np.empty((b, codec.n_coded))
    ext[:, :k] = le1 + la1
    odd = np.arange(k) % 2 == 1
    ext[:, k : 2 * k] = np.where(odd, p1_post[:, :k] - p1[:, :k],
                                 p2_post[:, :k] - p2[:, :k])
    ext[:, 2 * k : 2 * k + 6] = np.stack(
        [s1_post[:, k:] - sys1[:, k:], p1_post[:, k:] - p1[:, k:]], axis=2
    ).reshape(b, 6)
    ext[:, 2 * k + 6 :] = np.stack(
        [s2_post[:, k:] - sys2[:, k:], p2_post[:, k:] - p2[:, k:]], axis=2
    ).reshape(b, 6)
    return bits, posterior, ext


def turbo_decode(ch_llrs, codec, n_iter=None, weights=None):
    """Decode one frame of V channel LLRs.

    Returns (message bits, a-priori LLRs for the detector).  The second
    output covers every transmitted codeword bit and is extrinsic from
    the decoder's point of view (posterior minus the channel input).
    """
    bits, _, ext = _decode_batch(
        np.atleast_2d(ch_llrs), codec, n_iter, weights, want_feedback=True
    )
    return bits[0], ext[0]


def decode_posteriors(ch_llrs, codec, n_iter=None, weights=None):
    """Batched decode returning message posterior LLRs (used for fitting)."""
    _, posterior = _decode_batch(np.atleast_2d(ch_llrs), codec, n_iter, weights)
    return posterior


def _golden_refine(fun, lo, hi, tol=1e-3, max_iter=40):
    """Golden-section minimization of a unimodal scalar function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def fit_scaled_weights(dataset, codec, n_iter=None, max_passes=30, tol=3e-4,
                       grid=None):
    """Fit extrinsic scale factors against log-MAP posteriors.

    `dataset` is a sequence of (channel LLR frame, log-MAP posterior
    frame) pairs from a single training SNR.  Each weight is optimized
    coordinate-wise by a coarse grid followed by golden-section
    refinement of the posterior mean-square error; passes repeat until
    the weight vector stabilizes.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    n_iter = codec.n_iter if n_iter is None else n_iter
    ch = np.stack([d[0] for d in dataset])
    target = np.stack([d[1] for d in dataset])
    grid = np.linspace(0.1, 1.5, 15) if grid is None else np.asarray(grid)

    values = np.full((n_iter, 2), 0.7)

    def mse(vals):
        post = decode_posteriors(ch, codec, n_iter, ScaledDecoderWeights(vals))
        return float(np.mean((post - target) ** 2))

    span = grid[1] - grid[0]
    for p in range(max_passes):
        before = values.copy()
        for it in range(n_iter):
            for d in range(2):
                def f(w, it=it, d=d):
                    trial = values.copy()
                    trial[it, d] = w
                    return mse(trial)

                if p == 0:
                    # locate the basin once with the coarse grid
                    coarse = [f(w) for w in grid]
                    best = int(np.argmin(coarse))
                    lo = grid[max(best - 1, 0)]
                    hi = grid[min(best + 1, len(grid) - 1)]
                else:
                    lo = values[it, d] - 1.5 * span
                    hi = values[it, d] + 1.5 * span
                values[it, d] = _golden_refine(f, lo, hi, tol=1e-4)
        if p > 0 and np.max(np.abs(values - before)) < tol:
            break
    return ScaledDecoderWeights(values)
