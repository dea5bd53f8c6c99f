"""Expectation-propagation MIMO detection in the real domain.

The detector unfolds L EP iterations, each smoothing its site update with
a sigmoid-constrained damping factor, and emits the cavity (extrinsic)
moments of the last iteration together with the per-layer cavity trace
used by the online training loss.  Baselines (single-pass MMSE, brute
force ML) and the joint detection/decoding loop live here as well.

All inner routines are batched over a leading instance axis; the public
single-instance entry points wrap batch size 1.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import REAL_NOISE_VAR
from .modem import LLR_CLAMP, SymbolPrior, demap_llr, prior_probs_from_llr
from .turbocode import _decode_batch

# initial site precision 1/(2 Es) for the unit-energy constellation
DEFAULT_INIT_LAMBDA = 0.5


class FactorizationError(RuntimeError):
    """Raised when H^T H + Lambda cannot be factorized even after jitter."""


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


@dataclass
class DampingSchedule:
    """Raw (pre-sigmoid) damping parameters of one EPNet instance."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.atleast_1d(np.asarray(self.raw, dtype=float))
        if self.raw.ndim != 1 or self.raw.size < 1:
            raise ValueError("damping schedule needs at least one layer")

    @property
    def layers(self):
        return self.raw.size

    @property
    def effective(self):
        return sigmoid(self.raw)

    @classmethod
    def from_effective(cls, values):
        """Build from post-sigmoid damping factors in (0, 1)."""
        return cls(logit(values))

    @classmethod
    def constant(cls, effective_value, layers):
        return cls.from_effective(np.full(layers, float(effective_value)))


@dataclass
class EpConfig:
    """Detector settings: depth, variance floor, and initial site pair."""

    layers: int = 5
    min_var: float = 5e-7
    init_gamma: float = 0.0
    init_lambda: float = DEFAULT_INIT_LAMBDA
    damping_source: str = "fixed"  # 'fixed' | 'table' | 'trained'

    def __post_init__(self):
        if self.min_var <= 0:
            raise ValueError("minimum variance must be positive")
        if self.layers < 1:
            raise ValueError("need at least one EP layer")


@dataclass
class EpTrace:
    """Per-layer internals of one (batched) EPNet run.

    Arrays are stacked (layers, batch, 2Nt); gamma/lam additionally carry
    the initial pair at index 0, so their leading size is layers + 1.
    """

    mu: np.ndarray
    sigma_diag: np.ndarray
    x_ab: np.ndarray
    v_ab: np.ndarray
    x_b: np.ndarray
    v_b: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray


def _chol_inverse_factors(a, jitter_scale=1e-12):
    """Batched lower-triangular inverse of the Cholesky factor of `a`.

    One jittered retry on failure, after which FactorizationError
    propagates the ill conditioning to the caller.
    """
    n = a.shape[-1]
    eye = np.broadcast_to(np.eye(n), a.shape)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        jit = jitter_scale * np.trace(a, axis1=-2, axis2=-1) / n
        a = a.copy()
        idx = np.arange(n)
        a[..., idx, idx] += jit[..., None]
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                "H^T H + Lambda is not positive definite"
            ) from exc
    return np.linalg.solve(chol, eye)


def _global_moments_batch(hth, hty, gamma, lam):
    """Posterior moments of the Gaussian approximation, SPD solve only.

    Returns (mu, sigma_diag, linv); the full covariance is recovered from
    linv when a caller needs it.
    """
    a = hth.copy()
    n = a.shape[-1]
    idx = np.arange(n)
    a[..., idx, idx] += lam
    linv = _chol_inverse_factors(a)
    sigma_diag = np.einsum("...ki,...ki->...i", linv, linv)
    rhs = hty + gamma
    t = np.einsum("...kj,...j->...k", linv, rhs)
    mu = np.einsum("...ki,...k->...i", linv, t)
    return mu, sigma_diag, linv


def ep_global_moments(gamma, lam, model):
    """Moments (mu, Sigma) of the Gaussian q for one real-valued system."""
    h, y = model.h_r, model.y_r
    hth = (h.T @ h) / model.noise_var
    hty = (h.T @ y) / model.noise_var
    mu, _, linv = _global_moments_batch(hth[None], hty[None], gamma[None], lam[None])
    sigma = np.einsum("bki,bkj->bij", linv, linv)
    return mu[0], sigma[0]


def cavity(mu, sigma_diag, gamma, lam, min_var):
    """Leave-one-out (extrinsic) moments per real dimension.

    The cavity precision 1/Sigma_nn - Lambda_n is floored at min_var, so
    the variance stays in [min_var, 1/min_var] and a vanishing precision
    degrades to a flat, finite cavity instead of overflowing.  The mean
    divides by the same clamped precision so it stays calibrated when the
    variance floor binds (very confident cavities).
    """
    prec = np.maximum(1.0 / sigma_diag - lam, min_var)
    x = (mu / sigma_diag - gamma) / prec
    v = np.maximum(1.0 / prec, min_var)
    return x, v


def discrete_moments(cav_mean, cav_var, prior, constellation, min_var):
    """Mean/variance of the tilted distribution cavity * prior per dimension."""
    probs = prior.probs if isinstance(prior, SymbolPrior) else np.asarray(prior)
    amps = constellation.amplitudes
    logw = np.log(np.maximum(probs, 1e-300)) - (
        (amps - cav_mean[..., None]) ** 2
    ) / (2.0 * cav_var[..., None])
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    x_b = w @ amps
    v_b = np.einsum("...k,...k->...", w, (amps - x_b[..., None]) ** 2)
    return x_b, np.maximum(v_b, min_var)


def refine_pair(gamma, lam, x_ab, v_ab, x_b, v_b):
    """Moment-matched site update; dimensions with nonpositive precision keep
    their previous pair."""
    lam_new = 1.0 / v_b - 1.0 / v_ab
    gamma_new = x_b / v_b - x_ab / v_ab
    ok = lam_new > 0
    return np.where(ok, gamma_new, gamma), np.where(ok, lam_new, lam)


def damp(old_pair, new_pair, beta_raw):
    """Convex combination of site pairs with weight sigmoid(beta_raw)."""
    eff = sigmoid(beta_raw)
    gamma = eff * new_pair[0] + (1.0 - eff) * old_pair[0]
    lam = eff * new_pair[1] + (1.0 - eff) * old_pair[1]
    return gamma, lam


class EpWorkspace:
    """Cached likelihood terms for repeated EPNet runs on one batch.

    Precomputes H^T H / sigma^2 and H^T y / sigma^2 once; `run` executes
    the layer loop, optionally warm-starting from a cached intermediate
    state so finite-difference training only recomputes the layers a
    perturbed damping factor can actually influence.
    """

    def __init__(self, h_r, y_r, noise_var, prior_probs, constellation,
                 config):
        self.hth = np.einsum("bri,brj->bij", h_r, h_r) / noise_var
        self.hty = np.einsum("bri,br->bi", h_r, y_r) / noise_var
        self.probs = prior_probs
        self.constellation = constellation
        self.config = config
        self.batch, self.n_dims = self.hty.shape

    def initial_pair(self):
        cfg = self.config
        shape = (self.batch, self.n_dims)
        gamma = np.broadcast_to(np.asarray(cfg.init_gamma, dtype=float),
                                shape).copy()
        lam = np.broadcast_to(np.asarray(cfg.init_lambda, dtype=float),
                              shape).copy()
        if np.any(lam <= 0):
            raise ValueError("initial Lambda must be positive")
        return gamma, lam

    def run(self, betas_raw, start_layer=0, pair=None, record=True):
        """Run layers start_layer..L-1 from `pair` (init pair when None).

        Returns (x_ab, v_ab, records) where records is a list with one
        dict per executed layer; with record=False only the cavity means
        are kept (the training loss needs nothing else).
        """
        betas_raw = np.asarray(betas_raw, dtype=float)
        gamma, lam = self.initial_pair() if pair is None else pair
        eps = self.config.min_var
        out = []
        x_ab = v_ab = None
        for l in range(start_layer, betas_raw.size):
            mu, sigma_diag, _ = _global_moments_batch(self.hth, self.hty,
                                                      gamma, lam)
            x_ab, v_ab = cavity(mu, sigma_diag, gamma, lam, eps)
            x_b, v_b = discrete_moments(x_ab, v_ab, self.probs,
                                        self.constellation, eps)
            cand = refine_pair(gamma, lam, x_ab, v_ab, x_b, v_b)
            new_gamma, new_lam = damp((gamma, lam), cand, betas_raw[l])
            if record:
                out.append({
                    "mu": mu, "sigma_diag": sigma_diag, "x_ab": x_ab,
                    "v_ab": v_ab, "x_b": x_b, "v_b": v_b,
                    "gamma_in": gamma, "lam_in": lam,
                    "cand_gamma": cand[0], "cand_lam": cand[1],
                    "gamma_out": new_gamma, "lam_out": new_lam,
                })
            else:
                out.append({"x_ab": x_ab})
            gamma, lam = new_gamma, new_lam
        return x_ab, v_ab, out


def _epnet_core(h_r, y_r, noise_var, prior_probs, constellation, betas_raw,
                config):
    """Batched EPNet: h_r (B, 2Nr, 2Nt), y_r (B, 2Nr), priors (B, 2Nt, m).

    Returns (x_ab, v_ab, trace) where the extrinsic output is the cavity
    of the final layer, i.e. the moments the demapper consumes.
    """
    ws = EpWorkspace(h_r, y_r, noise_var, prior_probs, constellation, config)
    x_ab, v_ab, recs = ws.run(betas_raw)
    gamma0, lam0 = ws.initial_pair()
    trace = EpTrace(
        mu=np.stack([r["mu"] for r in recs]),
        sigma_diag=np.stack([r["sigma_diag"] for r in recs]),
        x_ab=np.stack([r["x_ab"] for r in recs]),
        v_ab=np.stack([r["v_ab"] for r in recs]),
        x_b=np.stack([r["x_b"] for r in recs]),
        v_b=np.stack([r["v_b"] for r in recs]),
        gamma=np.stack([gamma0] + [r["gamma_out"] for r in recs]),
        lam=np.stack([lam0] + [r["lam_out"] for r in recs]),
    )
    return x_ab, v_ab, trace


def epnet_detect(model, prior, schedule, config=None):
    """Run EPNet on one real-valued system.

    Returns (extrinsic mean, extrinsic variance, trace): the final-layer
    cavity moments per real dimension plus the layer-by-layer trace.
    """
    config = config or EpConfig(layers=schedule.layers)
    probs = prior.probs if isinstance(prior, SymbolPrior) else np.asarray(prior)
    c = model.constellation
    x, v, trace = _epnet_core(
        model.h_r[None], model.y_r[None], model.noise_var, probs[None], c,
        schedule.raw, config,
    )
    squeezed = EpTrace(**{k: getattr(trace, k)[:, 0] for k in vars(trace)})
    return x[0], v[0], squeezed


def mmse_detect(model, prior, config=None):
    """Linear MMSE detection as the depth-1 special case of EPNet.

    The extrinsic output is the first-layer cavity, so this shares every
    numerical step with `epnet_detect` at L = 1.
    """
    if config is None:
        config = EpConfig(layers=1)
    x, v, _ = epnet_detect(model, prior, DampingSchedule(np.zeros(1)), config)
    return x, v


def pair_from_prior(prior, min_var):
    """Gaussian site pair matching a prior's moments (stage feedback rule)."""
    var = np.maximum(prior.var if isinstance(prior, SymbolPrior) else prior[1],
                     min_var)
    mean = prior.mean if isinstance(prior, SymbolPrior) else prior[0]
    lam = 1.0 / var
    return mean * lam, lam


def _candidate_grid(constellation, n_dims):
    m = constellation.n_amplitudes
    if m**n_dims > 1 << 20:
        raise ValueError("ML enumeration too large for this instance")
    grids = np.meshgrid(*([constellation.amplitudes] * n_dims), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def ml_detect(model, constellation=None):
    """Exhaustive minimum-distance detection; guard M^Nt <= 2^20."""
    c = constellation or model.constellation
    cand = _candidate_grid(c, model.n_dims)
    resid = model.y_r[None, :] - cand @ model.h_r.T
    best = np.argmin(np.einsum("cr,cr->c", resid, resid))
    return cand[best]


def _ml_detect_batch(h_r, y_r, constellation):
    cand = _candidate_grid(constellation, h_r.shape[-1])
    n_cand, r = cand.shape[0], h_r.shape[1]
    # keep the (B_chunk, C, r) residual tensor near 1 GiB
    chunk = max(1, (1 << 27) // max(n_cand * r, 1))
    out = np.empty((h_r.shape[0], h_r.shape[-1]))
    for lo in range(0, h_r.shape[0], chunk):
        hi = min(lo + chunk, h_r.shape[0])
        proj = np.einsum("cn,brn->bcr", cand, h_r[lo:hi])
        resid = y_r[lo:hi, None, :] - proj
        best = np.argmin(np.einsum("bcr,bcr->bc", resid, resid), axis=1)
        out[lo:hi] = cand[best]
    return out


def bits_from_real_symbols(x_r, constellation):
    """Map hard real-amplitude decisions back to the Gray bit labels."""
    x_r = np.asarray(x_r)
    idx = np.argmin(np.abs(x_r[..., None] - constellation.amplitudes), axis=-1)
    labels = constellation.labels[idx]  # (..., 2n?, q) with [I..., Q...] dims
    n = x_r.shape[-1] // 2
    bits_i = labels[..., :n, :]
    bits_q = labels[..., n:, :]
    return np.concatenate([bits_i, bits_q], axis=-1).reshape(*x_r.shape[:-1], -1)


# ---------------------------------------------------------------------------
# damping table document


def damping_table_to_doc(effective):
    effective = np.atleast_2d(np.asarray(effective, dtype=float))
    if np.any((effective <= 0) | (effective >= 1)):
        raise ValueError("effective damping factors must lie in (0, 1)")
    entries = [
        {"stage": i + 1, "layer": l + 1, "damping": float(effective[i, l])}
        for i in range(effective.shape[0])
        for l in range(effective.shape[1])
    ]
    return {
        "schema": 1,
        "stages": effective.shape[0],
        "layers": effective.shape[1],
        "entries": entries,
    }


def damping_table_from_doc(doc):
    """Parse {stage, layer} -> effective damping entries into a raw array."""
    if doc.get("schema") != 1:
        raise ValueError("unsupported damping table schema")
    stages, layers = int(doc["stages"]), int(doc["layers"])
    eff = np.full((stages, layers), np.nan)
    for e in doc["entries"]:
        eff[e["stage"] - 1, e["layer"] - 1] = e["damping"]
    if np.any(np.isnan(eff)):
        raise ValueError("damping table is missing entries")
    if np.any((eff <= 0) | (eff >= 1)):
        raise ValueError("effective damping factors must lie in (0, 1)")
    return logit(eff)


def save_damping_table(path, effective):
    with open(path, "w") as fh:
        json.dump(damping_table_to_doc(effective), fh, indent=1)


def load_damping_table(path):
    with open(path) as fh:
        return damping_table_from_doc(json.load(fh))


# ---------------------------------------------------------------------------
# joint detection and decoding


@dataclass
class JddReceiver:
    """Unfolded turbo receiver: I detection/decoding stages sharing a codec.

    feedback_scale shrinks the decoder extrinsic LLRs before they become
    the next stage's prior.  Short frames recirculate decoder information
    through the demapper, and the unscaled loop measurably diverges after
    two stages on small arrays; 0.7 keeps the stage-to-stage BER monotone
    without costing peak performance.
    """

    codec: object
    constellation: object
    schedules: np.ndarray  # (I, L) raw damping parameters
    config: EpConfig = field(default_factory=EpConfig)
    decoder_iters: int = None
    feedback_scale: float = 0.7

    def __post_init__(self):
        self.schedules = np.atleast_2d(np.asarray(self.schedules, dtype=float))

    @property
    def n_stages(self):
        return self.schedules.shape[0]

    @property
    def layers(self):
        return self.schedules.shape[1]


@dataclass
class JddResult:
    bits_per_stage: np.ndarray  # (I, B, K)
    extrinsic_llrs: np.ndarray  # (I, B, V) decoder feedback per stage


def frame_geometry(codec, constellation, nt):
    """Symbols and blocks of one codeword frame, with filler count."""
    q2 = constellation.bits_per_symbol
    if codec.n_coded % q2:
        raise ValueError(
            f"codeword length {codec.n_coded} not divisible by Q={q2}"
        )
    n_sym = codec.n_coded // q2
    n_blocks = int(np.ceil(n_sym / nt))
    return n_sym, n_blocks, n_blocks * nt - n_sym


def jdd_receive_batch(h_r, y_r, receiver, noise_var=REAL_NOISE_VAR):
    """Run the I-stage turbo receiver over a batch of codeword frames.

    h_r is (B, P, 2Nr, 2Nt) with one channel per transmitted block and
    y_r is (B, P, 2Nr).  Filler symbols padding the last block carry no
    coded bits; their feedback prior stays uniform.
    """
    c = receiver.constellation
    codec = receiver.codec
    bsz, n_blocks = h_r.shape[0], h_r.shape[1]
    nt = h_r.shape[3] // 2
    n_sym, n_blocks_expect, _ = frame_geometry(codec, c, nt)
    if n_blocks != n_blocks_expect:
        raise ValueError("frame geometry mismatch")
    q2 = c.bits_per_symbol
    m = c.n_amplitudes
    n = 2 * nt
    flat_h = h_r.reshape(-1, *h_r.shape[2:])
    flat_y = y_r.reshape(-1, y_r.shape[-1])

    prior_probs = np.full((bsz * n_blocks, n, m), 1.0 / m)
    config = receiver.config
    init_gamma = np.full((bsz * n_blocks, n), float(config.init_gamma))
    init_lambda = np.full((bsz * n_blocks, n), float(config.init_lambda))

    bits_stages, ext_stages = [], []
    for stage in range(receiver.n_stages):
        cfg = EpConfig(
            layers=receiver.layers,
            min_var=config.min_var,
            init_gamma=init_gamma,
            init_lambda=init_lambda,
            damping_source=config.damping_source,
        )
        x_ab, v_ab, _ = _epnet_core(
            flat_h, flat_y, noise_var, prior_probs, c,
            receiver.schedules[stage], cfg,
        )
        llr = demap_llr(x_ab, v_ab, prior_probs, c)  # (B*P, nt, Q)
        llr_frame = llr.reshape(bsz, n_blocks * nt * q2)[:, : codec.n_coded]
        bits, _, ext = _decode_batch(
            llr_frame, codec, receiver.decoder_iters, want_feedback=True
        )
        bits_stages.append(bits)
        ext_stages.append(ext)

        if stage + 1 < receiver.n_stages:
            fb = np.zeros((bsz, n_blocks * nt * q2))
            fb[:, : codec.n_coded] = np.clip(
                receiver.feedback_scale * ext, -LLR_CLAMP, LLR_CLAMP
            )
            fb = fb.reshape(bsz * n_blocks, nt, q2)
            prior_probs = prior_probs_from_llr(fb, c)
            mean = prior_probs @ c.amplitudes
            var = prior_probs @ c.amplitudes**2 - mean**2
            var = np.maximum(var, config.min_var)
            init_lambda = 1.0 / var
            init_gamma = mean / var

    return JddResult(
        bits_per_stage=np.stack(bits_stages),
        extrinsic_llrs=np.stack(ext_stages),
    )


def jdd_receive(models, receiver):
    """Single-frame turbo receiver over the per-block models of one codeword."""
    h_r = np.stack([m.h_r for m in models])[None]
    y_r = np.stack([m.y_r for m in models])[None]
    noise_var = models[0].noise_var
    res = jdd_receive_batch(h_r, y_r, receiver, noise_var)
    return JddResult(
        bits_per_stage=res.bits_per_stage[:, 0],
        extrinsic_llrs=res.extrinsic_llrs[:, 0],
    )
