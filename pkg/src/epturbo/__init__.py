"""Unfolded MIMO turbo receiver with EP detection and meta-learned damping."""

from .channel import (
    ComplexChannel,
    RealChannelModel,
    SnrSpec,
    sample_correlated,
    sample_rayleigh,
    to_real,
    transmit,
)
from .epdetect import (
    DampingSchedule,
    EpConfig,
    FactorizationError,
    JddReceiver,
    epnet_detect,
    jdd_receive,
    load_damping_table,
    ml_detect,
    mmse_detect,
    save_damping_table,
)
from .modem import (
    Constellation,
    SymbolPrior,
    demap_llr,
    llr_to_prior,
    map_bits,
    uniform_prior,
)
from .turbocode import (
    ScaledDecoderWeights,
    Trellis,
    TurboCodec,
    bcjr,
    encode,
    fit_scaled_weights,
    turbo_decode,
)

__version__ = "0.1.0"
