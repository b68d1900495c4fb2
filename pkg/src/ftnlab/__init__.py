"""Coded faster-than-Nyquist detection: SPDA, DL-SPDA, turbo equalization and BER bounds."""

from .channel import FtnChannel, IsiProfile, PulseSpec, build_gram, isi_taps, noise_variance, transmit, truncate_gram
from .cnn import CnnHyper, CnnModel, cnn_forward, complexity_report, init_params
from .coding import CcSpec, Interleaver, cc_bcjr_decode, cc_encode
from .spda import FgConfig, channel_llr, detect, edge_message
from .turbo import CodedFtnLink, TurboConfig, truncated_bcjr_detect, turbo_equalize

__version__ = "0.1.0"
