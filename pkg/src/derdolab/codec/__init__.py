"""Toy block-based hybrid codec (prediction, DCT, quantization, exp-Golomb)."""

from .bitstream import (
    Bitstream,
    BitReader,
    BitWriter,
    DecodeError,
    StreamHeader,
    decode_se,
    decode_ue,
    encode_se,
    encode_ue,
    ue_length,
)
from .decoder import DecodeResult, decode_sequence, time_decode
from .encoder import EncodeResult, EncoderConfig, FrameStats, ModeCandidate, encode_sequence
from .transform import dct2d, half_pel_predict, qstep_quantize, zigzag
