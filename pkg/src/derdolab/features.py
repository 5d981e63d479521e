"""Bit-stream feature ids shared by the codec and the energy model.

The order of ``FEATURES`` is the column order used everywhere a feature
vector is stored as an array (kernels, CSV files, least-squares designs).
"""

MAX_DEPTH = 2  # 16x16 -> 8x8 -> 4x4

FEATURES = (
    "offset",
    "frame_intra",
    "frame_inter",
    "intra_blk_d0",
    "intra_blk_d1",
    "intra_blk_d2",
    "skip_blk_d0",
    "skip_blk_d1",
    "skip_blk_d2",
    "inter_blk_d0",
    "inter_blk_d1",
    "inter_blk_d2",
    "fracpel",
    "coeffs",
    "val",
    "trans_d0",
    "trans_d1",
    "trans_d2",
)
N_FEATURES = len(FEATURES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}

F_OFFSET = 0
F_FRAME_INTRA = 1
F_FRAME_INTER = 2
F_INTRA_BLK = 3  # + depth
F_SKIP_BLK = 6  # + depth
F_INTER_BLK = 9  # + depth
F_FRACPEL = 12
F_COEFFS = 13
F_VAL = 14
F_TRANS = 15  # + depth

MODE_SKIP = 0
MODE_INTER = 1
MODE_DC = 2
MODE_H = 3
MODE_V = 4
MODE_NAMES = ("SKIP", "INTER", "INTRA_DC", "INTRA_H", "INTRA_V")
INTRA_MODES = (MODE_DC, MODE_H, MODE_V)


def block_feature(mode: int, depth: int) -> int:
    """Feature id of the block-type feature for a leaf of ``mode`` at ``depth``."""
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"unknown depth {depth}")
    if mode == MODE_SKIP:
        return F_SKIP_BLK + depth
    if mode == MODE_INTER:
        return F_INTER_BLK + depth
    if mode in INTRA_MODES:
        return F_INTRA_BLK + depth
    raise ValueError(f"unknown mode {mode}")
