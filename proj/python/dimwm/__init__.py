"""Video watermarking with bit, 2D and 3D payloads."""

from ._dimwm import (
    CapacityExceeded,
    ConfigError,
    EnvironmentError,
    Model,
    NumericalError,
    attack,
    bit_accuracy,
    build_codebook,
    codec_available,
    encode_multichannel,
    evaluate,
    fuse,
    generate_mask,
    generate_mask_sequence,
    iou,
    load_clip,
    load_mask,
    message_from_hex,
    message_to_hex,
    presets,
    psnr,
    run_cli,
    sample_message,
    save_clip,
    save_mask,
    shift_mask,
    ssim,
    synthetic_clip,
)

__all__ = [name for name in dir() if not name.startswith("_")]
