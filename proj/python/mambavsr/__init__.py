from ._core import (
    ModelConfig,
    ModelWeights,
    bicubic_resize,
    charbonnier,
    compass_order,
    desequentialize,
    fiedler,
    forward,
    interleave,
    patch_align,
    psnr,
    scan,
    scan_chunked,
    ssim,
)

__all__ = [
    "ModelConfig",
    "ModelWeights",
    "bicubic_resize",
    "charbonnier",
    "compass_order",
    "desequentialize",
    "fiedler",
    "forward",
    "interleave",
    "patch_align",
    "psnr",
    "scan",
    "scan_chunked",
    "ssim",
]
