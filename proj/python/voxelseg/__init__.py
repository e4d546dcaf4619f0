"""Volumetric segmentation toolkit: NIfTI I/O, reorientation, normalization,
patch sampling and stitching, overlap losses and a residual 3-D encoder-decoder.

Volumes are exposed as ``Volume`` objects whose ``data`` is an ``(e0, e1, e2)``
float64 array indexed ``[i, j, k]`` in NIfTI voxel order.
"""

from ._voxelseg import (
    Model,
    Volume,
    VoxelsegError,
    clip_rescale,
    counts,
    exit_codes,
    grid_tiles,
    load,
    normalize_label,
    orientation_of,
    phantom,
    predict,
    read_nifti,
    reorient,
    sample_patches,
    save,
    scores,
    soft_loss,
    stitch,
    train,
    write_nifti,
    zscore,
)

__all__ = [
    "Model",
    "Volume",
    "VoxelsegError",
    "clip_rescale",
    "counts",
    "exit_codes",
    "grid_tiles",
    "load",
    "normalize_label",
    "orientation_of",
    "phantom",
    "predict",
    "read_nifti",
    "reorient",
    "sample_patches",
    "save",
    "scores",
    "soft_loss",
    "stitch",
    "train",
    "write_nifti",
    "zscore",
]
