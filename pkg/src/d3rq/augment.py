"""Random-shift augmentation for pixel observations.

Images are (C, H, W) float arrays in [0, 1]; batches add a leading axis.
Each image gets one continuous (dx, dy) shift, shared by all its channels.
"""

import numpy as np

from . import kernels

DEFAULT_PAD = 4


def pad_replicate(img, pad: int):
    """Edge-replicate ``pad`` pixels on both spatial borders."""
    if pad < 0:
        raise ValueError("pad must be nonnegative")
    img = np.asarray(img)
    widths = [(0, 0)] * (img.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(img, widths, mode="edge")


def sample_shifts(rng, count: int, pad: int = DEFAULT_PAD):
    """Draw (dx, dy) pairs uniformly from [-pad, pad]^2."""
    return rng.uniform(-pad, pad, size=(count, 2))


def shift_batch(batch, shifts, pad: int = DEFAULT_PAD):
    """Apply given per-image shifts to a (B, C, H, W) batch."""
    batch = np.asarray(batch)
    shifts = np.asarray(shifts, dtype=np.float64).reshape(-1, 2)
    if len(shifts) != len(batch):
        raise ValueError("need one shift per image")
    if np.any(np.abs(shifts) > pad):
        raise ValueError(f"shifts must lie in [-{pad}, {pad}]")
    h, w = batch.shape[-2:]
    return kernels.shift_crop(pad_replicate(batch, pad), shifts, h, w)


def random_shift(img, pad: int = DEFAULT_PAD, rng=None, shift=None):
    """Shift one (C, H, W) image by a random sub-pixel offset.

    ``shift`` forces a specific (dx, dy) instead of sampling from ``rng``.
    """
    img = np.asarray(img)
    if img.shape[-1] != img.shape[-2]:
        raise ValueError(f"random_shift expects square images, got {img.shape[-2:]}")
    if shift is None:
        if rng is None:
            raise ValueError("either rng or shift is required")
        shift = sample_shifts(rng, 1, pad)
    return shift_batch(img[None], shift, pad)[0]


def augment_batch(batch, rng, pad: int = DEFAULT_PAD):
    """Independently shift every image in a (B, C, H, W) batch."""
    batch = np.asarray(batch)
    return shift_batch(batch, sample_shifts(rng, len(batch), pad), pad)
