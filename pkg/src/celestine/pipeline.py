"""Glue between FITS frames, cropping and the synthetic generators."""

from __future__ import annotations

import numpy as np

from .dataset import (CATEGORIES, ExposureConfig, ManifestEntry, SceneTemplate,
                      default_throughput, synthesize_sample)
from .fits_io import FitsFile, extract_image, parse_fits, save_fits
from .fixtures import SCIENCE_HDUS, make_raw_file, raw_frame
from .preprocess import (Chip, GeometryError, Instrument, chip_for, crop,
                         resize_bilinear, to_float_normalized)

# HST raw files put chip 2 in the first science extension and chip 1 in the fourth.
_CHIP_BY_HDU = {1: 2, 4: 1}


def chip_of(fits: FitsFile, hdu_index: int, instrument: Instrument | str) -> Chip:
    """Chip of a science extension, from CCDCHIP or else the HST extension order."""
    image = extract_image(fits, hdu_index)
    ccdchip = image.get("CCDCHIP")
    if ccdchip is None:
        ccdchip = _CHIP_BY_HDU.get(hdu_index)
        if ccdchip is None:
            raise GeometryError(f"HDU {hdu_index} has no CCDCHIP card and is not HDU 1 or 4")
    return chip_for(instrument, int(ccdchip))


def crop_frame(buf: bytes, hdu_index: int, instrument: Instrument | str) -> np.ndarray:
    """Raw FITS bytes to the 2048x4096 CCD image of one science extension."""
    fits = parse_fits(buf)
    chip = chip_of(fits, hdu_index, instrument)
    return crop(extract_image(fits, hdu_index), chip)


def network_input(ccd: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Resize (if needed) and scale a cropped frame to a 1 x C x H x W float32 batch."""
    _, h, w = shape
    img = ccd if ccd.shape == (h, w) else resize_bilinear(ccd, h, w)
    img = to_float_normalized(np.clip(img, 0, 65535))
    return img.astype(np.float32)[None, None]


def synth_raw_file(instrument: Instrument | str, category: str, seed: int,
                   t: float = 2000.0, a_eff: float = 4.5, bias: float = 500.0) -> tuple[FitsFile, dict]:
    """A raw frame whose two science chips hold synthetic scenes of one body.

    Returns the file and the embedded 2048x4096 science grids (DN, bias
    pedestal included) keyed by HDU index; cropping must recover them exactly.
    """
    if category not in CATEGORIES:
        raise ValueError(f"category must be one of {CATEGORIES}")
    instrument = Instrument(instrument)
    rng = np.random.default_rng(seed)
    model = default_throughput()
    chips, science = {}, {}
    for ccdchip, hdu in SCIENCE_HDUS.items():
        template = SceneTemplate(kind=category, scale=float(rng.uniform(0.08, 0.2)),
                                 axis_ratio=float(rng.uniform(0.3, 0.9)),
                                 angle=float(rng.uniform(0, np.pi)))
        exposure = ExposureConfig(t=t, a_eff=a_eff, gain=1.0, read_noise_sigma=3.0, sky_level=20.0)
        sample = synthesize_sample(template, exposure, model, seed=int(rng.integers(2**31)))
        px = np.clip(sample.pixels + bias, 0, 65535)
        chip = chip_for(instrument, ccdchip)
        chips[ccdchip] = raw_frame(chip, "science", science=px, overscan=bias)
        science[hdu] = px
    return make_raw_file(instrument, chips), science


def write_synth_frame(path, instrument, category, seed, **kw) -> None:
    fits, _ = synth_raw_file(instrument, category, seed, **kw)
    save_fits(fits, path)


def manifest_entries_for(path: str, body_id: str, category: str, instrument: Instrument | str,
                         obsid: str, filt: str = "F606W") -> list[ManifestEntry]:
    instrument = Instrument(instrument)
    return [ManifestEntry(body_id, category, instrument, obsid, filt, 0.0, 0.0, hdu, path)
            for hdu in (1, 4)]

