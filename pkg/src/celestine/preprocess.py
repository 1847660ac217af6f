"""Raw-frame cropping to uniform 2048x4096 CCD images, resizing and scaling.

Array convention: row 0 is the top of the frame, so the "bottom" of a
chip is its highest row indices. All index ranges are 0-based half-open.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fits_io import ImageHdu

CCD_ROWS = 2048
CCD_COLS = 4096
RESIZE_ROWS = 224
RESIZE_COLS = 448
ADC_MAX = 65535.0


class Instrument(str, Enum):
    ACS_WFC = "ACS_WFC"
    WFC3_UVIS = "WFC3_UVIS"


class Chip(str, Enum):
    WFC1 = "WFC1"
    WFC2 = "WFC2"
    UVIS1 = "UVIS1"
    UVIS2 = "UVIS2"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorGeometry:
    instrument: Instrument
    chip: Chip
    raw_width: int
    raw_height: int
    prescan_cols: int
    virtual_overscan_rows: int
    virtual_overscan_position: str  # "top" or "bottom"
    mid_overscan_cols: int = 0
    trim_rows: int = 0

    @property
    def kept_rows(self) -> slice:
        cut = self.virtual_overscan_rows + self.trim_rows
        if self.virtual_overscan_position == "bottom":
            return slice(0, self.raw_height - cut)
        return slice(cut, self.raw_height)

    @property
    def column_ranges(self) -> list[tuple[int, int]]:
        lo = self.prescan_cols
        hi = self.raw_width - self.prescan_cols
        if self.mid_overscan_cols == 0:
            return [(lo, hi)]
        half = (hi - lo - self.mid_overscan_cols) // 2
        return [(lo, lo + half), (lo + half + self.mid_overscan_cols, hi)]


GEOMETRY: dict[Chip, DetectorGeometry] = {
    Chip.WFC1: DetectorGeometry(Instrument.ACS_WFC, Chip.WFC1, 4144, 2068, 24, 20, "bottom"),
    Chip.WFC2: DetectorGeometry(Instrument.ACS_WFC, Chip.WFC2, 4144, 2068, 24, 20, "top"),
    Chip.UVIS1: DetectorGeometry(Instrument.WFC3_UVIS, Chip.UVIS1, 4206, 2070, 25, 19, "bottom", 60, 3),
    Chip.UVIS2: DetectorGeometry(Instrument.WFC3_UVIS, Chip.UVIS2, 4206, 2070, 25, 19, "top", 60, 3),
}

CHIPS = {
    Instrument.ACS_WFC: (Chip.WFC1, Chip.WFC2),
    Instrument.WFC3_UVIS: (Chip.UVIS1, Chip.UVIS2),
}


def chip_for(instrument: Instrument | str, ccdchip: int) -> Chip:
    """Map an instrument and a CCDCHIP header value (1 or 2) to a chip."""
    instrument = Instrument(instrument)
    if ccdchip not in (1, 2):
        raise GeometryError(f"CCDCHIP must be 1 or 2, got {ccdchip}")
    return CHIPS[instrument][ccdchip - 1]


def _pixels(raw: ImageHdu | np.ndarray) -> np.ndarray:
    return raw.pixels if isinstance(raw, ImageHdu) else np.asarray(raw)


def crop(raw: ImageHdu | np.ndarray, chip: Chip | str) -> np.ndarray:
    """Drop prescan/overscan regions of ``chip`` and return a 2048x4096 grid."""
    geo = GEOMETRY[Chip(chip)]
    px = _pixels(raw)
    if px.shape != (geo.raw_height, geo.raw_width):
        raise GeometryError(
            f"{geo.chip.value} raw frame must be {geo.raw_width}x{geo.raw_height} (w x h), "
            f"got {px.shape[1]}x{px.shape[0]}"
        )
    rows = px[geo.kept_rows]
    out = np.concatenate([rows[:, a:b] for a, b in geo.column_ranges], axis=1)
    assert out.shape == (CCD_ROWS, CCD_COLS)
    return out


def crop_acs_wfc(raw: ImageHdu | np.ndarray, chip: Chip | str) -> np.ndarray:
    chip = Chip(chip)
    if chip not in CHIPS[Instrument.ACS_WFC]:
        raise GeometryError(f"{chip.value} is not an ACS/WFC chip")
    return crop(raw, chip)


def crop_wfc3_uvis(raw: ImageHdu | np.ndarray, chip: Chip | str) -> np.ndarray:
    chip = Chip(chip)
    if chip not in CHIPS[Instrument.WFC3_UVIS]:
        raise GeometryError(f"{chip.value} is not a WFC3/UVIS chip")
    return crop(raw, chip)


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center sampling, clamped at the edges."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    r0, r1, fr = _axis_weights(img.shape[0], out_h)
    c0, c1, fc = _axis_weights(img.shape[1], out_w)
    rows = img[r0] * (1.0 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def to_float_normalized(img: np.ndarray) -> np.ndarray:
    """Scale 16-bit data numbers to [0, 1]."""
    img = np.asarray(img)
    if img.size and (img.min() < 0 or img.max() > ADC_MAX):
        raise ValueError(
            f"pixel values must lie in [0, 65535], got [{img.min()}, {img.max()}]; clip first"
        )
    return img / ADC_MAX
