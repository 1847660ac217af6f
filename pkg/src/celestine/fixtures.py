"""Synthetic raw frames laid out like HST ACS/WFC and WFC3/UVIS files.

Extension order follows the HST raw-file convention: HDU 1 carries chip 2
(WFC2/UVIS2) and HDU 4 carries chip 1 (WFC1/UVIS1), each followed by two
empty placeholder extensions. Every science extension records its chip in
a ``CCDCHIP`` card.
"""

from __future__ import annotations

import numpy as np

from .fits_io import FitsCard, FitsFile, ImageHdu, RawHdu, primary_header
from .preprocess import CCD_COLS, CCD_ROWS, CHIPS, GEOMETRY, Chip, Instrument

SENTINEL = -999.0
SCIENCE_HDUS = {2: 1, 1: 4}  # CCDCHIP -> HDU index


def science_mask(chip: Chip | str) -> np.ndarray:
    """Boolean raw-frame mask, True on pixels that survive cropping."""
    geo = GEOMETRY[Chip(chip)]
    mask = np.zeros((geo.raw_height, geo.raw_width), dtype=bool)
    rows = geo.kept_rows
    for a, b in geo.column_ranges:
        mask[rows, a:b] = True
    return mask


def raw_frame(chip: Chip | str, fill: str = "sentinel", science: np.ndarray | None = None,
              overscan: float = SENTINEL, value: float = 7.0) -> np.ndarray:
    """Raw pixel grid for one chip.

    ``fill`` selects the pattern: ``"sentinel"`` (overscan = ``overscan``,
    science = ``value``), ``"row_ramp"``/``"col_ramp"`` (pixel = its raw row
    or column index), or ``"science"`` to embed a 2048x4096 ``science``
    array with constant ``overscan`` around it.
    """
    geo = GEOMETRY[Chip(chip)]
    shape = (geo.raw_height, geo.raw_width)
    if fill == "row_ramp":
        return np.broadcast_to(np.arange(shape[0], dtype=np.float64)[:, None], shape).copy()
    if fill == "col_ramp":
        return np.broadcast_to(np.arange(shape[1], dtype=np.float64)[None, :], shape).copy()
    px = np.full(shape, overscan, dtype=np.float64)
    mask = science_mask(chip)
    if fill == "sentinel":
        px[mask] = value
    elif fill == "science":
        if science is None or science.shape != (CCD_ROWS, CCD_COLS):
            raise ValueError("fill='science' needs a 2048x4096 science array")
        rows = geo.kept_rows
        col = 0
        for a, b in geo.column_ranges:
            px[rows, a:b] = science[:, col:col + (b - a)]
            col += b - a
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return px


def _placeholder(extname: str, ver: int) -> RawHdu:
    return RawHdu([
        FitsCard("XTENSION", "IMAGE", "image extension"),
        FitsCard("BITPIX", 16),
        FitsCard("NAXIS", 0),
        FitsCard("PCOUNT", 0),
        FitsCard("GCOUNT", 1),
        FitsCard("EXTNAME", extname),
        FitsCard("EXTVER", ver),
    ])


def make_raw_file(instrument: Instrument | str, chips: dict[int, np.ndarray],
                  bzero: float = 32768.0, extra_primary: list[FitsCard] | None = None) -> FitsFile:
    """Assemble a six-extension raw file from per-CCDCHIP pixel grids.

    ``chips`` maps CCDCHIP (1 or 2) to a raw grid; missing chips are filled
    with the sentinel pattern.
    """
    instrument = Instrument(instrument)
    detector = "WFC" if instrument is Instrument.ACS_WFC else "UVIS"
    primary = primary_header([
        FitsCard("TELESCOP", "HST"),
        FitsCard("INSTRUME", "ACS" if instrument is Instrument.ACS_WFC else "WFC3"),
        FitsCard("DETECTOR", detector),
    ] + list(extra_primary or []))
    extensions: list[ImageHdu | RawHdu] = []
    for ver, ccdchip in enumerate((2, 1), start=1):
        chip = CHIPS[instrument][ccdchip - 1]
        px = chips.get(ccdchip)
        if px is None:
            px = raw_frame(chip, "sentinel", overscan=100.0, value=200.0)
        extensions.append(ImageHdu(
            pixels=np.asarray(px, dtype=np.float64),
            header=[
                FitsCard("EXTNAME", "SCI"),
                FitsCard("EXTVER", ver),
                FitsCard("CCDCHIP", ccdchip),
            ],
            bzero=bzero,
        ))
        extensions.append(_placeholder("ERR", ver))
        extensions.append(_placeholder("DQ", ver))
    return FitsFile(primary=primary, extensions=extensions)
