"""Minimal FITS reader/writer for raw HST-style multi-extension frames.

Only 2-D ``BITPIX = 16`` image extensions are decoded. Every other HDU is
kept as raw header cards plus data bytes so that files survive a
parse/write round trip unchanged.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

BLOCK = 2880
CARD = 80

_KEYWORD_RE = re.compile(r"^[A-Z0-9_-]{0,8}$")
_COMMENTARY = {"COMMENT", "HISTORY", ""}
# Cards regenerated from ImageHdu fields on write; never kept in ImageHdu.header.
_IMAGE_STRUCTURAL = {
    "XTENSION", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2", "PCOUNT", "GCOUNT",
    "BZERO", "BSCALE", "END",
}

CardValue = Union[str, int, float, bool, None]


class FitsError(ValueError):
    """Raised for malformed or unsupported FITS content."""


@dataclass
class FitsCard:
    keyword: str
    value: CardValue = None
    comment: str | None = None

    def __post_init__(self) -> None:
        if not _KEYWORD_RE.match(self.keyword):
            raise FitsError(f"invalid keyword {self.keyword!r}")

    def to_bytes(self) -> bytes:
        key = self.keyword.ljust(8)
        if self.keyword in _COMMENTARY:
            text = key + (self.comment or "")
        else:
            text = key + "= " + _format_value(self.value)
            if self.comment:
                text += " / " + self.comment
        if len(text) > CARD:
            raise FitsError(f"card for {self.keyword} exceeds 80 characters")
        try:
            return text.ljust(CARD).encode("ascii")
        except UnicodeEncodeError as exc:
            raise FitsError(f"non-ASCII content in card {self.keyword}") from exc

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FitsCard":
        if len(raw) != CARD:
            raise FitsError(f"card is {len(raw)} bytes, expected 80")
        text = raw.decode("ascii", errors="replace")
        keyword = text[:8].rstrip()
        if not _KEYWORD_RE.match(keyword):
            raise FitsError(f"malformed card keyword {text[:8]!r}")
        if keyword in _COMMENTARY or text[8:10] != "= ":
            rest = text[8:].rstrip()
            return cls(keyword, None, rest or None)
        value, comment = _parse_value(text[10:])
        return cls(keyword, value, comment)


def _format_value(value: CardValue) -> str:
    if value is None:
        return " " * 20
    if isinstance(value, bool):
        return ("T" if value else "F").rjust(20)
    if isinstance(value, (int, np.integer)):
        return str(int(value)).rjust(20)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise FitsError("non-finite real values are not representable")
        s = repr(v).upper()
        if "." not in s and "E" not in s:
            s += ".0"
        return s.rjust(20)
    if isinstance(value, str):
        quoted = "'" + value.replace("'", "''").ljust(8) + "'"
        return quoted.ljust(20)
    raise FitsError(f"unsupported card value type {type(value).__name__}")


def _parse_value(field_text: str) -> tuple[CardValue, str | None]:
    s = field_text.lstrip()
    if s.startswith("'"):
        # Quoted string; '' is an escaped quote.
        i = 1
        chars = []
        while i < len(s):
            if s[i] == "'":
                if i + 1 < len(s) and s[i + 1] == "'":
                    chars.append("'")
                    i += 2
                    continue
                break
            chars.append(s[i])
            i += 1
        else:
            raise FitsError("unterminated string value")
        value: CardValue = "".join(chars).rstrip()
        rest = s[i + 1:]
    else:
        head, sep, tail = s.partition("/")
        token = head.strip()
        rest = sep + tail
        if token == "":
            value = None
        elif token == "T":
            value = True
        elif token == "F":
            value = False
        else:
            try:
                value = int(token)
            except ValueError:
                try:
                    value = float(token.replace("D", "E"))
                except ValueError as exc:
                    raise FitsError(f"unparseable value {token!r}") from exc
    rest = rest.strip()
    comment = rest[1:].strip() if rest.startswith("/") else None
    return value, comment or None


@dataclass
class RawHdu:
    """An HDU kept opaque: header cards verbatim and unpadded data bytes."""

    header: list[FitsCard]
    data: bytes = b""

    def get(self, keyword: str, default: CardValue = None) -> CardValue:
        return _lookup(self.header, keyword, default)


@dataclass
class ImageHdu:
    """A decoded 16-bit 2-D image extension.

    ``pixels`` holds physical values, ``bzero + bscale * stored``, as a
    ``(height, width)`` float64 array. ``header`` carries only the
    non-structural cards; structural ones are regenerated on write.
    """

    pixels: np.ndarray
    header: list[FitsCard] = field(default_factory=list)
    bzero: float = 0.0
    bscale: float = 1.0
    bitpix: int = 16

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def get(self, keyword: str, default: CardValue = None) -> CardValue:
        return _lookup(self.header, keyword, default)


@dataclass
class FitsFile:
    primary: RawHdu
    extensions: list[ImageHdu | RawHdu] = field(default_factory=list)

    def hdu(self, index: int) -> ImageHdu | RawHdu:
        if index == 0:
            return self.primary
        if not 1 <= index <= len(self.extensions):
            raise FitsError(
                f"HDU index {index} out of range (file has {len(self.extensions) + 1} HDUs)"
            )
        return self.extensions[index - 1]


def _lookup(cards: list[FitsCard], keyword: str, default: CardValue) -> CardValue:
    for card in cards:
        if card.keyword == keyword:
            return card.value
    return default


def primary_header(extra: list[FitsCard] | None = None) -> RawHdu:
    """Build a data-less primary HDU with the mandatory cards."""
    cards = [
        FitsCard("SIMPLE", True, "conforms to FITS standard"),
        FitsCard("BITPIX", 8),
        FitsCard("NAXIS", 0),
        FitsCard("EXTEND", True),
    ]
    return RawHdu(cards + list(extra or []))


# ---------------------------------------------------------------- reading


def _read_header(buf: bytes, offset: int) -> tuple[list[FitsCard], int]:
    cards = []
    pos = offset
    while True:
        if pos + BLOCK > len(buf):
            raise FitsError(f"header at byte {offset} has no END card")
        block = buf[pos:pos + BLOCK]
        pos += BLOCK
        for i in range(0, BLOCK, CARD):
            raw = block[i:i + CARD]
            if raw[:8] == b"END     ":
                return cards, pos
            if raw.strip(b" ") == b"":
                continue
            cards.append(FitsCard.from_bytes(raw))


def _data_size(cards: list[FitsCard]) -> int:
    naxis = _lookup(cards, "NAXIS", 0)
    if not isinstance(naxis, int) or naxis < 0:
        raise FitsError("missing or invalid NAXIS")
    if naxis == 0:
        return 0
    bitpix = _lookup(cards, "BITPIX", None)
    if not isinstance(bitpix, int):
        raise FitsError("missing BITPIX")
    count = 1
    for i in range(1, naxis + 1):
        n = _lookup(cards, f"NAXIS{i}", None)
        if not isinstance(n, int) or n < 0:
            raise FitsError(f"missing or invalid NAXIS{i}")
        count *= n
    pcount = _lookup(cards, "PCOUNT", 0) or 0
    gcount = _lookup(cards, "GCOUNT", 1) or 1
    return abs(bitpix) // 8 * gcount * (pcount + count)


def _is_decodable_image(cards: list[FitsCard]) -> bool:
    return (
        _lookup(cards, "XTENSION", None) == "IMAGE"
        and _lookup(cards, "NAXIS", 0) == 2
        and _lookup(cards, "BITPIX", None) == 16
    )


def _decode_image(cards: list[FitsCard], data: bytes) -> ImageHdu:
    width = _lookup(cards, "NAXIS1", None)
    height = _lookup(cards, "NAXIS2", None)
    bzero = float(_lookup(cards, "BZERO", 0.0) or 0.0)
    bscale = float(_lookup(cards, "BSCALE", 1.0) or 1.0)
    stored = np.frombuffer(data, dtype=">i2").reshape(height, width)
    pixels = stored.astype(np.float64) * bscale + bzero
    extra = [c for c in cards if c.keyword not in _IMAGE_STRUCTURAL]
    return ImageHdu(pixels=pixels, header=extra, bzero=bzero, bscale=bscale)


def parse_fits(buf: bytes) -> FitsFile:
    """Parse a whole FITS file held in memory."""
    buf = bytes(buf)
    if len(buf) == 0 or len(buf) % BLOCK:
        raise FitsError(f"file length {len(buf)} is not a positive multiple of 2880")
    if not buf.startswith(b"SIMPLE  ="):
        raise FitsError("first card is not SIMPLE")
    hdus: list[ImageHdu | RawHdu] = []
    offset = 0
    while offset < len(buf):
        cards, data_start = _read_header(buf, offset)
        size = _data_size(cards)
        padded = math.ceil(size / BLOCK) * BLOCK
        if data_start + padded > len(buf):
            raise FitsError(f"data block of HDU {len(hdus)} is truncated")
        data = buf[data_start:data_start + size]
        offset = data_start + padded
        if hdus and _is_decodable_image(cards):
            hdus.append(_decode_image(cards, data))
        else:
            hdus.append(RawHdu(cards, data))
    if _lookup(hdus[0].header, "SIMPLE", None) is not True:
        raise FitsError("primary header must have SIMPLE = T")
    return FitsFile(primary=hdus[0], extensions=hdus[1:])


def read_fits(path) -> FitsFile:
    with open(path, "rb") as fh:
        return parse_fits(fh.read())


def extract_image(fits: FitsFile, hdu_index: int) -> ImageHdu:
    """Return the decoded image stored at ``hdu_index`` (0 = primary)."""
    hdu = fits.hdu(hdu_index)
    if isinstance(hdu, ImageHdu):
        return hdu
    if hdu_index == 0:
        raise FitsError("HDU 0 is the primary header and holds no image data")
    bitpix = hdu.get("BITPIX")
    naxis = hdu.get("NAXIS")
    raise FitsError(
        f"HDU {hdu_index} is not a 2-D 16-bit image (XTENSION={hdu.get('XTENSION')!r}, "
        f"BITPIX={bitpix}, NAXIS={naxis})"
    )


# ---------------------------------------------------------------- writing


def _pad(data: bytes, fill: bytes) -> bytes:
    rem = len(data) % BLOCK
    return data if rem == 0 else data + fill * (BLOCK - rem)


def _header_bytes(cards: list[FitsCard]) -> bytes:
    body = b"".join(c.to_bytes() for c in cards) + b"END".ljust(CARD)
    return _pad(body, b" ")


def _image_cards(hdu: ImageHdu) -> list[FitsCard]:
    if hdu.bitpix != 16:
        raise FitsError(f"only BITPIX=16 images can be written, got {hdu.bitpix}")
    if hdu.pixels.ndim != 2:
        raise FitsError("image pixels must be 2-D")
    cards = [
        FitsCard("XTENSION", "IMAGE", "image extension"),
        FitsCard("BITPIX", 16),
        FitsCard("NAXIS", 2),
        FitsCard("NAXIS1", hdu.width),
        FitsCard("NAXIS2", hdu.height),
        FitsCard("PCOUNT", 0),
        FitsCard("GCOUNT", 1),
        FitsCard("BZERO", float(hdu.bzero)),
        FitsCard("BSCALE", float(hdu.bscale)),
    ]
    return cards + list(hdu.header)


def encode_pixels(hdu: ImageHdu) -> bytes:
    """Inverse-scale physical values to big-endian int16 bytes."""
    stored = np.rint((np.asarray(hdu.pixels, dtype=np.float64) - hdu.bzero) / hdu.bscale)
    if stored.size and (stored.min() < -32768 or stored.max() > 32767):
        raise FitsError(
            f"physical values [{hdu.pixels.min()}, {hdu.pixels.max()}] exceed the 16-bit "
            f"range under BZERO={hdu.bzero}, BSCALE={hdu.bscale}"
        )
    return stored.astype(">i2").tobytes()


def write_fits(fits: FitsFile) -> bytes:
    """Serialize to standard 2880-byte records."""
    parts = [_header_bytes(fits.primary.header), _pad(fits.primary.data, b"\0")]
    for hdu in fits.extensions:
        if isinstance(hdu, ImageHdu):
            parts.append(_header_bytes(_image_cards(hdu)))
            parts.append(_pad(encode_pixels(hdu), b"\0"))
        else:
            parts.append(_header_bytes(hdu.header))
            parts.append(_pad(hdu.data, b"\0"))
    return b"".join(parts)


def save_fits(fits: FitsFile, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_fits(fits))
