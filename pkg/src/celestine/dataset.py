"""Manifests, leakage-free splitting and synthetic exposures.

The SED convention used by :func:`electron_flux` is spectral flux density
per unit wavelength, S in W m^-2 m^-1 with wavelengths in metres, so that
``S * lambda / (h c)`` is a photon rate per m^2 per metre of wavelength.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import shutil
import urllib.parse
import urllib.request
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import ADC_MAX, CCD_COLS, CCD_ROWS, Instrument

log = logging.getLogger(__name__)

PLANCK = 6.62607015e-34  # J s
LIGHT_SPEED = 2.99792458e8  # m / s

CATEGORIES = ("galaxy", "nsc")
LABELS = {"galaxy": 0, "nsc": 1}
MANIFEST_FIELDS = ["body_id", "category", "instrument", "obsid", "filter",
                   "ra_deg", "dec_deg", "hdu_index", "path"]

# Body and sample bookkeeping of the published LCID split (reference only).
LCID_REFERENCE = {
    "bodies": {"galaxy": 48, "nsc": 23, "total": 71},
    "train_samples": {"galaxy": 3310, "nsc": 2908, "total": 6218},
    "test_samples": {"galaxy": 852, "nsc": 743, "total": 1595},
    "total_samples": {"galaxy": 4162, "nsc": 3651, "total": 7813},
}


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    body_id: str
    category: str
    instrument: Instrument
    obsid: str
    filter: str
    ra_deg: float
    dec_deg: float
    hdu_index: int
    path: str
    sha256: str | None = None

    def __post_init__(self) -> None:
        self.instrument = Instrument(self.instrument)

    @property
    def label(self) -> int:
        return LABELS[self.category]

    def row(self) -> dict:
        d = asdict(self)
        d["instrument"] = self.instrument.value
        if d["sha256"] is None:
            del d["sha256"]
        return d


def _check_categories(entries: list[ManifestEntry]) -> None:
    seen: dict[str, str] = {}
    for e in entries:
        prev = seen.setdefault(e.body_id, e.category)
        if prev != e.category:
            raise ManifestError(
                f"body {e.body_id!r} appears as both {prev!r} and {e.category!r}"
            )


def _parse_row(row: dict, lineno: int) -> ManifestEntry:
    try:
        body = row["body_id"].strip()
        category = row["category"].strip()
        if not body:
            raise ManifestError("empty body_id")
        if category not in LABELS:
            raise ManifestError(f"category must be galaxy or nsc, got {category!r}")
        hdu = int(row["hdu_index"])
        if hdu < 1:
            raise ManifestError(f"hdu_index must be >= 1, got {hdu}")
        return ManifestEntry(
            body_id=body,
            category=category,
            instrument=Instrument(row["instrument"].strip()),
            obsid=row["obsid"].strip(),
            filter=row["filter"].strip(),
            ra_deg=float(row["ra_deg"]),
            dec_deg=float(row["dec_deg"]),
            hdu_index=hdu,
            path=row["path"].strip(),
            sha256=(row.get("sha256") or "").strip().lower() or None,
        )
    except ManifestError as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"line {lineno}: {exc}") from None


def load_manifest(path) -> list[ManifestEntry]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [f for f in MANIFEST_FIELDS if f not in header]
        extra = [f for f in header if f not in MANIFEST_FIELDS + ["sha256"]]
        if missing or extra:
            raise ManifestError(f"bad manifest header: missing={missing} unexpected={extra}")
        entries = [_parse_row(row, i) for i, row in enumerate(reader, start=2)]
    _check_categories(entries)
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    fields = list(MANIFEST_FIELDS)
    if any(e.sha256 for e in entries):
        fields.append("sha256")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for e in entries:
            writer.writerow(e.row())


# ---------------------------------------------------------------- splitting


@dataclass
class SplitResult:
    train: list[ManifestEntry]
    test: list[ManifestEntry]
    seed: int
    ratio: float = 0.8

    def summary(self) -> dict:
        out: dict = {"seed": self.seed, "ratio": self.ratio}
        for name, part in (("train", self.train), ("test", self.test)):
            bodies = {c: len({e.body_id for e in part if e.category == c}) for c in CATEGORIES}
            samples = Counter(e.category for e in part)
            out[name] = {
                "bodies": {**bodies, "total": sum(bodies.values())},
                "samples": {**{c: samples[c] for c in CATEGORIES}, "total": len(part)},
            }
        return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_body_count(n_bodies: int, ratio: float) -> int:
    """Bodies assigned to training for one category; at least one body each side."""
    return min(max(_round_half_up(ratio * n_bodies), 1), n_bodies - 1)


def split_by_body(manifest: list[ManifestEntry], ratio: float = 0.8, seed: int = 0) -> SplitResult:
    """Split per category at the body level so no body straddles the split."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    _check_categories(manifest)
    rng = np.random.default_rng(seed)
    train_bodies: set[str] = set()
    for category in CATEGORIES:
        bodies = sorted({e.body_id for e in manifest if e.category == category})
        if not bodies:
            continue
        if len(bodies) < 2:
            raise ValueError(
                f"category {category!r} has {len(bodies)} body; need at least 2 for a "
                "non-empty test set"
            )
        order = rng.permutation(len(bodies))
        n_train = train_body_count(len(bodies), ratio)
        train_bodies.update(bodies[i] for i in order[:n_train])
    train = [e for e in manifest if e.body_id in train_bodies]
    test = [e for e in manifest if e.body_id not in train_bodies]
    return SplitResult(train=train, test=test, seed=seed, ratio=ratio)


def format_split_summary(summary: dict, reference: dict | None = LCID_REFERENCE) -> str:
    """Render a split summary as a table, echoing the published LCID counts."""
    lines = [f"seed={summary['seed']} ratio={summary['ratio']}",
             f"{'':22s}{'galaxy':>10s}{'nsc':>10s}{'total':>10s}"]

    def row(name, d):
        return f"{name:22s}" + "".join(f"{d[k]:>10,d}" for k in ("galaxy", "nsc", "total"))

    bodies = {k: summary["train"]["bodies"][k] + summary["test"]["bodies"][k]
              for k in ("galaxy", "nsc", "total")}
    lines.append(row("bodies", bodies))
    lines.append(row("samples (train)", summary["train"]["samples"]))
    lines.append(row("samples (test)", summary["test"]["samples"]))
    if reference is not None:
        lines.append("published LCID split (reference only):")
        lines.append(row("  bodies", reference["bodies"]))
        lines.append(row("  samples (train)", reference["train_samples"]))
        lines.append(row("  samples (test)", reference["test_samples"]))
        lines.append(row("  samples (total)", reference["total_samples"]))
    return "\n".join(lines)


# ---------------------------------------------------------------- flux model


@dataclass
class ThroughputModel:
    lambda_grid: np.ndarray  # m, strictly increasing
    sed: np.ndarray  # W m^-2 m^-1
    throughput: np.ndarray  # mirror efficiency x filter transmission

    def __post_init__(self) -> None:
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=np.float64)
        self.sed = np.asarray(self.sed, dtype=np.float64)
        self.throughput = np.asarray(self.throughput, dtype=np.float64)
        n = self.lambda_grid.size
        if n < 2:
            raise ValueError("wavelength grid needs at least 2 samples")
        if self.sed.shape != (n,) or self.throughput.shape != (n,):
            raise ValueError("SED, throughput and wavelength grids must share one length")
        if np.any(self.lambda_grid <= 0) or np.any(np.diff(self.lambda_grid) <= 0):
            raise ValueError("wavelengths must be positive and strictly increasing")
        if np.any(self.sed < 0):
            raise ValueError("SED values must be non-negative")
        if np.any(self.throughput < 0) or np.any(self.throughput > 1):
            raise ValueError("throughput must lie in [0, 1]")

    @classmethod
    def flat(cls, level: float, lo: float = 400e-9, hi: float = 700e-9, n: int = 301,
             throughput: float = 1.0) -> "ThroughputModel":
        grid = np.linspace(lo, hi, n)
        return cls(grid, np.full(n, level), np.full(n, throughput))


def electron_flux(model: ThroughputModel, t: float, a_eff: float) -> float:
    """Noise-free electron count collected in exposure ``t`` over area ``a_eff``."""
    if t < 0:
        raise ValueError("exposure time must be non-negative")
    if a_eff <= 0:
        raise ValueError("effective area must be positive")
    lam = model.lambda_grid
    integrand = model.sed * model.throughput * lam / (PLANCK * LIGHT_SPEED)
    integral = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(lam)))
    return t * a_eff * integral


# ---------------------------------------------------------------- synthesis


@dataclass
class ExposureConfig:
    t: float
    a_eff: float
    gain: float = 1.0
    read_noise_sigma: float = 0.0
    sky_level: float = 0.0

    def __post_init__(self) -> None:
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.a_eff <= 0 or self.gain <= 0:
            raise ValueError("a_eff and gain must be > 0")
        if self.read_noise_sigma < 0 or self.sky_level < 0:
            raise ValueError("read noise and sky level must be >= 0")


@dataclass
class SceneTemplate:
    """Procedural scene description.

    ``kind="galaxy"`` renders one elliptical exponential-profile blob;
    ``kind="nsc"`` renders a field of Gaussian point sources plus an
    optional diffuse Gaussian glow. Geometric parameters are fractions of
    the image size so one template works at any resolution.
    """

    kind: str
    height: int = CCD_ROWS
    width: int = CCD_COLS
    center: tuple[float, float] | None = None  # (row, col) fractions
    scale: float = 0.15  # galaxy scale length / image height
    axis_ratio: float = 0.6
    angle: float = 0.0  # radians
    n_stars: int = 60
    star_sigma: float = 0.006  # / image height
    diffuse_fraction: float = 0.3
    diffuse_scale: float = 0.25


@dataclass
class Sample:
    pixels: np.ndarray
    label: int
    body_id: str
    source: tuple = field(default_factory=tuple)  # (obsid, filter, hdu_index)


class SynthesisError(ValueError):
    pass


def render_scene(template: SceneTemplate, rng: np.random.Generator) -> np.ndarray:
    """Noise-free relative brightness map summing to 1."""
    h, w = template.height, template.width
    if h < 1 or w < 1:
        raise ValueError("scene size must be positive")
    yy = (np.arange(h, dtype=np.float64)[:, None] + 0.5) / h
    xx = (np.arange(w, dtype=np.float64)[None, :] + 0.5) / h  # both axes in units of height
    cy, cx = template.center or (rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75))
    cx *= w / h
    if template.kind == "galaxy":
        dy, dx = yy - cy, xx - cx
        c, s = math.cos(template.angle), math.sin(template.angle)
        u = (dx * c + dy * s) / template.scale
        v = (-dx * s + dy * c) / (template.scale * template.axis_ratio)
        img = np.exp(-np.sqrt(u * u + v * v))
    elif template.kind == "nsc":
        img = np.zeros((h, w))
        sig = max(template.star_sigma, 0.8 / h)  # keep stars resolved on small grids
        reach = max(2, int(math.ceil(6 * sig * h)))  # stamp half-width, pixels
        for _ in range(template.n_stars):
            sy = cy + rng.normal(0, 0.15)
            sx = cx + rng.normal(0, 0.15 * w / h)
            amp = rng.pareto(2.0) + 1.0
            r, c = int(sy * h), int(sx * h)
            r0, r1 = max(r - reach, 0), min(r + reach + 1, h)
            c0, c1 = max(c - reach, 0), min(c + reach + 1, w)
            if r0 >= r1 or c0 >= c1:
                continue
            dy2 = (yy[r0:r1] - sy) ** 2
            dx2 = (xx[:, c0:c1] - sx) ** 2
            img[r0:r1, c0:c1] += amp * np.exp(-(dy2 + dx2) / (2 * sig * sig))
        if template.diffuse_fraction > 0:
            glow = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * template.diffuse_scale ** 2))
            total = img.sum()
            if total > 0:
                img *= (1 - template.diffuse_fraction) / total
            img += template.diffuse_fraction * glow / glow.sum()
    else:
        raise ValueError(f"unknown scene kind {template.kind!r}")
    total = img.sum()
    if total <= 0:
        raise SynthesisError("scene rendered no flux")
    return img / total


def synthesize_sample(template: SceneTemplate, exposure: ExposureConfig, model: ThroughputModel,
                      seed: int, body_id: str = "SYN", source: tuple = ()) -> Sample:
    """Render a scene, scale it to the electron budget, add noise, digitize."""
    rng = np.random.default_rng(seed)
    electrons = render_scene(template, rng) * electron_flux(model, exposure.t, exposure.a_eff)
    expected = electrons + exposure.sky_level
    saturated = np.mean(expected / exposure.gain >= ADC_MAX)
    if saturated > 0.5:
        raise SynthesisError(f"{saturated:.0%} of pixels saturate; lower the exposure")
    counts = rng.poisson(expected).astype(np.float64)
    if exposure.read_noise_sigma > 0:
        counts += rng.normal(0.0, exposure.read_noise_sigma, counts.shape)
    dn = np.clip(np.rint(counts / exposure.gain), 0, ADC_MAX)
    return Sample(pixels=dn, label=LABELS[template.kind], body_id=body_id, source=source)


# ---------------------------------------------------------------- fetching


@dataclass
class FetchReport:
    fetched: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"fetched": self.fetched, "skipped": self.skipped,
                "failed": [{"path": p, "error": e} for p, e in self.failed]}


def local_name(entry: ManifestEntry) -> str:
    parsed = urllib.parse.urlparse(entry.path)
    return Path(parsed.path if parsed.scheme else entry.path).name


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fetch_one(entry: ManifestEntry, dest: Path) -> str:
    target = dest / local_name(entry)
    if target.exists() and (entry.sha256 is None or _sha256(target) == entry.sha256):
        return "skipped"
    scheme = urllib.parse.urlparse(entry.path).scheme
    tmp = target.with_suffix(target.suffix + ".part")
    if scheme in ("http", "https", "ftp", "file"):
        with urllib.request.urlopen(entry.path, timeout=60) as resp, open(tmp, "wb") as out:
            shutil.copyfileobj(resp, out)
    else:
        src = Path(entry.path)
        if not src.is_file():
            raise FileNotFoundError(f"source not found: {src}")
        shutil.copyfile(src, tmp)
    if entry.sha256 is not None and _sha256(tmp) != entry.sha256:
        tmp.unlink()
        raise ValueError("checksum mismatch")
    tmp.replace(target)
    return "fetched"


def fetch_manifest_files(manifest: list[ManifestEntry], dest_dir, workers: int = 4) -> FetchReport:
    """Copy or download every distinct manifest file into ``dest_dir``."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    unique: dict[str, ManifestEntry] = {}
    for e in manifest:
        unique.setdefault(e.path, e)
    report = FetchReport()

    def run(entry):
        try:
            return entry.path, _fetch_one(entry, dest), None
        except Exception as exc:  # reported per file, never fatal for the batch
            return entry.path, "failed", str(exc)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for path, status, err in pool.map(run, unique.values()):
            if status == "failed":
                log.warning("fetch failed for %s: %s", path, err)
                report.failed.append((path, err))
            else:
                getattr(report, status).append(path)
    return report


def group_by_body(entries: list[ManifestEntry]) -> dict[str, list[ManifestEntry]]:
    groups: dict[str, list[ManifestEntry]] = defaultdict(list)
    for e in entries:
        groups[e.body_id].append(e)
    return dict(groups)


def save_split(result: SplitResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(result.train, out / "train.csv")
    write_manifest(result.test, out / "test.csv")
    summary = result.summary()
    (out / "split_summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def default_throughput() -> ThroughputModel:
    """Flat 400-700 nm source behind a 50% throughput, used by the synthetic generators."""
    return ThroughputModel.flat(level=1e-9, lo=400e-9, hi=700e-9, n=301, throughput=0.5)


def synthetic_set(n_per_class: int, height: int, width: int, seed: int = 0,
                  t_range: tuple[float, float] = (50.0, 400.0), a_eff: float = 4.5,
                  read_noise: float = 3.0, sky: float = 20.0) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Balanced galaxy/NSC sample set at an arbitrary resolution.

    Exposure times are drawn per sample from ``t_range``; short exposures
    give faint, low-SNR images. Returns (images in DN, labels, body ids).
    """
    rng = np.random.default_rng(seed)
    model = default_throughput()
    images, labels, bodies = [], [], []
    for i in range(2 * n_per_class):
        kind = CATEGORIES[i % 2]
        template = SceneTemplate(
            kind=kind, height=height, width=width,
            scale=float(rng.uniform(0.08, 0.2)), axis_ratio=float(rng.uniform(0.3, 0.9)),
            angle=float(rng.uniform(0, math.pi)), n_stars=int(rng.integers(30, 90)),
        )
        exposure = ExposureConfig(t=float(rng.uniform(*t_range)), a_eff=a_eff, gain=1.0,
                                  read_noise_sigma=read_noise, sky_level=sky)
        body = f"SYN-{kind.upper()}-{i // 2:03d}"
        s = synthesize_sample(template, exposure, model, seed=int(rng.integers(2**31)), body_id=body)
        images.append(s.pixels)
        labels.append(s.label)
        bodies.append(body)
    return np.stack(images), np.array(labels), bodies
