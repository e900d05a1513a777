"""Raster ingestion: binary formats, bin fitting, histograms, cube assembly.

Pixel grids are reduced to per-band histograms of masked pixel values, then
stacked over the season into (T, bins, bands) cubes. The histogram step is
permutation invariant by construction: only the multiset of valid pixel
values per band matters.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import BinFitError, RasterFormatError

RASTER_MAGIC = b"RSR1"
MASK_MAGIC = b"MSK1"
CUBE_MAGIC = b"HCB1"
FORMAT_VERSION = 1

CORN, SOYBEAN = "corn", "soybean"
CROPS = (CORN, SOYBEAN)
CROP_CODES = {CORN: 0, SOYBEAN: 1}
CROP_NAMES = {0: CORN, 1: SOYBEAN}

DEFAULT_TIMESTEPS = 30
DEFAULT_BINS = 32
DEFAULT_BANDS = 9

# Season calendar: composite t covers days-of-year [start, start+7] with
# start = 65 + 8*(t-1); 30 composites span early March through late October.
SEASON_START_DOY = 65
COMPOSITE_DAYS = 8

# Evaluation cutoff dates as day-of-year (non-leap calendar).
CUTOFF_DOY = {"jul23": 204, "aug23": 235, "sep23": 266, "oct23": 296}
CUTOFFS = tuple(CUTOFF_DOY)


def composite_start_doy(t: int) -> int:
    return SEASON_START_DOY + COMPOSITE_DAYS * (t - 1)


def last_timestep_for_cutoff(cutoff: str, timesteps: int = DEFAULT_TIMESTEPS) -> int:
    """Largest t whose composite window closes on or before the cutoff date."""
    doy = CUTOFF_DOY[cutoff]
    last = 0
    for t in range(1, timesteps + 1):
        if composite_start_doy(t) + COMPOSITE_DAYS - 1 <= doy:
            last = t
    return last


@dataclass
class RasterImage:
    """One multispectral image for a (location, year, timestep); NaN = no-data."""

    pixels: np.ndarray  # (H, W, bands) float32
    location_id: str
    year: int
    timestep: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ValueError(f"raster pixels must be (H, W, bands), got {self.pixels.shape}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def bands(self):
        return self.pixels.shape[2]


@dataclass
class CroplandMask:
    """Binary include/exclude grid paired with a raster of equal extent."""

    values: np.ndarray  # (H, W) uint8 of {0, 1}
    crop: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.values.shape}")
        if self.crop not in CROPS:
            raise ValueError(f"unknown crop {self.crop!r}")


@dataclass
class BinningManifest:
    """Per-band equal-width bin edges fit on training pixels only."""

    lowers: np.ndarray  # (bands,)
    uppers: np.ndarray  # (bands,)
    bins: int
    fit_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lowers = np.asarray(self.lowers, dtype=np.float64)
        self.uppers = np.asarray(self.uppers, dtype=np.float64)
        if self.bins < 2:
            raise ValueError(f"bin count must be >= 2, got {self.bins}")
        if np.any(self.uppers <= self.lowers):
            bad = int(np.argmax(self.uppers <= self.lowers))
            raise ValueError(f"band {bad}: upper edge must exceed lower edge")

    @property
    def bands(self):
        return self.lowers.shape[0]

    def edges(self, band: int) -> np.ndarray:
        return np.linspace(self.lowers[band], self.uppers[band], self.bins + 1)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "bins": self.bins,
            "bands": [
                {"lower": float(lo), "upper": float(hi)}
                for lo, hi in zip(self.lowers, self.uppers)
            ],
            "fit": self.fit_meta,
        }

    @staticmethod
    def from_json(doc: dict) -> "BinningManifest":
        if doc.get("schema_version") != 1:
            raise ValueError(f"unsupported manifest schema {doc.get('schema_version')!r}")
        return BinningManifest(
            lowers=[b["lower"] for b in doc["bands"]],
            uppers=[b["upper"] for b in doc["bands"]],
            bins=doc["bins"],
            fit_meta=doc.get("fit", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "BinningManifest":
        with open(path, encoding="utf-8") as fh:
            return BinningManifest.from_json(json.load(fh))


@dataclass
class HistogramCube:
    """Model input: (T, bins, bands) histogram stack for one location/year/crop.

    Every (t, band) column sums to 1 or is all zero with the timestep
    flagged invalid.
    """

    values: np.ndarray  # (T, bins, bands) float64
    timestep_valid: np.ndarray  # (T,) bool
    location_id: str
    year: int
    crop: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.timestep_valid = np.asarray(self.timestep_valid, dtype=bool)
        if self.values.ndim != 3:
            raise ValueError(f"cube must be (T, bins, bands), got {self.values.shape}")
        if self.timestep_valid.shape != (self.values.shape[0],):
            raise ValueError("timestep_valid length must equal T")

    @property
    def timesteps(self):
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Binary formats


def write_raster(raster: RasterImage) -> bytes:
    """RSR1: magic, u32 {version, H, W, d, year, timestep, id_len}, id, f32 pixels.

    Pixels are band-sequential: band 0's full H*W grid, then band 1, ...
    """
    loc = raster.location_id.encode("utf-8")
    head = RASTER_MAGIC + b"".join(
        binio.u32(v)
        for v in (FORMAT_VERSION, raster.height, raster.width, raster.bands,
                  raster.year, raster.timestep, len(loc))
    )
    payload = binio.f32_bytes(np.moveaxis(raster.pixels, 2, 0))
    return head + loc + payload


def parse_raster(data: bytes) -> RasterImage:
    r = binio.Reader(data)
    r.expect_magic(RASTER_MAGIC)
    version = r.u32("version")
    if version > FORMAT_VERSION:
        raise RasterFormatError(f"unsupported raster version {version}", 4)
    h = r.u32("height")
    w = r.u32("width")
    d = r.u32("bands")
    year = r.u32("year")
    timestep = r.u32("timestep")
    id_len = r.u32("location id length")
    loc = r.utf8(id_len, "location id")
    flat = r.f32_array(h * w * d, "pixel payload")
    r.done()
    pixels = np.moveaxis(flat.reshape(d, h, w), 0, 2)
    return RasterImage(pixels=pixels, location_id=loc, year=year, timestep=timestep)


def write_mask(mask: CroplandMask) -> bytes:
    """MSK1: magic, u32 {version, H, W, crop_code}, H*W bytes of {0,1}."""
    h, w = mask.values.shape
    head = MASK_MAGIC + b"".join(
        binio.u32(v) for v in (FORMAT_VERSION, h, w, CROP_CODES[mask.crop]))
    return head + mask.values.astype(np.uint8).tobytes()


def parse_mask(data: bytes) -> CroplandMask:
    r = binio.Reader(data)
    r.expect_magic(MASK_MAGIC)
    version = r.u32("version")
    if version > FORMAT_VERSION:
        raise RasterFormatError(f"unsupported mask version {version}", 4)
    h = r.u32("height")
    w = r.u32("width")
    code = r.u32("crop code")
    if code not in CROP_NAMES:
        raise RasterFormatError(f"unknown crop code {code}", 12)
    raw = r.take(h * w, "mask payload")
    r.done()
    values = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if not np.isin(values, (0, 1)).all():
        raise RasterFormatError("mask values must be 0 or 1", 16)
    return CroplandMask(values=values.copy(), crop=CROP_NAMES[code])


def write_cube(cube: HistogramCube) -> bytes:
    """HCB1: magic, u32 {version, T, b, d, crop_code, id_len}, id, u32 year,
    T validity bytes, f64 values."""
    t, b, d = cube.values.shape
    loc = cube.location_id.encode("utf-8")
    head = CUBE_MAGIC + b"".join(
        binio.u32(v)
        for v in (FORMAT_VERSION, t, b, d, CROP_CODES[cube.crop], len(loc)))
    return (head + loc + binio.u32(cube.year)
            + cube.timestep_valid.astype(np.uint8).tobytes()
            + binio.f64_bytes(cube.values))


def parse_cube(data: bytes) -> HistogramCube:
    r = binio.Reader(data)
    r.expect_magic(CUBE_MAGIC)
    version = r.u32("version")
    if version > FORMAT_VERSION:
        raise RasterFormatError(f"unsupported cube version {version}", 4)
    t = r.u32("timesteps")
    b = r.u32("bins")
    d = r.u32("bands")
    code = r.u32("crop code")
    if code not in CROP_NAMES:
        raise RasterFormatError(f"unknown crop code {code}", 16)
    id_len = r.u32("location id length")
    loc = r.utf8(id_len, "location id")
    year = r.u32("year")
    valid = np.frombuffer(r.take(t, "validity flags"), dtype=np.uint8).astype(bool)
    values = r.f64_array(t * b * d, "cube payload").reshape(t, b, d)
    r.done()
    return HistogramCube(values=values, timestep_valid=valid,
                         location_id=loc, year=year, crop=CROP_NAMES[code])


# ---------------------------------------------------------------------------
# Binning and histograms


def fit_bins(pairs, bins: int = DEFAULT_BINS, fit_meta: dict | None = None) -> BinningManifest:
    """Fit per-band equal-width edges over all masked, non-NaN training pixels.

    pairs is an iterable of (RasterImage, CroplandMask); it is consumed in
    one streaming pass.
    """
    lowers = None
    uppers = None
    for raster, mask in pairs:
        _check_pair(raster, mask)
        if lowers is None:
            lowers = np.full(raster.bands, np.inf)
            uppers = np.full(raster.bands, -np.inf)
        px = raster.pixels[mask.values.astype(bool)]  # (n_valid, bands)
        if px.size == 0:
            continue
        # A band may be all-NaN within one raster; that only becomes an
        # error if no raster in the stream covers it.
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lowers = np.fmin(lowers, np.nanmin(px, axis=0))
            uppers = np.fmax(uppers, np.nanmax(px, axis=0))
    if lowers is None:
        raise ValueError("fit_bins needs at least one raster/mask pair")
    for band in range(lowers.shape[0]):
        if not np.isfinite(lowers[band]) or not np.isfinite(uppers[band]):
            raise BinFitError("no valid masked pixels", band)
        if lowers[band] == uppers[band]:
            raise BinFitError("degenerate range (min equals max)", band)
    meta = {"bins": bins}
    meta.update(fit_meta or {})
    return BinningManifest(lowers=lowers, uppers=uppers, bins=bins, fit_meta=meta)


def _check_pair(raster: RasterImage, mask: CroplandMask):
    if mask.values.shape != (raster.height, raster.width):
        raise ValueError(
            f"mask shape {mask.values.shape} does not match raster "
            f"{(raster.height, raster.width)}")


def histogram(raster: RasterImage, mask: CroplandMask,
              manifest: BinningManifest) -> np.ndarray:
    """Per-band normalized histogram of masked pixels; (bins, bands) output.

    Out-of-range values clamp into the edge bins; bins are right-open except
    the last. A band with zero valid pixels yields an all-zero column.
    """
    _check_pair(raster, mask)
    if raster.bands != manifest.bands:
        raise ValueError(
            f"manifest has {manifest.bands} bands but raster has {raster.bands}")
    px = raster.pixels[mask.values.astype(bool)].astype(np.float64)  # (P, bands)
    return _histogram_pixels(px, manifest)


def _histogram_pixels(px: np.ndarray, manifest: BinningManifest) -> np.ndarray:
    b = manifest.bins
    d = manifest.bands
    out = np.zeros((b, d))
    if px.shape[0] == 0:
        return out
    width = (manifest.uppers - manifest.lowers) / b
    with np.errstate(invalid="ignore"):
        idx = np.floor((px - manifest.lowers) / width)
    valid = np.isfinite(px)
    idx = np.clip(idx, 0, b - 1)
    for band in range(d):
        v = valid[:, band]
        n = int(v.sum())
        if n == 0:
            continue
        counts = np.bincount(idx[v, band].astype(np.intp), minlength=b)
        out[:, band] = counts / n
    return out


def assemble_cube(slices, timesteps: int,
                  location_id: str, year: int, crop: str) -> HistogramCube:
    """Stack per-timestep (bins, bands) slices; missing timesteps zero out.

    slices is a mapping {t: slice} or an iterable of (t, slice) pairs with
    t in 1..timesteps and no duplicates.
    """
    items = list(slices.items()) if isinstance(slices, dict) else list(slices)
    if not items:
        raise ValueError("assemble_cube needs at least one slice")
    seen = set()
    for t, _ in items:
        if not 1 <= t <= timesteps:
            raise ValueError(f"timestep {t} outside 1..{timesteps}")
        if t in seen:
            raise ValueError(f"duplicate timestep {t}")
        seen.add(t)
    b, d = np.asarray(items[0][1]).shape
    values = np.zeros((timesteps, b, d))
    valid = np.zeros(timesteps, dtype=bool)
    for t, sl in items:
        sl = np.asarray(sl, dtype=np.float64)
        if sl.shape != (b, d):
            raise ValueError(f"slice for timestep {t} has shape {sl.shape}, expected {(b, d)}")
        values[t - 1] = sl
        # An all-zero slice (no valid pixels) counts as invalid, same as missing.
        valid[t - 1] = bool(sl.any())
    return HistogramCube(values=values, timestep_valid=valid,
                         location_id=location_id, year=year, crop=crop)


def histogram_series(stack: np.ndarray, mask_values: np.ndarray,
                     manifest: BinningManifest):
    """Histogram a whole (T, H, W, bands) raster stack under one mask.

    Equivalent to calling histogram() per timestep, but with one flat
    bincount per call. Returns (values (T, bins, bands), timestep_valid).
    """
    t, h, w, d = stack.shape
    if d != manifest.bands:
        raise ValueError(f"manifest has {manifest.bands} bands but stack has {d}")
    b = manifest.bins
    out = np.zeros((t, b, d))
    px = stack[:, mask_values.astype(bool), :].astype(np.float64)  # (T, P, d)
    if px.shape[1]:
        width = (manifest.uppers - manifest.lowers) / b
        with np.errstate(invalid="ignore"):
            idx = np.clip(np.floor((px - manifest.lowers) / width), 0, b - 1)
        finite = np.isfinite(px)
        idx = np.where(finite, idx, 0.0).astype(np.intp)
        t_idx = np.arange(t, dtype=np.intp)[:, None, None]
        d_idx = np.arange(d, dtype=np.intp)[None, None, :]
        flat = (t_idx * b + idx) * d + d_idx
        # NaN pixels land in a spill slot past the real histogram.
        flat = np.where(finite, flat, t * b * d)
        counts = np.bincount(flat.ravel(), minlength=t * b * d + 1)[:-1]
        counts = counts.reshape(t, b, d).astype(np.float64)
        totals = counts.sum(axis=1, keepdims=True)
        np.divide(counts, totals, out=out, where=totals > 0)
    return out, out.any(axis=(1, 2))


def apply_cutoff(cube: HistogramCube, cutoff: str | None) -> HistogramCube:
    """Zero every composite whose window closes after the cutoff date.

    Idempotent, and monotone in the cutoff date. cutoff None returns an
    unmodified copy.
    """
    if cutoff is None:
        return HistogramCube(values=cube.values.copy(),
                             timestep_valid=cube.timestep_valid.copy(),
                             location_id=cube.location_id, year=cube.year,
                             crop=cube.crop)
    if cutoff not in CUTOFF_DOY:
        raise ValueError(f"unknown cutoff {cutoff!r}; expected one of {CUTOFFS}")
    last = last_timestep_for_cutoff(cutoff, cube.timesteps)
    values = cube.values.copy()
    valid = cube.timestep_valid.copy()
    values[last:] = 0.0
    valid[last:] = False
    return HistogramCube(values=values, timestep_valid=valid,
                         location_id=cube.location_id, year=cube.year,
                         crop=cube.crop)


def cutoff_zero_batch(batch: np.ndarray, last_kept: np.ndarray) -> np.ndarray:
    """Vector form used in training/eval: zero timesteps > last_kept per row.

    batch is (N, T, bins, bands); last_kept is (N,) of ints (T keeps all).
    """
    t = batch.shape[1]
    keep = np.arange(1, t + 1)[None, :] <= last_kept[:, None]
    return batch * keep[:, :, None, None]
