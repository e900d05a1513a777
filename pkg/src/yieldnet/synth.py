"""Deterministic synthetic world: rasters, cropland masks, true yields.

Each (location, year) draws a latent fertility factor from a seeded stream.
Fertility moves both crops' yields (shared loading, per-crop noise) and
modulates smooth per-band seasonal response curves whose peaks sit mid-to-
late season, so histogram cubes carry a recoverable fertility signal and
early-season cutoffs genuinely see less of it. Corn and soybean masks are
disjoint contiguous strips; pixels outside both strips follow an offset
background curve with no fertility signal.
"""

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .ingest import CORN, CROPS, SOYBEAN, CroplandMask, RasterImage, write_mask, write_raster

# Per-band seasonal response: value = base + amp * response * bump(season)
# with bump a Gaussian in season fraction. Bands 0-6 sit at reflectance-like
# scales, bands 7-8 at temperature-like scales with negative fertility gain.
# Peaks sit mid-to-late season with narrow widths so composites after the
# July cutoff still carry a large share of the fertility signal.
_BAND_BASE = np.array([0.05, 0.08, 0.06, 0.30, 0.28, 0.18, 0.12, 290.0, 278.0])
_BAND_AMP = np.array([0.04, 0.05, 0.07, 0.25, 0.20, 0.12, 0.10, 14.0, 10.0])
_BAND_PEAK = np.array([0.55, 0.65, 0.72, 0.76, 0.80, 0.84, 0.88, 0.70, 0.78])
_BAND_WIDTH = np.array([0.15, 0.12, 0.11, 0.10, 0.10, 0.10, 0.11, 0.12, 0.12])
# Fertility gain leans toward the late-peaking bands, so early-season
# composites pin the latent factor less tightly than full-season ones.
_BAND_GAIN = np.array([0.1, 0.25, 0.5, 1.0, 1.0, 0.9, 0.8, -0.45, -0.65])

_CROP_RESPONSE_OFFSET = {CORN: 0.0, SOYBEAN: 0.0}
MIN_YIELD = 1.0


@dataclass(frozen=True)
class WorldParams:
    n_locations: int = 200
    years: tuple = tuple(range(2004, 2019))
    grid_h: int = 24
    grid_w: int = 24
    timesteps: int = 30
    base_yields: dict = field(default_factory=lambda: {CORN: 146.68, SOYBEAN: 45.02})
    loadings: dict = field(default_factory=lambda: {CORN: 1.0, SOYBEAN: 1.0})
    yield_sensitivity: float = 0.15  # relative yield shift per unit fertility
    # Soy carries relatively more label noise than corn; corn's larger
    # output scale already makes it the slower crop to fit, so this keeps
    # the two loss terms trading places during joint training.
    noise_std: dict = field(default_factory=lambda: {CORN: 7.33, SOYBEAN: 4.05})
    fertility_pixel_gain: float = 0.3
    pixel_noise_rel: float = 0.6  # pixel noise as a fraction of band amplitude
    nodata_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.grid_h < 8 or self.grid_w < 8:
            raise ValueError("grid must be at least 8x8 to fit both crop strips")
        for crop in CROPS:
            if not self.base_yields[crop] > 0:
                raise ValueError(f"base yield for {crop} must be positive")
            if self.noise_std[crop] < 0:
                raise ValueError(f"noise std for {crop} must be >= 0")

    @property
    def bands(self):
        return _BAND_BASE.shape[0]


@dataclass
class GenResult:
    location_id: str
    year: int
    rasters: list  # timesteps RasterImages
    masks: dict  # crop -> CroplandMask
    yields: dict  # crop -> float
    fertility: float
    clamped: int  # yields clamped up to MIN_YIELD


def location_name(index: int) -> str:
    return f"L{index:04d}"


def _strip_masks(rng, h, w):
    """Two disjoint contiguous strips, each covering >= 25% of the grid."""
    orientation = int(rng.integers(0, 2))
    extent = h if orientation == 0 else w
    first = int(rng.integers(-(-extent // 4), extent // 2 + 1))
    gap = int(rng.integers(0, 3))
    flip = bool(rng.integers(0, 2))
    a = np.zeros((h, w), dtype=np.uint8)
    b = np.zeros((h, w), dtype=np.uint8)
    if orientation == 0:
        a[:first, :] = 1
        b[first + gap :, :] = 1
    else:
        a[:, :first] = 1
        b[:, first + gap :] = 1
    corn, soy = (b, a) if flip else (a, b)
    return {
        CORN: CroplandMask(values=corn, crop=CORN),
        SOYBEAN: CroplandMask(values=soy, crop=SOYBEAN),
    }


def season_bumps(timesteps: int) -> np.ndarray:
    """(T, bands) Gaussian response curve over the season fraction."""
    s = (np.arange(1, timesteps + 1) - 0.5) / timesteps
    return np.exp(-((s[:, None] - _BAND_PEAK) ** 2) / (2.0 * _BAND_WIDTH**2))


def gen_county(params: WorldParams, location: int, year: int) -> GenResult:
    """Rasters, masks and yields for one (location, year), bit-reproducible.

    The RNG stream is keyed by (seed, location, year), so generation order
    and parallelism cannot change any output.
    """
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, location, year]))
    fertility = float(rng.standard_normal())
    masks = _strip_masks(rng, params.grid_h, params.grid_w)
    label_noise = rng.standard_normal(2)
    yields = {}
    clamped = 0
    for crop, eps in zip(CROPS, label_noise):
        base = params.base_yields[crop]
        value = (base + params.loadings[crop] * fertility * base * params.yield_sensitivity
                 + params.noise_std[crop] * float(eps))
        if value < MIN_YIELD:
            value = MIN_YIELD
            clamped += 1
        yields[crop] = value
    t, h, w, d = params.timesteps, params.grid_h, params.grid_w, params.bands
    bump = season_bumps(t)  # (T, d)
    background = _BAND_BASE + 2.0 * _BAND_AMP + 0.5 * _BAND_AMP * bump
    values = np.broadcast_to(background[:, None, None, :], (t, h, w, d)).copy()
    for crop in CROPS:
        response = (1.0 + _BAND_GAIN * params.fertility_pixel_gain * fertility
                    + _CROP_RESPONSE_OFFSET[crop])
        mean = _BAND_BASE + _BAND_AMP * response * bump  # (T, d)
        region = masks[crop].values.astype(bool)
        values[:, region, :] = mean[:, None, :]
    values += params.pixel_noise_rel * _BAND_AMP * rng.standard_normal((t, h, w, d))
    if params.nodata_rate > 0:
        values[rng.random((t, h, w, d)) < params.nodata_rate] = np.nan
    values = values.astype(np.float32)
    loc_id = location_name(location)
    rasters = [
        RasterImage(pixels=values[i], location_id=loc_id, year=year, timestep=i + 1)
        for i in range(t)
    ]
    return GenResult(location_id=loc_id, year=year, rasters=rasters, masks=masks,
                     yields=yields, fertility=fertility, clamped=clamped)


def iter_world(params: WorldParams):
    """All (location, year) results in deterministic key order."""
    for loc in range(params.n_locations):
        for year in params.years:
            yield gen_county(params, loc, year)


def world_keys(params: WorldParams):
    return [(loc, year) for loc in range(params.n_locations) for year in params.years]


def gen_dataset(params: WorldParams, out_dir, jobs: int = 1) -> pathlib.Path:
    """Write the whole world to disk in the binary formats plus a JSON index.

    Returns the index path. Regeneration with the same params is
    byte-identical; workers only affect wall time because every file's
    content is keyed by (seed, location, year).
    """
    out = pathlib.Path(out_dir)
    (out / "rasters").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = []
    total_clamped = 0

    def emit(key):
        loc, year = key
        return gen_county(params, loc, year)

    from .parallel import parallel_map

    for res in parallel_map(emit, world_keys(params), jobs):
        raster_paths = []
        for raster in res.rasters:
            rel = f"rasters/{res.location_id}_{res.year}_t{raster.timestep:02d}.rsr"
            (out / rel).write_bytes(write_raster(raster))
            raster_paths.append(rel)
        mask_paths = {}
        for crop in CROPS:
            rel = f"masks/{res.location_id}_{res.year}_{crop}.msk"
            (out / rel).write_bytes(write_mask(res.masks[crop]))
            mask_paths[crop] = rel
        total_clamped += res.clamped
        samples.append({
            "location_id": res.location_id,
            "year": res.year,
            "yields": {crop: res.yields[crop] for crop in CROPS},
            "rasters": raster_paths,
            "masks": mask_paths,
        })
    index = {
        "schema_version": 1,
        "grid": [params.grid_h, params.grid_w],
        "bands": params.bands,
        "timesteps": params.timesteps,
        "years": list(params.years),
        "seed": params.seed,
        "clamped_yields": total_clamped,
        "samples": samples,
    }
    index_path = out / "index.json"
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index_path
