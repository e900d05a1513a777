"""Binary file formats: round-trips, header arithmetic, failure offsets."""

import numpy as np
import pytest

from yieldnet.errors import RasterFormatError
from yieldnet.ingest import (
    CroplandMask,
    HistogramCube,
    RasterImage,
    parse_cube,
    parse_mask,
    parse_raster,
    write_cube,
    write_mask,
    write_raster,
)


def sample_raster(rng, h=3, w=4, d=2, loc="L0001", year=2010, t=5):
    px = rng.standard_normal((h, w, d)).astype(np.float32)
    px[0, 0, 0] = np.nan  # no-data must survive the round-trip
    return RasterImage(pixels=px, location_id=loc, year=year, timestep=t)


class TestRasterFormat:
    def test_roundtrip_bit_exact(self, rng):
        raster = sample_raster(rng)
        blob = write_raster(raster)
        back = parse_raster(blob)
        assert write_raster(back) == blob
        assert back.location_id == raster.location_id
        assert back.year == raster.year and back.timestep == raster.timestep
        assert np.array_equal(
            back.pixels.view(np.uint32), raster.pixels.view(np.uint32))

    def test_header_is_32_bytes_for_empty_id(self):
        raster = RasterImage(pixels=np.arange(1, 5, dtype=np.float32).reshape(2, 2, 1),
                             location_id="", year=2000, timestep=1)
        blob = write_raster(raster)
        assert len(blob) == 32 + 16  # 32-byte header, 4 pixels * 4 bytes

    def test_band_sequential_layout(self):
        px = np.zeros((2, 2, 2), dtype=np.float32)
        px[:, :, 0] = [[1, 2], [3, 4]]
        px[:, :, 1] = [[5, 6], [7, 8]]
        blob = write_raster(RasterImage(pixels=px, location_id="", year=1, timestep=1))
        payload = np.frombuffer(blob[32:], dtype="<f4")
        assert payload.tolist() == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_bad_magic_offset_zero(self):
        with pytest.raises(RasterFormatError, match="offset 0"):
            parse_raster(b"JUNK" + b"\x00" * 40)

    def test_truncated_payload_names_offset(self, rng):
        blob = write_raster(sample_raster(rng))
        with pytest.raises(RasterFormatError, match="truncated"):
            parse_raster(blob[:-4])

    def test_future_version_rejected(self, rng):
        blob = bytearray(write_raster(sample_raster(rng)))
        blob[4:8] = (99).to_bytes(4, "little")
        with pytest.raises(RasterFormatError, match="version 99"):
            parse_raster(bytes(blob))

    def test_trailing_bytes_rejected(self, rng):
        blob = write_raster(sample_raster(rng)) + b"x"
        with pytest.raises(RasterFormatError, match="trailing"):
            parse_raster(blob)


class TestMaskFormat:
    def test_roundtrip(self, rng):
        mask = CroplandMask(values=(rng.random((4, 5)) < 0.5).astype(np.uint8),
                            crop="soybean")
        blob = write_mask(mask)
        back = parse_mask(blob)
        assert back.crop == "soybean"
        assert np.array_equal(back.values, mask.values)
        assert write_mask(back) == blob

    def test_nonbinary_values_rejected(self):
        mask = CroplandMask(values=np.ones((2, 2), dtype=np.uint8), crop="corn")
        blob = bytearray(write_mask(mask))
        blob[-1] = 7
        with pytest.raises(RasterFormatError, match="0 or 1"):
            parse_mask(bytes(blob))

    def test_unknown_crop_code(self):
        mask = CroplandMask(values=np.zeros((1, 1), dtype=np.uint8), crop="corn")
        blob = bytearray(write_mask(mask))
        blob[16:20] = (5).to_bytes(4, "little")
        with pytest.raises(RasterFormatError, match="crop code"):
            parse_mask(bytes(blob))


class TestCubeFormat:
    def test_roundtrip_bit_exact(self, rng):
        cube = HistogramCube(values=rng.random((4, 5, 3)),
                             timestep_valid=np.array([True, False, True, True]),
                             location_id="L0042", year=2016, crop="corn")
        blob = write_cube(cube)
        back = parse_cube(blob)
        assert write_cube(back) == blob
        assert np.array_equal(back.values, cube.values)
        assert np.array_equal(back.timestep_valid, cube.timestep_valid)
        assert (back.location_id, back.year, back.crop) == ("L0042", 2016, "corn")

    def test_bad_magic(self):
        with pytest.raises(RasterFormatError, match="magic"):
            parse_cube(b"NOPE" + b"\x00" * 64)
