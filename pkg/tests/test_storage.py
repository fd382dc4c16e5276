"""Image storage pipeline tests: bit extraction, tiling, load accounting,
readback reconstruction, and the end-to-end benchmark."""

import numpy as np
import pytest

from xbar.ivtable import IVTable, StrandPair
from xbar.storage import (
    ImageJob,
    TileRecord,
    bit_load,
    image_to_bits,
    reconstruct_bits,
    run_storage_benchmark,
    save_storage_report,
    tile_bits,
    valid_mask,
)


def linear_table(resistance, strand_id):
    v_grid = np.array([0.0, 0.5, 1.0])
    delta_grid = np.array([0.0, 0.2])
    current = np.tile(v_grid / resistance, (delta_grid.size, 1))
    return IVTable(
        strand_id=strand_id, v_grid=v_grid, delta_grid=delta_grid, current=current
    )


def separable_pair():
    return StrandPair(
        logic0_table=linear_table(1e8, "lin0"),
        logic1_table=linear_table(1e6, "lin1"),
    )


# --- bit extraction -------------------------------------------------------


def test_raw_bits_unpack_msb_first():
    bits = image_to_bits(ImageJob(source=bytes([0xF0]), name="x"))
    assert bits.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]


def test_gray_threshold_splits_at_level():
    job = ImageJob(
        source=bytes([0, 127, 128, 255]), binarization="gray-threshold", name="x"
    )
    assert image_to_bits(job).tolist() == [0, 0, 1, 1]


def test_gray_threshold_honors_custom_level():
    job = ImageJob(
        source=bytes([10, 50, 90]), binarization="gray-threshold", level=50, name="x"
    )
    assert image_to_bits(job).tolist() == [0, 1, 1]


def test_raw_bits_popcount_matches_oracle():
    rng = np.random.default_rng(41)
    payload = bytes(rng.integers(0, 256, size=200, dtype=np.uint8))
    bits = image_to_bits(ImageJob(source=payload, name="x"))
    assert bits.size == 1600
    assert int(bits.sum()) == sum(byte.bit_count() for byte in payload)


def test_image_job_rejects_bad_input():
    with pytest.raises(ValueError):
        ImageJob(source=b"", name="x")
    with pytest.raises(ValueError):
        ImageJob(source=b"a", binarization="dither", name="x")
    with pytest.raises(ValueError):
        ImageJob(source=b"a", binarization="gray-threshold", level=300, name="x")


# --- tiling ---------------------------------------------------------------


def test_tile_bits_pads_last_tile():
    bits = np.arange(10) % 2
    tiles, pad = tile_bits(bits, 2, 2)
    assert len(tiles) == 3 and pad == 2
    assert tiles[0].shape == (2, 2)
    # row-major fill: first four bits land in reading order
    assert tiles[0].ravel().tolist() == bits[:4].tolist()
    assert tiles[2].ravel().tolist() == [0, 1, 0, 0]


def test_tile_bits_exact_fit_has_no_pad():
    tiles, pad = tile_bits(np.ones(12, dtype=np.int8), 3, 4)
    assert len(tiles) == 1 and pad == 0


def test_tile_round_trip_recovers_stream():
    rng = np.random.default_rng(43)
    bits = rng.integers(0, 2, size=77).astype(np.int8)
    tiles, pad = tile_bits(bits, 4, 5)
    merged = np.concatenate([t.ravel() for t in tiles])
    assert np.array_equal(merged[: merged.size - pad], bits)


def test_valid_mask_marks_trailing_pad():
    mask = valid_mask(2, 3, pad=2)
    assert mask.shape == (2, 3)
    assert mask.sum() == 4
    assert not mask[1, 1] and not mask[1, 2]
    with pytest.raises(ValueError):
        valid_mask(2, 3, pad=6)
    with pytest.raises(ValueError):
        valid_mask(2, 3, pad=-1)


# --- load accounting ------------------------------------------------------


def test_bit_load_percentages():
    assert bit_load(np.zeros((4, 4), dtype=np.int8)) == 0.0
    checker = np.indices((4, 4)).sum(axis=0) % 2
    assert bit_load(checker) == 50.0


def test_bit_load_matches_popcount():
    rng = np.random.default_rng(47)
    tile = rng.integers(0, 2, size=(8, 8)).astype(np.int8)
    assert bit_load(tile) == pytest.approx(100.0 * tile.sum() / 64)


def test_bit_load_excludes_pad_from_denominator():
    tile = np.zeros((2, 3), dtype=np.int8)
    tile[0, :] = 1  # three ones, then one valid zero, then two pad cells
    assert bit_load(tile, pad=2) == pytest.approx(75.0)
    with pytest.raises(ValueError):
        bit_load(tile, pad=6)


# --- reconstruction -------------------------------------------------------


def test_reconstruct_bits_thresholds_currents():
    currents = np.array([[1.0, 3.0], [5.0, 7.0]])
    assert reconstruct_bits(currents, 4.0).tolist() == [[0, 0], [1, 1]]
    assert reconstruct_bits(currents, 4.0, polarity=-1).tolist() == [[1, 1], [0, 0]]


def test_reconstruct_bits_zeroes_pad_cells():
    currents = np.full((2, 2), 9.0)
    got = reconstruct_bits(currents, 1.0, pad=3)
    assert got.tolist() == [[1, 0], [0, 0]]


def test_reconstruct_matches_elementwise_oracle():
    rng = np.random.default_rng(53)
    currents = rng.random((16, 16))
    got = reconstruct_bits(currents, 0.5)
    for i in range(16):
        for j in range(16):
            assert got[i, j] == (1 if currents[i, j] > 0.5 else 0)


# --- benchmark ------------------------------------------------------------


def test_benchmark_round_trip_is_exact_at_low_interconnect():
    rng = np.random.default_rng(59)
    payload = bytes(rng.integers(0, 256, size=100, dtype=np.uint8))
    report = run_storage_benchmark(
        jobs=[ImageJob(source=payload, name="img")],
        r_ints=[1e4],
        sizes=[(8, 8)],
        pair=separable_pair(),
    )
    assert report.failures == 0
    assert len(report.per_tile) == 13  # 800 bits into 64-cell tiles
    for record in report.per_tile:
        assert record.ber == 0.0
        assert record.converged


def test_benchmark_single_class_tile_reads_clean():
    report = run_storage_benchmark(
        jobs=[ImageJob(source=bytes([0]), name="zeros")],
        r_ints=[1e4],
        sizes=[(2, 4)],
        pair=separable_pair(),
    )
    (record,) = report.per_tile
    assert record.bit_load_pct == 0.0
    assert record.ber == 0.0


def test_benchmark_power_decreases_with_interconnect_resistance():
    rng = np.random.default_rng(61)
    payload = bytes(rng.integers(0, 256, size=32, dtype=np.uint8))
    report = run_storage_benchmark(
        jobs=[ImageJob(source=payload, name="img")],
        r_ints=[1e4, 1e5, 1e6],
        sizes=[(16, 16)],
        pair=separable_pair(),
    )
    rows = {row["r_int_ohm"]: row["power_mean_w"] for row in report.power_vs_rint}
    assert rows[1e4] > rows[1e5] > rows[1e6]


def test_benchmark_is_thread_invariant():
    rng = np.random.default_rng(67)
    payload = bytes(rng.integers(0, 256, size=24, dtype=np.uint8))
    jobs = [ImageJob(source=payload, name="img")]
    one = run_storage_benchmark(
        jobs, r_ints=[1e5], sizes=[(8, 8)], pair=separable_pair(), threads=1
    )
    three = run_storage_benchmark(
        jobs, r_ints=[1e5], sizes=[(8, 8)], pair=separable_pair(), threads=3
    )
    assert one.per_tile == three.per_tile
    assert one.binned_ber == three.binned_ber


def test_binned_stats_group_by_condition_and_load():
    rng = np.random.default_rng(71)
    payload = bytes(rng.integers(0, 256, size=64, dtype=np.uint8))
    report = run_storage_benchmark(
        jobs=[ImageJob(source=payload, name="img")],
        r_ints=[1e4],
        sizes=[(8, 8)],
        pair=separable_pair(),
    )
    assert report.binned_ber
    total = sum(row["count"] for row in report.binned_ber)
    assert total == len(report.per_tile)
    for row in report.binned_ber:
        assert row["q1"] <= row["median"] <= row["q3"]
        assert row["min"] <= row["q1"] and row["q3"] <= row["max"]


def test_save_storage_report_writes_stable_files(tmp_path):
    rng = np.random.default_rng(73)
    payload = bytes(rng.integers(0, 256, size=16, dtype=np.uint8))
    report = run_storage_benchmark(
        jobs=[ImageJob(source=payload, name="img")],
        r_ints=[1e4],
        sizes=[(4, 4)],
        pair=separable_pair(),
    )
    save_storage_report(report, tmp_path / "a")
    save_storage_report(report, tmp_path / "b")
    tiles_a = (tmp_path / "a" / "storage_tiles.csv").read_bytes()
    tiles_b = (tmp_path / "b" / "storage_tiles.csv").read_bytes()
    assert tiles_a == tiles_b
    header = tiles_a.decode().splitlines()[0]
    assert header == "tile_id,size,r_int_ohm,bit_load_pct,ber,power_w"
    summary = (tmp_path / "a" / "storage_summary.json").read_text()
    assert '"binned_ber"' in summary and '"power_vs_rint"' in summary
