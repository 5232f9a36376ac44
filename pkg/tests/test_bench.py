import pytest

from helpers import MICRO
from triplanetok.bench import bench_cells, max_feasible_batch, step_peak


def test_peak_is_affine_in_batch():
    peaks = [step_peak(MICRO, "random-patch", b, num_coords=4)[0] for b in (1, 2, 3, 4)]
    steps = [b - a for a, b in zip(peaks, peaks[1:])]
    assert max(steps) - min(steps) <= 0.01 * steps[0]


def test_max_batch_estimate_matches_measurement():
    peak1, _, P = step_peak(MICRO, "full-frame", 1)
    budget = 2 * P + 3.5 * (peak1 - 2 * P)
    B = max_feasible_batch(peak1, P, budget)
    assert B == 3
    assert step_peak(MICRO, "full-frame", B)[0] <= budget * 1.01
    assert step_peak(MICRO, "full-frame", B + 1)[0] > budget


def test_max_batch_edge_cases():
    assert max_feasible_batch(150, 50, 90) == 0
    with pytest.raises(ValueError):
        max_feasible_batch(100, 50, 1e9)


def test_decoder_side_flat_and_full_frame_growth():
    # only the temporal positional table's gradient grows with T on the decoder side
    cells = bench_cells(MICRO, [8, 16, 32], budget=1e6, num_coords=16)
    patch = {c.frames: c for c in cells if c.mode == "random-patch"}
    full = {c.frames: c for c in cells if c.mode == "full-frame"}
    dec = [patch[t].dec_peak_live_elements for t in (8, 16, 32)]
    assert max(dec) <= 1.01 * min(dec)
    assert full[32].dec_peak_live_elements >= 2 * full[8].dec_peak_live_elements
    assert full[32].peak_live_elements >= 2 * full[8].peak_live_elements
    assert patch[32].max_batch > full[32].max_batch
