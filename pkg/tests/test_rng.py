import numpy as np
import pytest

from .context import rng


class TestNoiseStreams:
    def test_same_address_same_numbers(self):
        first = rng.NoiseStreams(11).normals("W", 3, (8, 2))
        second = rng.NoiseStreams(11).normals("W", 3, (8, 2))

        assert np.array_equal(first, second)

    def test_addresses_are_independent(self):
        streams = rng.NoiseStreams(11)
        base = streams.normals("W", 3, (8,))

        assert not np.array_equal(base, streams.normals("W", 4, (8,)))
        assert not np.array_equal(base, streams.normals("B", 3, (8,)))
        assert not np.array_equal(base, rng.NoiseStreams(11, replica=1).normals("W", 3, (8,)))
        assert not np.array_equal(base, rng.NoiseStreams(12).normals("W", 3, (8,)))

    def test_order_of_requests_does_not_matter(self):
        forward = rng.NoiseStreams(2)
        first = forward.normals("B", 0, (4,))
        second = forward.normals("B", 1, (4,))

        backward = rng.NoiseStreams(2)
        assert np.array_equal(backward.normals("B", 1, (4,)), second)
        assert np.array_equal(backward.normals("B", 0, (4,)), first)

    def test_increments_scale_with_step(self):
        streams = rng.NoiseStreams(0)
        expected = 0.5 * streams.normals("V", 7, (5, 1))

        assert streams.increments("V", 7, (5, 1), 0.25) == pytest.approx(expected)

    def test_substeps_sum_the_finer_draws(self):
        streams = rng.NoiseStreams(4)
        coarse = streams.increments("B", 1, (3, 2), 0.1, 4)
        fine = sum(streams.increments("B", index, (3, 2), 0.025) for index in range(4, 8))

        assert coarse == pytest.approx(fine, abs=1e-14)

    def test_ledger(self):
        ledger = rng.NoiseStreams(9, replica=2).ledger.to_dict()

        assert ledger["master_seed"] == 9
        assert ledger["replica"] == 2
        assert set(ledger["channels"]) == {"rho", "xi", "B", "W", "V", "probe", "resample", "bootstrap"}
        assert "philox" in ledger["layout"]

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            rng.NoiseStreams(-1)
