import collections
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import seeds
from ttcomplete.generators import inverse_norm_entry, tt_oracle, zero_oracle
from ttcomplete.sampling import (
    SampleSet,
    attach_values,
    draw_sample_set,
    generate_index_set,
    overlap_fraction,
    read_sample_set,
    slice_densities,
    slice_density,
    write_sample_set,
)
from ttcomplete.tt_core import uniform_rank_one


def tally(indices, mu):
    """Hash-based count of the slice densities of direction ``mu``."""
    return collections.Counter(tuple(ix)[mu] for ix in indices.tolist())


class TestIndexSet:
    def test_tiny_grid(self):
        idx = generate_index_set((2, 2), 1, 1, seed=3)
        assert len(idx) <= 4
        assert len(np.unique(idx, axis=0)) == len(idx)

    def test_saturation_gives_full_grid(self, caplog):
        with caplog.at_level(logging.WARNING):
            idx = generate_index_set((2, 2), 1, 5, seed=3)
        np.testing.assert_array_equal(idx, [[0, 0], [0, 1], [1, 0], [1, 1]])
        assert "fully sampled" in caplog.text

    def test_size_bound_at_d7_n12(self):
        idx = generate_index_set((12,) * 7, 3, 10, seed=0)
        assert len(idx) <= 7 * 12 * 10 * 9
        # duplicates are extremely unlikely on a grid of 12^7 points
        assert len(idx) >= 0.99 * 7560
        rho = len(idx) / 12**7
        assert rho == pytest.approx(2.1e-4, rel=0.02)

    def test_density_lower_bound(self):
        sizes = (6, 7, 8)
        idx = generate_index_set(sizes, 2, 3, seed=11)
        for mu in range(3):
            counts = tally(idx, mu)
            # each slice received 12 draws; only duplicates can remove any
            assert all(counts[j] >= 1 for j in range(sizes[mu]))
        without_dupes = generate_index_set((40, 40, 40), 2, 3, seed=11)
        for mu in range(3):
            assert min(tally(without_dupes, mu).values()) >= 12

    def test_deterministic_and_seed_sensitive(self):
        a = generate_index_set((5, 6, 7), 2, 4, seed=1)
        b = generate_index_set((5, 6, 7), 2, 4, seed=1)
        c = generate_index_set((5, 6, 7), 2, 4, seed=2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sorted_and_in_range(self):
        idx = generate_index_set((3, 9, 4), 1, 2, seed=5)
        assert (idx >= 0).all() and (idx < np.array([3, 9, 4])).all()
        keys = np.ravel_multi_index(idx.T, (3, 9, 4))
        assert (np.diff(keys) > 0).all()

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            generate_index_set((3, 3), 0, 1, seed=0)
        with pytest.raises(ValueError):
            generate_index_set((3, 3), 1, 0, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(seed=seeds, sizes=st.lists(st.integers(1, 6), min_size=2, max_size=4),
           r=st.integers(1, 2), csd=st.integers(1, 3))
    def test_size_and_uniqueness_property(self, seed, sizes, r, csd):
        idx = generate_index_set(sizes, r, csd, seed)
        assert len(idx) <= min(sum(sizes) * csd * r * r, int(np.prod(sizes)))
        assert len(np.unique(idx, axis=0)) == len(idx)


class TestSliceDensity:
    def test_full_grid(self):
        idx = np.indices((3, 3, 3)).reshape(3, -1).T
        assert slice_density(idx, 1, 2) == 9

    def test_empty(self):
        assert slice_density(np.zeros((0, 3), dtype=int), 0, 0) == 0

    def test_matches_independent_tally(self):
        sizes = (5, 6, 7)
        idx = generate_index_set(sizes, 2, 3, seed=9)
        dens = slice_densities(idx, sizes)
        for mu in range(3):
            counts = tally(idx, mu)
            for j in range(sizes[mu]):
                assert slice_density(idx, mu, j) == counts[j] == dens[mu][j]


class TestValues:
    def test_zero_oracle(self):
        idx = generate_index_set((4, 4), 1, 2, seed=0)
        ss = attach_values(idx, zero_oracle(), (4, 4))
        assert (ss.values == 0).all()

    def test_uniform_rank_one_oracle(self):
        idx = generate_index_set((4, 4), 1, 2, seed=0)
        ss = attach_values(idx, tt_oracle(uniform_rank_one([4, 4])), (4, 4))
        np.testing.assert_allclose(ss.values, 0.25, rtol=1e-15)

    def test_inverse_norm_corner(self):
        ss = attach_values(np.zeros((1, 4), dtype=int), inverse_norm_entry, (3,) * 4)
        assert ss.values[0] == 0.5

    def test_sample_set_validation(self):
        with pytest.raises(ValueError, match="duplicate"):
            SampleSet((3, 3), [[0, 0], [0, 0]], [1.0, 2.0])
        with pytest.raises(ValueError, match="outside"):
            SampleSet((3, 3), [[0, 3]], [1.0])
        with pytest.raises(ValueError, match="length"):
            SampleSet((3, 3), [[0, 1]], [1.0, 2.0])

    def test_overlap(self):
        a = SampleSet((3, 3), [[0, 0], [1, 1], [2, 2]], [1, 2, 3])
        b = SampleSet((3, 3), [[0, 0], [0, 1]], [1, 2])
        assert overlap_fraction(a, b) == 0.5


class TestFileFormat:
    def test_roundtrip(self, tmp_path):
        ss = draw_sample_set((4, 5, 6), 2, 2, seed=17, oracle=inverse_norm_entry)
        path = tmp_path / "p.txt"
        write_sample_set(ss, path)
        back = read_sample_set(path)
        np.testing.assert_array_equal(back.indices, ss.indices)
        np.testing.assert_array_equal(back.values, ss.values)
        assert back.mode_sizes == ss.mode_sizes and back.seed == 17 and back.label == "P"

    def test_layout_is_one_based(self, tmp_path):
        ss = SampleSet((2, 3), [[0, 2]], [0.1], label="C")
        path = tmp_path / "c.txt"
        write_sample_set(ss, path)
        assert path.read_text().splitlines() == ["2 2 3 1 C -1", "1 3 0.10000000000000001"]

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2 2 2 P 0\n1 1 0.5\n")
        with pytest.raises(ValueError):
            read_sample_set(path)
