import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synprob.core import (
    BoundsError,
    ChannelVolume,
    MarkerQuery,
    PunctaSize,
    QuerySpec,
    SearchMode,
    VoxelGeometry,
    physical_to_voxel,
    slice_neighbor_sets,
    slice_span,
    voxel_to_physical,
    window_halfwidth,
)

G100 = VoxelGeometry(100.0, 70.0)


class TestPhysicalToVoxel:
    def test_origin(self):
        assert physical_to_voxel((0, 0, 0), G100) == (0, 0, 0)

    def test_fine_lattice(self):
        g = VoxelGeometry(2.33, 70.0)
        assert physical_to_voxel((0.233, 0.233, 0.070), g) == (100, 100, 1)

    def test_floor_inside_first_voxel(self):
        assert physical_to_voxel((0.05, 0.05, 0.0), G100) == (0, 0, 0)

    def test_out_of_bounds_names_axis(self):
        with pytest.raises(BoundsError, match="y"):
            physical_to_voxel((0.1, 5.0, 0.0), G100, dims=(10, 10, 10))
        with pytest.raises(BoundsError, match="z"):
            physical_to_voxel((0.1, 0.1, -0.01), G100)

    @given(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 500),
           st.sampled_from([2.33, 5.0, 100.0, 127.3]), st.sampled_from([35.0, 70.0, 200.0]))
    def test_round_trip(self, x, y, z, xy_nm, z_nm):
        g = VoxelGeometry(xy_nm, z_nm)
        assert physical_to_voxel(voxel_to_physical((x, y, z), g), g) == (x, y, z)


class TestWindowSizes:
    def test_two_pixel_punctum_gets_3x3(self):
        assert window_halfwidth(0.2, G100) == 1

    def test_coarse_pixels(self):
        assert window_halfwidth(0.2, VoxelGeometry(200.0, 70.0)) == 1

    @pytest.mark.parametrize("extent", [0.01, 0.05, 0.0999])
    def test_subpixel_extent_is_identity(self, extent):
        assert window_halfwidth(extent, G100) == 0

    def test_halfwidth_covers_punctum(self):
        # a punctum of the stated diameter fits in the (2W+1)-pixel window
        for ext in (0.2, 0.3, 0.45, 0.6):
            w = window_halfwidth(ext, G100)
            assert (2 * w + 1) * 0.1 >= ext - 1e-9

    @pytest.mark.parametrize("z,span,sets", [
        (0.21, 3, [(-1, 1)]),
        (0.07, 1, [()]),
        (0.14, 2, [(-1,), (1,)]),
    ])
    def test_slice_span_examples(self, z, span, sets):
        assert slice_span(z, G100) == span
        assert slice_neighbor_sets(span) == sets

    @given(st.floats(0.001, 5.0), st.floats(0.001, 5.0))
    def test_monotone_in_extent(self, a, b):
        lo, hi = sorted((a, b))
        assert window_halfwidth(lo, G100) <= window_halfwidth(hi, G100)
        assert slice_span(lo, G100) <= slice_span(hi, G100)
        assert slice_span(lo, G100) >= 1

    @given(st.integers(1, 9))
    def test_neighbor_sets_cover_span(self, s):
        for ns in slice_neighbor_sets(s):
            assert 0 not in ns
            assert len(ns) == s - 1
            covered = ns + (0,)
            assert max(covered) - min(covered) + 1 == s

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            window_halfwidth(0.0, G100)
        with pytest.raises(ValueError):
            slice_span(-1.0, G100)


class TestTypes:
    def test_geometry_positive(self):
        with pytest.raises(ValueError):
            VoxelGeometry(0.0, 70.0)
        with pytest.raises(ValueError):
            VoxelGeometry(100.0, -1.0)

    def test_geometry_dict_round_trip(self):
        assert VoxelGeometry.from_dict(G100.to_dict()) == G100

    def test_channel_validation(self):
        with pytest.raises(ValueError, match="negative"):
            ChannelVolume("a", G100, -np.ones((1, 2, 2)))
        with pytest.raises(ValueError, match="non-finite"):
            ChannelVolume("a", G100, np.full((1, 2, 2), np.nan))
        with pytest.raises(ValueError):
            ChannelVolume("a", G100, np.ones((2, 2)))

    def test_channel_is_immutable_and_reports_xyz(self):
        c = ChannelVolume("a", G100, np.zeros((2, 3, 4), dtype=np.uint16))
        assert c.dims == (4, 3, 2)
        assert c.data.dtype == np.float64
        with pytest.raises(ValueError):
            c.data[0, 0, 0] = 1

    def test_query_roles_and_anchor(self):
        s = PunctaSize(0.2, 0.21)
        q = QuerySpec("q", (MarkerQuery("syn", s),), (MarkerQuery("psd", s), MarkerQuery("nr1", s)))
        assert q.presynaptic[0].search_mode is SearchMode.GRID_SEARCH
        assert all(m.search_mode is SearchMode.COLOCALIZED for m in q.postsynaptic)
        assert q.anchor.channel_name == "psd"
        assert SearchMode.GRID_SEARCH.k == 3 and SearchMode.COLOCALIZED.k == 1

    def test_query_rejects_empty_side_and_duplicates(self):
        s = PunctaSize(0.2, 0.21)
        with pytest.raises(ValueError, match="at least one"):
            QuerySpec("q", (), (MarkerQuery("psd", s),))
        with pytest.raises(ValueError, match="twice"):
            QuerySpec("q", (MarkerQuery("psd", s),), (MarkerQuery("psd", s),))

    def test_puncta_size_positive(self):
        with pytest.raises(ValueError):
            PunctaSize(0.0, 0.2)
