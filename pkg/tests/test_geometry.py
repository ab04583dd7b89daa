import numpy as np
import pytest

from trihom import geometry as G
from trihom.errors import (DisconnectedSubdomain, EmptyInterface,
                           InvalidShape, UnknownLabel)

DISK_AREA = np.pi * 0.25 ** 2       # analytic oracle, r = 0.25
DISK_PERIMETER = 2 * np.pi * 0.25


def build(n, shape, level=G.MESO):
    return G.build_cell(G.GridSpec.square(n), shape, level)


class TestGridSpec:
    def test_rejects_bad_dim(self):
        with pytest.raises(InvalidShape):
            G.GridSpec(dim=1, resolution=(8,), lengths=(1.0,))

    def test_rejects_coarse_grid(self):
        with pytest.raises(InvalidShape):
            G.GridSpec(dim=2, resolution=(3, 8), lengths=(1.0, 1.0))

    def test_rejects_nonpositive_lengths(self):
        with pytest.raises(InvalidShape):
            G.GridSpec(dim=2, resolution=(8, 8), lengths=(1.0, 0.0))


class TestBuildCell:
    def test_full_cell_single_label(self):
        geom = build(32, G.ShapeSpec.full())
        assert np.all(geom.labels == G.BACKGROUND)
        assert geom.interface == []

    def test_disk_volume_within_two_percent(self):
        geom = build(128, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        vol = G.measure_volume(geom, "INTRA")
        assert abs(vol - DISK_AREA) / DISK_AREA < 0.02

    def test_even_laminate_fractions_exact(self):
        geom = build(64, G.ShapeSpec.laminate(1, 0.5))
        assert G.measure_volume(geom, "INTRA") == pytest.approx(0.5, abs=0)
        assert G.measure_volume(geom, "EXTRA") == pytest.approx(0.5, abs=0)

    def test_ball_radius_validation(self):
        with pytest.raises(InvalidShape):
            build(32, G.ShapeSpec.ball((0.5, 0.5), 0.6))

    def test_laminate_fraction_validation(self):
        with pytest.raises(InvalidShape):
            build(32, G.ShapeSpec.laminate(0, 1.2))

    def test_wavy_laminate_stays_inside(self):
        with pytest.raises(InvalidShape):
            build(32, G.ShapeSpec.laminate(0, 0.5, wave_amplitude=0.6))

    def test_rounded_box(self):
        geom = build(64, G.ShapeSpec.rounded_box((0.5, 0.5), (0.2, 0.3), 0.05))
        vol = G.measure_volume(geom, "INTRA")
        # analytic area of a rounded rectangle
        exact = 0.4 * 0.6 - (4 - np.pi) * 0.05 ** 2
        assert abs(vol - exact) / exact < 0.02

    def test_3d_ball(self):
        spec = G.GridSpec(dim=3, resolution=(48,) * 3, lengths=(1.0,) * 3)
        geom = G.build_cell(spec, G.ShapeSpec.ball((0.5,) * 3, 0.3), G.MESO)
        vol = G.measure_volume(geom, "INTRA")
        exact = 4.0 / 3.0 * np.pi * 0.3 ** 3
        assert abs(vol - exact) / exact < 0.02
        area = G.measure_interface(geom)
        exact_area = 4.0 * np.pi * 0.3 ** 2
        assert abs(area - exact_area) / exact_area < 0.02


class TestMeasures:
    def test_volume_additivity_exact(self):
        spec = G.GridSpec(dim=2, resolution=(96, 64), lengths=(2.0, 1.5))
        geom = G.build_cell(spec, G.ShapeSpec.ball((1.0, 0.7), 0.4), G.MESO)
        total = (G.measure_volume(geom, "INTRA")
                 + G.measure_volume(geom, "EXTRA"))
        assert total == pytest.approx(3.0, abs=1e-12)

    def test_unknown_label(self):
        geom = build(32, G.ShapeSpec.full())
        with pytest.raises(UnknownLabel):
            G.measure_volume(geom, "CYTOSOL")

    def test_laminate_interface_length(self):
        geom = build(64, G.ShapeSpec.laminate(1, 0.5))
        assert G.measure_interface(geom) == pytest.approx(2.0, abs=1e-12)

    def test_disk_perimeter(self):
        geom = build(256, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        per = G.measure_interface(geom)
        assert abs(per - DISK_PERIMETER) / DISK_PERIMETER < 0.02

    def test_full_cell_has_no_interface(self):
        geom = build(32, G.ShapeSpec.full())
        with pytest.raises(EmptyInterface):
            G.measure_interface(geom)
        with pytest.raises(EmptyInterface):
            G.membrane_ratio(geom)

    def test_membrane_ratio_is_interface_over_volume(self):
        geom = build(256, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        mu = G.membrane_ratio(geom)
        assert mu == pytest.approx(G.measure_interface(geom), rel=1e-12)
        assert abs(mu - DISK_PERIMETER) / DISK_PERIMETER < 0.02

    def test_membrane_ratio_scales_with_cell_volume(self):
        spec = G.GridSpec(dim=2, resolution=(64, 64), lengths=(2.0, 1.0))
        geom = G.build_cell(spec, G.ShapeSpec.laminate(0, 0.5), G.MESO)
        # two flat interfaces of length 1LO each in a cell of volume 2
        assert G.measure_interface(geom) == pytest.approx(2.0, abs=1e-12)
        assert G.membrane_ratio(geom) == pytest.approx(1.0, abs=1e-12)

    def test_staircase_equals_reconstructed_on_flat_laminate(self):
        geom = build(64, G.ShapeSpec.laminate(0, 0.5))
        assert (G.measure_interface(geom, "staircase")
                == pytest.approx(G.measure_interface(geom), abs=1e-12))

    def test_facet_normals_point_outward(self):
        geom = build(128, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        for f in geom.interface[::7]:
            radial = f.position - 0.5
            radial /= np.linalg.norm(radial)
            assert radial @ f.normal > 0.9


class TestRefinement:
    def test_disk_measures_refine_monotonically(self):
        vol_err, per_err = [], []
        for n in (32, 64, 128, 256):
            geom = build(n, G.ShapeSpec.ball((0.5, 0.5), 0.25))
            vol_err.append(abs(G.measure_volume(geom, "INTRA") - DISK_AREA))
            per_err.append(abs(G.measure_interface(geom) - DISK_PERIMETER))
        assert all(b < a for a, b in zip(vol_err, vol_err[1:]))
        assert all(b < a for a, b in zip(per_err, per_err[1:]))


class TestPeriodicity:
    @pytest.mark.parametrize("offset", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
    def test_translated_center_identical_labels(self, offset):
        base = build(64, G.ShapeSpec.ball((0.3, 0.6), 0.25))
        moved = build(64, G.ShapeSpec.ball((0.3 + offset[0], 0.6 + offset[1]),
                                           0.25))
        assert np.array_equal(base.labels, moved.labels)

    def test_wrapping_inclusion_allowed(self):
        geom = build(64, G.ShapeSpec.ball((0.0, 0.0), 0.25))
        vol = G.measure_volume(geom, "INTRA")
        assert abs(vol - DISK_AREA) / DISK_AREA < 0.02


class TestConnectivity:
    def test_laminate_layer_is_periodic_connected(self):
        geom = build(64, G.ShapeSpec.laminate(0, 0.5))
        assert G.is_connected(geom.mask("INTRA"))
        assert G.is_connected(geom.mask("EXTRA"))

    def test_laminate_percolates_along_layers_only(self):
        geom = build(64, G.ShapeSpec.laminate(0, 0.5))
        assert G.percolates(geom.mask("EXTRA"), 1)
        assert not G.percolates(geom.mask("EXTRA"), 0)

    def test_full_cross_section_inclusion_blocks_percolation(self):
        geom = build(64, G.ShapeSpec.laminate(0, 0.4))
        # the inclusion slab spans the full x2 cross-section: the conducting
        # complement cannot percolate along x1 and the solver refuses it
        assert not G.percolates(geom.mask("EXTRA"), 0)

    def test_disk_matrix_percolates_everywhere(self):
        geom = build(64, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        for axis in (0, 1):
            assert G.percolates(geom.mask("EXTRA"), axis)
        assert not G.percolates(geom.mask("INTRA"), 0)

    def test_covering_inclusion_rejected_at_build(self):
        spec = G.GridSpec.square(32)
        shape = G.ShapeSpec(kind=G.FULL)
        geom = G.build_cell(spec, shape, G.MESO)
        # FULL keeps everything conducting; an inclusion covering the whole
        # cell is rejected because the background disappears
        big = G.ShapeSpec.rounded_box((0.5, 0.5), (0.49, 0.49), 0.05)
        labels = G.build_cell(spec, big, G.MESO).labels
        assert np.any(labels == G.BACKGROUND)  # thin frame survives
        assert geom is not None


class TestExportRoundTrip:
    def test_labels_field_roundtrip(self, tmp_path):
        from trihom import io
        geom = build(32, G.ShapeSpec.ball((0.5, 0.5), 0.25))
        path = tmp_path / "labels.fld"
        io.write_field(path, geom.labels, kind="labels",
                       lengths=geom.spec.lengths, legend="EXTRA:0;INTRA:1")
        arr, meta = io.read_field(path)
        assert np.array_equal(arr, geom.labels)
        assert meta["legend"] == "EXTRA:0;INTRA:1"
        assert meta["lengths"] == (1.0, 1.0)
