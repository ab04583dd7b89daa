import numpy as np
import pytest

from trihom import cellsolver as CS
from trihom import fem
from trihom import geometry as G
from trihom.errors import DisconnectedSubdomain, InvalidShape


def laminate_cell(n=64, fraction=0.5):
    return G.build_cell(G.GridSpec.square(n), G.ShapeSpec.laminate(0, fraction),
                        G.MESO)


def laminate_corrector_exact(x, s1=1.0, s2=4.0):
    """Closed-form periodic zero-mean corrector of the 1/2-1/2 laminate.

    Flux continuity forces sigma (chi' + 1) constant, periodicity fixes the
    constant to the harmonic mean, the zero mean fixes the offset.
    """
    sh = 1.0 / (0.5 / s1 + 0.5 / s2)
    slope1 = sh / s1 - 1.0
    slope2 = sh / s2 - 1.0
    chi_half = slope1 * 0.5
    # zero volume mean over [0, 1]
    offset = -0.5 * chi_half
    x = np.asarray(x)
    return np.where(x <= 0.5, offset + slope1 * x,
                    offset + chi_half + slope2 * (x - 0.5))


class TestConductivityField:
    def test_constant_bounds(self):
        geom = laminate_cell(16)
        field = CS.ConductivityField.constant(geom, 2.0)
        assert field.alpha == pytest.approx(2.0)
        assert field.beta == pytest.approx(2.0)

    def test_two_phase_bounds(self):
        geom = laminate_cell(16)
        field = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        assert field.alpha == pytest.approx(1.0)
        assert field.beta == pytest.approx(4.0)

    def test_anisotropic_matrix(self):
        geom = laminate_cell(16)
        field = CS.ConductivityField.constant(geom, [[2.0, 0.5], [0.5, 1.0]])
        eigs = np.linalg.eigvalsh([[2.0, 0.5], [0.5, 1.0]])
        assert field.alpha == pytest.approx(eigs[0])
        assert field.beta == pytest.approx(eigs[1])

    def test_rejects_asymmetric(self):
        geom = laminate_cell(16)
        with pytest.raises(ValueError):
            CS.ConductivityField.constant(geom, [[1.0, 0.3], [0.0, 1.0]])

    def test_rejects_indefinite(self):
        geom = laminate_cell(16)
        with pytest.raises(ValueError):
            CS.ConductivityField.constant(geom, [[1.0, 2.0], [2.0, 1.0]])

    def test_undefined_voxels_refused_in_problem(self):
        geom = laminate_cell(16)
        field = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        with pytest.raises(InvalidShape):
            CS.CellProblem(geom, field, 0, ("INTRA", "EXTRA"))


class TestAssemble:
    def test_constant_full_cell_zero_load(self):
        geom = G.build_cell(G.GridSpec.square(16), G.ShapeSpec.full(), G.MESO)
        coeff = CS.ConductivityField.constant(geom, 3.0)
        system = CS.assemble(CS.CellProblem(geom, coeff, 0, ("EXTRA",)))
        assert np.linalg.norm(system.rhs) == 0.0

    def test_matrix_symmetric(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        system = CS.assemble(CS.CellProblem(geom, coeff, 0,
                                            ("INTRA", "EXTRA")))
        assert abs(system.matrix - system.matrix.T).max() == 0.0

    def test_load_supported_on_interface_nodes(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        system = CS.assemble(CS.CellProblem(geom, coeff, 0,
                                            ("INTRA", "EXTRA")))
        b = system.rhs.reshape(32, 32)
        nonzero_rows = np.unique(np.nonzero(np.abs(b) > 1e-14)[0])
        assert set(nonzero_rows) == {0, 16}

    def test_disconnected_active_set_rejected(self):
        # two disjoint inclusions as active set: not a connected subdomain
        geom = G.build_cell(G.GridSpec.square(32),
                            G.ShapeSpec.ball((0.5, 0.5), 0.2), G.MESO)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0})
        problem = CS.CellProblem(geom, coeff, 0, ("INTRA",))
        with pytest.raises(DisconnectedSubdomain):
            CS.solve_corrector(problem)


class TestCompatibility:
    @pytest.mark.parametrize("shape,active", [
        (G.ShapeSpec.full(), ("EXTRA",)),
        (G.ShapeSpec.laminate(0, 0.5), ("INTRA", "EXTRA")),
        (G.ShapeSpec.ball((0.5, 0.5), 0.25), ("EXTRA",)),
    ])
    def test_assembled_load_annihilates_constants(self, shape, active):
        geom = G.build_cell(G.GridSpec.square(48), shape, G.MESO)
        coeff = CS.ConductivityField.from_labels(
            geom, {lbl: s for lbl, s in zip(active, (1.0, 4.0))})
        for q in range(2):
            system = CS.assemble(CS.CellProblem(geom, coeff, q, active))
            bnorm = np.linalg.norm(system.rhs)
            if bnorm > 0:
                assert CS.check_compatibility(system) <= 1e-12 * bnorm

    def test_corrupted_load_detected(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        system = CS.assemble(CS.CellProblem(geom, coeff, 0,
                                            ("INTRA", "EXTRA")))
        system.rhs[5] += 1.0
        assert CS.check_compatibility(system) == pytest.approx(1.0, abs=1e-10)


class TestSolveCorrector:
    def test_full_constant_corrector_vanishes(self):
        geom = G.build_cell(G.GridSpec.square(32), G.ShapeSpec.full(), G.MESO)
        coeff = CS.ConductivityField.constant(geom, 2.0)
        for q in range(2):
            cor = CS.solve_corrector(CS.CellProblem(geom, coeff, q,
                                                    ("EXTRA",)))
            assert np.abs(cor.values).max() <= 1e-12

    def test_laminate_matches_closed_form(self):
        geom = laminate_cell(128)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        cor = CS.solve_corrector(
            CS.CellProblem(geom, coeff, 0, ("INTRA", "EXTRA")), tol=1e-12)
        x = np.arange(128) / 128.0
        exact = laminate_corrector_exact(x)
        assert np.abs(cor.values[:, 0] - exact).max() < 1e-8
        # constant along the layers
        assert np.abs(cor.values - cor.values[:, :1]).max() < 1e-10

    def test_laminate_tangential_direction_trivial(self):
        geom = laminate_cell(64)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        cor = CS.solve_corrector(CS.CellProblem(geom, coeff, 1,
                                                ("INTRA", "EXTRA")))
        assert np.abs(cor.values).max() <= 1e-12

    def test_zero_mean_over_active_subdomain(self):
        geom = G.build_cell(G.GridSpec.square(48),
                            G.ShapeSpec.ball((0.5, 0.5), 0.3), G.MESO)
        coeff = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        cor = CS.solve_corrector(CS.CellProblem(geom, coeff, 0, ("EXTRA",)))
        grid = fem.NodeGrid(geom.spec.resolution, geom.spec.lengths, True)
        mean = fem.field_integral(grid, cor.values, geom.mask("EXTRA"))
        assert abs(mean) <= 1e-12

    def test_blocked_direction_rejected(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        with pytest.raises(DisconnectedSubdomain):
            CS.solve_corrector(CS.CellProblem(geom, coeff, 0, ("EXTRA",)))

    def test_residual_reported_below_tolerance(self):
        geom = G.build_cell(G.GridSpec.square(48),
                            G.ShapeSpec.ball((0.5, 0.5), 0.25), G.MESO)
        coeff = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        cor = CS.solve_corrector(CS.CellProblem(geom, coeff, 1, ("EXTRA",)),
                                 tol=1e-10)
        assert cor.residual <= 1e-10

    def test_coefficient_scaling_leaves_corrector(self):
        geom = laminate_cell(64)
        c1 = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                     "EXTRA": 4.0})
        c2 = c1.scaled(2.0)
        a = CS.solve_corrector(CS.CellProblem(geom, c1, 0, ("INTRA", "EXTRA")))
        b = CS.solve_corrector(CS.CellProblem(geom, c2, 0, ("INTRA", "EXTRA")))
        assert np.abs(a.values - b.values).max() < 1e-10


class TestSolveAllCorrectors:
    def test_full_constant_all_zero(self):
        geom = G.build_cell(G.GridSpec.square(24), G.ShapeSpec.full(), G.MESO)
        coeff = CS.ConductivityField.constant(geom, 1.5)
        cors = CS.solve_all_correctors(geom, coeff, ("EXTRA",))
        assert len(cors) == 2
        assert all(np.abs(c.values).max() <= 1e-12 for c in cors)

    def test_disk_correctors_related_by_rotation(self):
        geom = G.build_cell(G.GridSpec.square(64),
                            G.ShapeSpec.ball((0.5, 0.5), 0.25), G.MESO)
        coeff = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        c0, c1 = CS.solve_all_correctors(geom, coeff, ("EXTRA",), tol=1e-11)
        # rotating by 90 degrees about the cell center maps axis 0 to axis 1
        # and node (i, j) to ((n - j) mod n, i), so chi1 at the rotated node
        # equals chi0 at the original one
        n = 64
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rotated = c1.values[(n - jj) % n, ii]
        assert np.abs(rotated - c0.values).max() < 1e-8

    def test_matches_per_direction_solves(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        cors = CS.solve_all_correctors(geom, coeff, ("INTRA", "EXTRA"))
        single = CS.solve_corrector(CS.CellProblem(geom, coeff, 0,
                                                   ("INTRA", "EXTRA")))
        assert np.abs(cors[0].values - single.values).max() < 1e-12


class TestVariationalStructure:
    def test_energy_minimality_under_perturbations(self):
        geom = G.build_cell(G.GridSpec.square(48),
                            G.ShapeSpec.ball((0.5, 0.5), 0.3), G.MESO)
        coeff = CS.ConductivityField.from_labels(geom, {"EXTRA": 1.0})
        problem = CS.CellProblem(geom, coeff, 0, ("EXTRA",))
        cor = CS.solve_corrector(problem, tol=1e-11)
        e_opt = CS.corrector_energy(problem, cor.values)
        for factor in (0.0, 0.9, 1.1):
            e_pert = CS.corrector_energy(problem, factor * cor.values)
            assert e_opt <= e_pert + 1e-12 * abs(e_pert)

    def test_periodic_identification_is_single_dof(self):
        geom = laminate_cell(32)
        coeff = CS.ConductivityField.from_labels(geom, {"INTRA": 1.0,
                                                        "EXTRA": 4.0})
        cor = CS.solve_corrector(CS.CellProblem(geom, coeff, 0,
                                                ("INTRA", "EXTRA")))
        # node grid stores one value per wrap class: shape equals resolution
        assert cor.values.shape == (32, 32)
