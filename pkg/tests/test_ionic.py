import numpy as np
import pytest

from trihom.ionic import (FhnParams, audit_assumptions, h_gate, i1, i2,
                          i_ion)


class TestParams:
    def test_defaults_valid(self):
        p = FhnParams()
        assert p.lam < 0 and 0 < p.theta < 1

    @pytest.mark.parametrize("kwargs", [
        dict(a=-0.1), dict(b=-1.0), dict(lam=0.5), dict(lam=0.0),
        dict(theta=0.0), dict(theta=1.0),
    ])
    def test_constraints_enforced(self, kwargs):
        with pytest.raises(ValueError):
            FhnParams(**kwargs)


class TestCurrents:
    def test_rest_state(self):
        p = FhnParams()
        assert i_ion(0.0, 0.0, p) == 0.0
        assert h_gate(0.0, 0.0, p) == 0.0

    def test_threshold_zero(self):
        p = FhnParams(theta=0.25)
        assert i_ion(0.25, 0.0, p) == 0.0

    def test_polynomial_values(self):
        p = FhnParams(lam=-1.0, theta=0.25)
        assert i_ion(1.0, 0.0, p) == 0.0
        # -1 * 0.5 * 0.5 * 0.25 + 0.2 = 0.1375
        assert i_ion(0.5, 0.2, p) == pytest.approx(0.1375, abs=1e-15)

    def test_gate_linear(self):
        p = FhnParams(a=0.3, b=0.4)
        assert h_gate(1.0, 0.0, p) == pytest.approx(0.3)
        assert h_gate(0.5, 0.25, FhnParams(a=0.2, b=0.4)) == 0.0

    def test_decomposition_exact(self):
        p = FhnParams()
        rng = np.random.default_rng(7)
        v = rng.normal(size=100)
        w = rng.normal(size=100)
        assert np.array_equal(i_ion(v, w, p), i1(v, p) + i2(w, p))

    def test_gating_part_linear(self):
        p = FhnParams()
        w1, w2 = 0.3, -1.7
        assert i2(w1 + w2, p) == pytest.approx(i2(w1, p) + i2(w2, p),
                                               rel=1e-14)

    def test_cubic_leading_coefficient(self):
        p = FhnParams(lam=-1.0)
        v = 1e3
        assert i1(v, p) / v ** 3 == pytest.approx(1.0, rel=1e-2)
        assert i1(-v, p) / (-v) ** 3 == pytest.approx(1.0, rel=1e-2)

    def test_vectorized(self):
        p = FhnParams()
        v = np.linspace(-1, 1, 11)
        w = np.zeros(11)
        out = i_ion(v, w, p)
        assert out.shape == (11,)


class TestAudit:
    def test_cubic_ratio_at_large_amplitude(self):
        # |I1(v)| / |v|^3 = (1 -/+ 1/|v|)(1 -/+ theta/|v|), so on
        # 10 <= |v| <= 100 the ratio lives in [0.8775, 1.1275] and tightens
        # toward 1 as |v| grows
        p = FhnParams(lam=-1.0, theta=0.25)
        v = np.linspace(10.0, 100.0, 91)
        for sign in (1.0, -1.0):
            ratios = np.abs(i1(sign * v, p)) / np.abs(v) ** 3
            assert np.all(ratios >= 0.8775 - 1e-12)
            assert np.all(ratios <= 1.1275 + 1e-12)
        wide = np.abs(i1(1e3, p)) / 1e9
        assert abs(wide - 1.0) < 2e-3

    def test_shifted_cubic_monotone(self):
        p = FhnParams()
        audit = audit_assumptions(p, box=(-2.0, 2.0, -2.0, 2.0))
        assert audit.monotone_after_shift
        z = np.linspace(-2.0, 2.0, 301)
        f = i1(z, p) + audit.beta1 * z
        assert np.all(np.diff(f) > 0)

    def test_gate_triangle_inequality(self):
        p = FhnParams(a=0.3, b=0.5)
        audit = audit_assumptions(p)
        rng = np.random.default_rng(3)
        v = rng.uniform(-3, 3, 500)
        w = rng.uniform(-3, 3, 500)
        assert np.all(np.abs(h_gate(v, w, p))
                      <= audit.alpha3 * (np.abs(v) + np.abs(w) + 1) + 1e-12)

    def test_reported_constants_are_witnesses(self):
        p = FhnParams()
        audit = audit_assumptions(p)
        assert audit.r == 4
        assert audit.alpha1 > 0
        assert np.isfinite(audit.cubic_lower_radius)
        # upper growth with the sampled constant holds on the box
        v = np.linspace(*audit.box[:2], 201)
        assert np.all(np.abs(i1(v, p))
                      <= audit.alpha1 * (np.abs(v) ** 3 + 1) + 1e-12)
        # lower growth holds beyond the reported radius
        big = np.linspace(audit.cubic_lower_radius, 100.0, 200)
        assert np.all(np.abs(i1(big, p)) * audit.alpha1
                      >= np.abs(big) ** 3 - 1e-9)

    def test_coercivity_witness_positive_with_gate(self):
        audit = audit_assumptions(FhnParams(a=0.1, b=0.5))
        assert audit.alpha5 >= 0.0
        assert not audit.violations

    def test_strong_monotonicity_constant_finite(self):
        audit = audit_assumptions(FhnParams())
        assert np.isfinite(audit.strong_monotonicity_C)
        assert audit.strong_monotonicity_C > 0
