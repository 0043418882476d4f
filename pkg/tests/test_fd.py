import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ramplab.fd import (
    FD1,
    FD2,
    MetanetFDParams,
    ParabolicFD,
    metanet_equilibrium_speed,
    parabola_critical_point,
    parabola_flow,
    synth_fd_samples,
)

REF = ParabolicFD(-1.0, 66.0)


class TestParabola:
    @pytest.mark.parametrize("rho, q", [(0.0, 0.0), (33.0, 1089.0), (66.0, 0.0)])
    def test_flow(self, rho, q):
        assert parabola_flow(REF, rho) == pytest.approx(q, abs=1e-12)

    def test_flow_vectorised(self):
        np.testing.assert_allclose(parabola_flow(REF, np.array([0.0, 33.0, 66.0])), [0.0, 1089.0, 0.0])

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            parabola_flow(REF, -1.0)

    @pytest.mark.parametrize(
        "a, b, expected",
        [(-1.0, 66.0, (33.0, 1089.0)), (-2.0, 132.0, (33.0, 2178.0)), (-0.5, 33.0, (33.0, 544.5))],
    )
    def test_critical_point(self, a, b, expected):
        assert parabola_critical_point(ParabolicFD(a, b)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("a, b", [(1.0, 66.0), (0.0, 66.0), (-1.0, 0.0), (-1.0, -3.0)])
    def test_invalid_signs(self, a, b):
        with pytest.raises(ValueError):
            ParabolicFD(a, b)

    def test_from_critical_point(self):
        fd = ParabolicFD.from_critical_point(28.0, 3600.0)
        assert parabola_critical_point(fd) == pytest.approx((28.0, 3600.0), rel=1e-12)
        assert fd.jam_density == pytest.approx(56.0)

    @settings(max_examples=200)
    @given(
        a=st.floats(-10, -1e-3),
        b=st.floats(1e-2, 500),
        u1=st.floats(0, 1),
        u2=st.floats(0, 1),
        t=st.floats(0, 1),
    )
    def test_concave(self, a, b, u1, u2, t):
        fd = ParabolicFD(a, b)
        r1, r2 = sorted((u1 * fd.jam_density, u2 * fd.jam_density))
        lhs = parabola_flow(fd, t * r1 + (1 - t) * r2)
        rhs = t * parabola_flow(fd, r1) + (1 - t) * parabola_flow(fd, r2)
        assert lhs >= rhs - 1e-9 * max(1.0, abs(rhs))

    @given(a=st.floats(-10, -1e-3), b=st.floats(1e-2, 500), c=st.floats(1e-3, 1e3))
    def test_argmax_scale_invariant(self, a, b, c):
        r0 = ParabolicFD(a, b).critical_density
        assert ParabolicFD(c * a, c * b).critical_density == pytest.approx(r0, rel=1e-12)

    @given(a=st.floats(-10, -1e-3), b=st.floats(1e-2, 500), u=st.floats(0, 1))
    def test_critical_flow_is_maximum(self, a, b, u):
        fd = ParabolicFD(a, b)
        rho, q = parabola_critical_point(fd)
        assert parabola_flow(fd, u * fd.jam_density) <= q * (1 + 1e-12)


class TestMetanetFD:
    def test_free_speed_at_zero(self):
        assert metanet_equilibrium_speed(FD1, 0.0) == 107.0

    @pytest.mark.parametrize("fd, rho, v, q", [(FD1, 29.0, 68.97, 2000.0), (FD2, 26.0, 69.23, 1800.0)])
    def test_capacity_consistency(self, fd, rho, v, q):
        speed = metanet_equilibrium_speed(fd, rho)
        assert speed == pytest.approx(v, abs=0.01)
        assert rho * speed == pytest.approx(q, rel=5e-3)

    def test_min_speed_clamp(self):
        assert metanet_equilibrium_speed(FD1, 180.0) == FD1.v_min

    def test_array_input(self):
        v = metanet_equilibrium_speed(FD1, np.array([0.0, 29.0, 180.0]))
        assert v.shape == (3,)
        assert v[0] == 107.0 and v[-1] == 7.0

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            metanet_equilibrium_speed(FD1, -0.1)

    @given(r1=st.floats(0, 180), r2=st.floats(0, 180))
    def test_monotone(self, r1, r2):
        lo, hi = sorted((r1, r2))
        assert metanet_equilibrium_speed(FD2, hi) <= metanet_equilibrium_speed(FD2, lo)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(v_free=107, rho_cr=29, alpha=2.2768, rho_jam=180, q_cap=2500),
            dict(v_free=107, rho_cr=29, alpha=2.2768, rho_jam=20, q_cap=2000),
            dict(v_free=107, rho_cr=29, alpha=-1, rho_jam=180, q_cap=2000),
            dict(v_free=5, rho_cr=29, alpha=2.2768, rho_jam=180, q_cap=2000),
        ],
    )
    def test_invalid_params(self, kwargs):
        with pytest.raises(ValueError):
            MetanetFDParams(**kwargs)

    def test_consistency_tolerance(self):
        q = 29 * 107 * math.exp(-1 / 2.2768)
        MetanetFDParams(107, 29, 2.2768, 180, q * 1.004)
        with pytest.raises(ValueError):
            MetanetFDParams(107, 29, 2.2768, 180, q * 1.006)


class TestSynthSamples:
    def test_constant_noiseless(self):
        assert synth_fd_samples(REF, [33.0] * 5) == [(33.0, 1089.0)] * 5

    def test_empty(self):
        assert synth_fd_samples(REF, []) == []

    def test_deterministic(self):
        rho = 33 + 10 * np.sin(np.linspace(0, 6, 50))
        assert synth_fd_samples(REF, rho, 0.05, seed=3) == synth_fd_samples(REF, rho, 0.05, seed=3)
        assert synth_fd_samples(REF, rho, 0.05, seed=3) != synth_fd_samples(REF, rho, 0.05, seed=4)

    def test_noise_is_multiplicative(self):
        rho = np.full(20000, 33.0)
        q = np.array([s[1] for s in synth_fd_samples(REF, rho, 0.05, seed=0)])
        assert np.std(q / 1089.0 - 1.0) == pytest.approx(0.05, rel=0.05)

    def test_density_outside_parabola_rejected(self):
        with pytest.raises(ValueError):
            synth_fd_samples(REF, [70.0])
