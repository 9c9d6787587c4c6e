import math

import numpy as np
import pytest

from cqsim.models import ToyParams
from cqsim.zerodim import (
    QuadratureError,
    SourceTriple,
    free_propagators,
    interaction_terms,
    moment_perturbative,
    moment_quadrature,
    vertex_factors,
    wick_moment,
    z_free,
)

FREE = ToyParams(m_phi=1.0, m_q=1.0, lam=0.0, hbar=1.0, d2=1.0)
# shipped small-coupling regime for the interacting checks
SMALL = ToyParams(m_phi=1.0, m_q=1.0, lam=0.05, hbar=1.0, d2=0.1)


def dfact(n):
    return 1 if n <= 1 else n * dfact(n - 2)


class TestFreeTheory:
    def test_zero_sources_give_prefactor(self):
        z0 = z_free(FREE, SourceTriple())
        # (-2 pi i hbar/m^2)(2 pi i hbar/m^2)(pi D2/m_q^4) = 4 pi^3
        assert z0 == pytest.approx(4.0 * math.pi**3)

    def test_source_curvature_gives_qq_propagator(self):
        # d^2 log Z / dJ_q^2 at 0 is 1/(D2 m_q^4); with the source coupling
        # -J_q q / D2 this yields <qq> = D2/m_q^4
        p = ToyParams(m_phi=1.0, m_q=1.3, lam=0.0, hbar=1.0, d2=0.7)
        eps = 1e-4
        lz = lambda j: np.log(z_free(p, SourceTriple(j_q=j)))
        curvature = (lz(eps) - 2 * lz(0.0) + lz(-eps)).real / eps**2
        assert curvature == pytest.approx(1.0 / (p.d2 * p.m_q**4), rel=1e-6)
        assert p.d2**2 * curvature == pytest.approx(free_propagators(p)[2], rel=1e-6)

    def test_plus_minus_sources_are_pure_phases(self):
        val = z_free(FREE, SourceTriple(j_plus=0.8, j_minus=0.8))
        assert abs(val) == pytest.approx(abs(z_free(FREE, SourceTriple())))

    def test_propagators(self):
        p = ToyParams(m_phi=1.0, m_q=1.0, lam=0.0, hbar=1.0, d2=1.0)
        gp, gm, gq = free_propagators(p)
        assert gp == -1j and gm == 1j and gq == 1.0
        p2 = ToyParams(m_phi=2.0, m_q=1.5, lam=0.0, hbar=0.5, d2=0.8)
        gp2, gm2, gq2 = free_propagators(p2)
        assert gp2 == pytest.approx(-0.5j / 4.0)
        assert gm2 == pytest.approx(+0.5j / 4.0)
        assert gq2 == pytest.approx(0.8 / 1.5**4)
        assert wick_moment((0, 1, 1), params=p2) == 0.0  # no cross pairing


class TestVertexFactors:
    def test_zero_coupling(self):
        v = vertex_factors(ToyParams(1.0, 1.0, 0.0, 1.0, 1.0))
        assert all(val == 0.0 for val in v.values())

    def test_printed_values(self):
        v = vertex_factors(ToyParams(1.0, 1.0, 1.0, 1.0, 1.0))
        # tri: -(2!/(4 D2)) lam m_q^2 = -0.5; sextic: -(lam^2 4! 2!)/(4 D2) = -12
        assert v["tri_plus"] == pytest.approx(-0.5)
        assert v["tri_minus"] == pytest.approx(-0.5)
        assert v["sextic_plus"] == pytest.approx(-12.0)
        assert v["sextic_minus"] == pytest.approx(-12.0)

    def test_interaction_terms_match_vertex_normalization(self):
        # vertex value = coefficient * n! m! l! for each monomial
        p = ToyParams(1.0, 1.2, 0.7, 1.0, 0.9)
        v = vertex_factors(p)
        terms = {powers: c for c, powers in interaction_terms(p)}
        assert terms[(1, 2, 0)] * math.factorial(2) * math.factorial(1) == pytest.approx(
            v["tri_plus"]
        )
        assert terms[(2, 4, 0)] * math.factorial(4) * math.factorial(2) == pytest.approx(
            v["sextic_plus"]
        )


class TestWickEngine:
    def test_matches_isserlis_up_to_degree_eight(self):
        gp, gm, gq = free_propagators(FREE)
        for a in range(0, 9, 2):
            for b in range(0, 9 - a, 2):
                for c in range(0, 9 - a - b, 2):
                    w = wick_moment((a, b, c), params=FREE)
                    exact = (
                        dfact(a - 1) * gq ** (a // 2)
                        * dfact(b - 1) * gp ** (b // 2)
                        * dfact(c - 1) * gm ** (c // 2)
                    )
                    assert w == exact, (a, b, c)

    def test_odd_powers_vanish(self):
        assert wick_moment((1, 2, 0), params=FREE) == 0.0
        assert wick_moment((3, 0, 2), params=FREE) == 0.0

    def test_degree_cap(self):
        with pytest.raises(ValueError, match="cap"):
            wick_moment((14, 0, 0), params=FREE)

    def test_cross_propagators_honored(self):
        # engine is generic: with a nonzero q/phi+ contraction the pairing
        # count must reproduce the full Isserlis sum for <q^2 phi+^2>
        props = np.array([[2.0, 0.5, 0.0], [0.5, 3.0, 0.0], [0.0, 0.0, 1.0]], dtype=complex)
        val = wick_moment((2, 2, 0), propagators=props)
        # pairings: (qq)(pp) + 2 (qp)^2
        assert val == pytest.approx(2.0 * 3.0 + 2.0 * 0.5**2)


class TestPerturbative:
    def test_free_moment(self):
        assert moment_perturbative(SMALL, (2, 0, 0), order=0) == pytest.approx(
            SMALL.d2 / SMALL.m_q**4
        )

    def test_order_cap_refusal(self):
        with pytest.raises(ValueError, match="cap"):
            moment_perturbative(SMALL, (2, 0, 0), order=4)

    def test_d2_scaling_in_classical_sector(self):
        for d2 in (0.25, 0.5, 1.0, 2.0):
            p = ToyParams(1.0, 1.0, 0.0, 1.0, d2)
            assert moment_perturbative(p, (2, 0, 0), order=2) == pytest.approx(d2)

    def test_asymptotic_corrections_shrink_in_shipped_regime(self):
        vals = [moment_perturbative(SMALL, (2, 0, 0), order=k) for k in range(4)]
        corrections = [abs(vals[k + 1] - vals[k]) for k in range(3)]
        assert corrections[0] > corrections[1] > corrections[2]

    def test_conjugation_symmetry(self):
        a = moment_perturbative(SMALL, (1, 2, 0), order=2)
        b = moment_perturbative(SMALL, (1, 0, 2), order=2)
        assert a == pytest.approx(np.conj(b), rel=1e-12)


class TestQuadrature:
    def test_free_qq(self):
        val = moment_quadrature(FREE, (2, 0, 0))
        assert abs(val - 1.0) < 1e-8

    def test_free_phi_propagators(self):
        gp, gm, _ = free_propagators(FREE)
        assert abs(moment_quadrature(FREE, (0, 2, 0)) - gp) < 1e-6
        assert abs(moment_quadrature(FREE, (0, 0, 2)) - gm) < 1e-6

    def test_interacting_matches_perturbation(self):
        vq = moment_quadrature(SMALL, (2, 0, 0))
        vp = moment_perturbative(SMALL, (2, 0, 0), order=2)
        assert abs(vq - vp) / abs(vq) < 0.01

    def test_branch_coupling_through_q(self):
        # the connected <phi+^2 phi-^2> correlation is an interaction effect
        vq = moment_quadrature(SMALL, (0, 2, 2))
        vp = moment_perturbative(SMALL, (0, 2, 2), order=2)
        disconnected = moment_quadrature(SMALL, (0, 2, 0)) * moment_quadrature(SMALL, (0, 0, 2))
        assert abs(vq - vp) / abs(vq) < 0.01
        assert abs(vq - disconnected) > 1e-3  # branches really couple

    def test_conjugation_symmetry(self):
        a = moment_quadrature(SMALL, (1, 2, 0))
        b = moment_quadrature(SMALL, (1, 0, 2))
        assert a == pytest.approx(np.conj(b), rel=1e-10)

    def test_odd_moment_is_nonperturbative(self):
        # every perturbative order of <q> cancels between the +- branches,
        # yet the exact integral is nonzero: the quadrature is the arbiter.
        # Frozen from the converged rotated-contour value (stable over
        # n = 240..720 and box doubling).
        for order in range(4):
            assert moment_perturbative(SMALL, (1, 0, 0), order=order) == 0.0
        val, err = moment_quadrature(SMALL, (1, 0, 0), full_output=True)
        assert val.real == pytest.approx(1.5123752113965682e-06, rel=1e-6)
        assert abs(val.imag) < 1e-12

        strong = ToyParams(1.0, 1.0, 0.3, 1.0, 0.1)
        val_strong = moment_quadrature(strong, (1, 0, 0))
        assert val_strong.real == pytest.approx(-0.11433327563571787, rel=1e-6)

    def test_phi_plus_minus_moment_vanishes_by_parity(self):
        # phi+ -> -phi+ is a symmetry of the action, so <phi+ phi-> = 0
        # identically in both engines
        assert moment_perturbative(SMALL, (0, 1, 1), order=2) == 0.0
        assert abs(moment_quadrature(SMALL, (0, 1, 1))) < 1e-12

    def test_error_estimate_reported(self):
        val, err = moment_quadrature(FREE, (2, 0, 0), full_output=True)
        assert err < 1e-10

    def test_nonconvergent_configuration_refused(self):
        # enormous coupling with tiny diffusion: the integrand has not
        # decayed at the scaled box and the tail check must trip
        bad = ToyParams(m_phi=1.0, m_q=1.0, lam=40.0, hbar=1.0, d2=1e-4)
        with pytest.raises(QuadratureError, match="refused|rejected"):
            moment_quadrature(bad, (2, 0, 0), n_nodes=60)
