"""Condition estimators, the bounds they feed, oversmoothing mass, volumes."""

import math

import numpy as np
import pytest

from seqcred import (
    DdmParams,
    ball_volume_bound,
    contraction_constant_reference,
    estimate_phi1,
    estimate_phi2,
    estimate_psi,
    generate_signal,
    make_model,
    oversmoothing_probability,
    proposition_bounds,
    remark1_transfer,
)
from seqcred.diagnostics import _child, _data_seed

SMALL = dict(reps=12, inner_mc=1000, seed=31)


@pytest.fixture(scope="module")
def tiny_model():
    return make_model(0.1, 0.0, 96)


@pytest.fixture(scope="module")
def tiny_signal():
    return generate_signal("sobolev-boundary", {"beta": 1.0, "Q": 1.0}, n_trunc=96)


class TestConditionEstimators:
    def test_phi1_monotone_on_shared_draws(self, tiny_model, tiny_signal, params):
        ests = estimate_phi1([1.0, 2.0, 4.0], tiny_model, tiny_signal, params, **SMALL)
        vals = [e.value for e in ests]
        assert vals == sorted(vals, reverse=True)
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_phi1_at_zero_radius_is_one(self, tiny_model, tiny_signal, params):
        est = estimate_phi1(0.0, tiny_model, tiny_signal, params, **SMALL)
        assert est.value == 1.0
        assert est.kind == "phi1"

    def test_phi1_vanishes_at_huge_radius(self, tiny_model, tiny_signal, params):
        est = estimate_phi1(1e6, tiny_model, tiny_signal, params, **SMALL)
        assert est.value == 0.0

    def test_scalar_vs_grid_return(self, tiny_model, tiny_signal, params):
        one = estimate_phi1(2.0, tiny_model, tiny_signal, params, **SMALL)
        lst = estimate_phi1([2.0], tiny_model, tiny_signal, params, **SMALL)
        assert isinstance(lst, list) and len(lst) == 1
        assert one.value == lst[0].value

    def test_deterministic(self, tiny_model, tiny_signal, params):
        a = estimate_phi1(2.0, tiny_model, tiny_signal, params, **SMALL)
        b = estimate_phi1(2.0, tiny_model, tiny_signal, params, **SMALL)
        assert a == b

    def test_psi_monotone_and_saturates(self, tiny_model, tiny_signal, params):
        ests = estimate_psi([0.05, 0.5, 1e6], tiny_model, tiny_signal, params, **SMALL)
        vals = [e.value for e in ests]
        assert vals == sorted(vals)
        assert vals[-1] == 1.0  # the huge ball swallows every draw

    def test_psi_scale_choices(self, tiny_model, tiny_signal, params):
        from seqcred import oracle, surrogate_oracle

        a = estimate_psi(0.1, tiny_model, tiny_signal, params, scaling="oracle-rate", **SMALL)
        b = estimate_psi(0.1, tiny_model, tiny_signal, params, **SMALL)
        assert a.scale == pytest.approx(oracle(tiny_signal, tiny_model).rate)
        assert b.scale == pytest.approx(
            math.sqrt(surrogate_oracle(tiny_signal, tiny_model).sigma_sum)
        )

    def test_phi2_monotone(self, tiny_model, tiny_signal, params):
        ests = estimate_phi2([0.5, 1.0, 8.0], tiny_model, tiny_signal, params,
                             reps=12, seed=31)
        vals = [e.value for e in ests]
        assert vals == sorted(vals, reverse=True)
        assert ests[0].inner_mc == 0  # no inner draws are recorded for phi2

    def test_posterior_mean_rule(self, tiny_model, tiny_signal, params):
        est = estimate_phi2(1.0, tiny_model, tiny_signal, params,
                            center_rule="posterior-mean", reps=8, seed=2)
        assert est.center_flags == 0

    @pytest.mark.parametrize("bad", [
        lambda m, s, p: estimate_phi1(1.0, m, s, p, center_rule="mode"),
        lambda m, s, p: estimate_phi1(1.0, m, s, p, reps=0),
        lambda m, s, p: estimate_psi(-0.1, m, s, p),
        lambda m, s, p: estimate_psi(0.1, m, s, p, scaling="variance"),
        lambda m, s, p: estimate_psi([], m, s, p),
    ])
    def test_rejects_bad_arguments(self, tiny_model, tiny_signal, params, bad):
        with pytest.raises(ValueError):
            bad(tiny_model, tiny_signal, params)


class TestSeedTree:
    def test_child_keys_are_stable_and_distinct(self):
        ss = np.random.SeedSequence(123)
        assert _data_seed(_child(ss, 4, 0)) == _data_seed(_child(ss, 4, 0))
        assert _data_seed(_child(ss, 4, 0)) != _data_seed(_child(ss, 5, 0))
        assert _data_seed(_child(ss, 4, 0)) != _data_seed(_child(ss, 4, 1))

    def test_child_extends_existing_spawn_key(self):
        ss = np.random.SeedSequence(9, spawn_key=(2,))
        child = _child(ss, 7)
        assert child.spawn_key == (2, 7)
        assert child.entropy == 9


class TestPropositionBounds:
    def test_hand_arithmetic(self):
        b = proposition_bounds(phi1=0.02, psi=0.01, phi2=0.05, M=2.0, delta=0.1, kappa=0.5)
        assert b.miss_bound == pytest.approx(0.05 + 0.01 / 0.5)
        assert b.size_bound == pytest.approx(0.04)
        assert b.coverage_upper == pytest.approx(0.95 + 0.99 / 0.5)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            proposition_bounds(1.5, 0.0, 0.0, M=1.0, delta=0.1, kappa=0.5)
        with pytest.raises(ValueError):
            proposition_bounds(0.1, 0.0, 0.0, M=1.0, delta=0.1, kappa=1.0)
        with pytest.raises(ValueError):
            proposition_bounds(0.1, 0.0, 0.0, M=0.0, delta=0.1, kappa=0.5)

    def test_remark_transfer_markov_constants(self):
        """phi(M) = C/M^2 with the default split turns into 41.5 C/M^2 and
        9.375 C/M^2; these are exact rational values."""
        phi1, phi2 = remark1_transfer(lambda m: 1.0 / m**2, M=1.0)
        assert phi1 == pytest.approx(41.5, rel=1e-14)
        assert phi2 == pytest.approx(9.375, rel=1e-14)

    def test_remark_transfer_scales_like_m_minus_two(self):
        phi1_a, phi2_a = remark1_transfer(lambda m: 1.0 / m**2, M=2.0)
        assert phi1_a == pytest.approx(41.5 / 4.0, rel=1e-14)
        assert phi2_a == pytest.approx(9.375 / 4.0, rel=1e-14)

    def test_remark_transfer_validation(self):
        with pytest.raises(ValueError):
            remark1_transfer(lambda m: 0.0, M=1.0, a=1.0)
        with pytest.raises(ValueError):
            remark1_transfer(lambda m: 0.0, M=0.0)


class TestOversmoothing:
    def test_bound_formula_and_frozen_regime_boundary(self, tiny_model, tiny_signal, params):
        res = oversmoothing_probability(tiny_model, tiny_signal, params,
                                        kappa_frac=0.07, reps=20, seed=5)
        assert res.kappa_zero == pytest.approx(0.15375161065890955, rel=1e-12)
        expected_bound = math.exp(-(params.a_k * 0.93 - 0.04) * res.i_bar) / params.c_alpha
        assert res.bound == pytest.approx(expected_bound, rel=1e-12)
        assert res.estimate <= res.bound + 3.0 * res.std_error
        assert res.per_rep.shape == (20,)

    def test_zero_cutoff_gives_zero_mass(self, params):
        # i_bar = 1 for the zero signal, so any kappa_frac < 1 floors to zero
        m = make_model(0.1, 0.0, 64)
        z = generate_signal("zero", n_trunc=64)
        res = oversmoothing_probability(m, z, params, kappa_frac=0.1, reps=5, seed=1)
        assert res.i_bar == 1
        assert res.estimate == 0.0

    def test_rejects_kappa_frac_at_or_above_kappa_zero(self, tiny_model, tiny_signal, params):
        with pytest.raises(ValueError, match="kappa_frac"):
            oversmoothing_probability(tiny_model, tiny_signal, params, kappa_frac=0.16)

    def test_rejects_alpha_outside_regime(self, tiny_model, tiny_signal):
        bad = DdmParams(K=2.0, alpha=0.05)  # above a(K) ~ 0.0473
        with pytest.raises(ValueError, match="a\\(K\\)"):
            oversmoothing_probability(tiny_model, tiny_signal, bad, kappa_frac=0.01)


class TestBallVolume:
    def test_frozen_low_dimensions(self):
        b1 = ball_volume_bound(1, 1.0)
        assert b1.exact == pytest.approx(2.0, rel=1e-12)
        assert b1.bound == pytest.approx(6.3380654656113595, rel=1e-12)
        b2 = ball_volume_bound(2, 1.0)
        assert b2.exact == pytest.approx(math.pi, rel=1e-12)
        assert b2.bound == pytest.approx(9.260808470207103, rel=1e-12)

    def test_formula_recomputation(self):
        """Both fields re-derived from scratch at a few (k, r) pairs."""
        from math import gamma

        for k, r in [(1, 0.1), (3, 1.0), (7, 10.0), (12, 0.5)]:
            b = ball_volume_bound(k, r)
            exact = r**k * math.pi ** (k / 2.0) / gamma(1.0 + k / 2.0)
            bound = (
                math.e / math.sqrt(math.pi) * r**k * k ** (-(k + 1) / 2.0)
                * (2.0 * math.pi * math.e) ** (k / 2.0)
            )
            assert b.exact == pytest.approx(exact, rel=1e-12)
            assert b.bound == pytest.approx(bound, rel=1e-12)

    def test_bound_dominates_exact_everywhere(self):
        for k in range(1, 201):
            for r in (0.1, 1.0, 10.0):
                b = ball_volume_bound(k, r)
                assert b.log_slack >= 0.0, (k, r)

    def test_log_fields_survive_overflow(self):
        b = ball_volume_bound(200, 0.1)
        assert b.log_bound == pytest.approx(-708.7825722388769, rel=1e-12)
        assert b.log_exact == pytest.approx(-709.7834055694325, rel=1e-12)
        big = ball_volume_bound(400, 100.0)
        assert math.isinf(big.bound)
        assert np.isfinite(big.log_bound)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            ball_volume_bound(0, 1.0)
        with pytest.raises(ValueError):
            ball_volume_bound(3, 0.0)


class TestContractionConstant:
    def test_frozen_default_value(self):
        ref = contraction_constant_reference()
        assert ref["c_oracle"] == pytest.approx(5831845.619476801, rel=1e-12)
        assert ref["c2"] == pytest.approx(5.5332555935845775, rel=1e-12)
        assert ref["tau2"] == pytest.approx(1000.0 / 9.0, rel=1e-12)

    def test_pieces_assemble(self):
        ref = contraction_constant_reference(K=3.0, alpha=0.1, p=1.0)
        total = (
            ref["c2"] + 1.0 + 2.0 * ref["k2_tau"] + 2.0 * (1.0 + ref["tau2"]) + 1.0
            + ref["k3_gamma"] + math.sqrt(3.0) * ref["k3_half_gamma"]
        )
        assert ref["c_oracle"] == pytest.approx(total, rel=1e-14)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            contraction_constant_reference(K=0.0)
