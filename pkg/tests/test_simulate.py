import math
import random

import numpy as np
import pytest

from zonedid.errors import ValidationError
from zonedid.estimator import aggregate_att, fit_wls
from zonedid.simulate import (
    DGPSpec,
    GroundTruth,
    SpilloverSpec,
    generate,
    observed_profile,
    spec_from_dict,
    true_beta,
    true_beta_from,
)
from zonedid.stacking import build_stack

FAST = dict(n_designee=4, n_finalist=8, spatial_sd=0.02, noise_sd=0.02)


class TestDeterminism:
    def test_same_seed_same_panel(self):
        a, _ = generate(DGPSpec(seed=7, **FAST))
        b, _ = generate(DGPSpec(seed=7, **FAST))
        assert a.observations == b.observations
        assert dict(a.labels) == dict(b.labels)

    def test_different_seed_differs(self):
        a, _ = generate(DGPSpec(seed=7, **FAST))
        b, _ = generate(DGPSpec(seed=8, **FAST))
        assert a.observations != b.observations


class TestAveragingToggle:
    def test_observed_equals_latent_when_off(self):
        # with no noise or field, latent is a deterministic line
        spec = DGPSpec(
            seed=1,
            n_designee=2,
            n_finalist=2,
            averaging=False,
            spatial_sd=0.0,
            noise_sd=0.0,
            baseline_sd=0.0,
            trend_mean=0.1,
            effect_profiles={"y": (0.0,) * 8},
        )
        panel, _ = generate(spec)
        for obs in panel.observations:
            assert obs.outcome("y") == pytest.approx(0.1 * (obs.data_year - 2009), abs=1e-12)

    def test_averaging_smooths_constant_effect(self):
        # tau = 0.2 from adoption on, noiseless: observed gamma at e in [0,3]
        # equals 0.2 * (e+1) / 5 exactly
        spec = DGPSpec(
            seed=2,
            n_designee=3,
            n_finalist=6,
            averaging=True,
            spatial_sd=0.0,
            noise_sd=0.0,
            baseline_sd=0.0,
            trend_mean=0.0,
            effect_profiles={"y": (0.2,) * 8},
        )
        panel, truth = generate(spec)
        fit = fit_wls(build_stack(panel, "y"), spec="dynamic")
        for e in range(0, 4):
            assert fit.coef(f"gamma_{e}") == pytest.approx(0.2 * (e + 1) / 5, abs=1e-10)
        for e in range(4, 8):
            assert fit.coef(f"gamma_{e}") == pytest.approx(0.2, abs=1e-10)
        assert aggregate_att(fit).value == pytest.approx(true_beta(truth), abs=1e-10)

    def test_null_dgp_estimates_zero(self):
        spec = DGPSpec(
            seed=3,
            n_designee=4,
            n_finalist=8,
            effect_profiles={"y": (0.0,) * 8},
            spatial_sd=0.0,
            noise_sd=0.0,
            baseline_sd=0.2,
        )
        panel, truth = generate(spec)
        assert true_beta(truth) == 0.0
        att = aggregate_att(fit_wls(build_stack(panel, "y"), spec="dynamic"))
        assert att.value == pytest.approx(0.0, abs=1e-10)


class TestTrueBeta:
    def test_single_cohort_constant(self):
        spec = DGPSpec(cohorts=(2014,), seed=4, **FAST)
        _, truth = generate(spec)
        assert true_beta(truth) == pytest.approx(0.2, abs=1e-12)

    def test_two_cohorts_weighted(self):
        att = {}
        for e in range(-5, 8):
            att[(2014, e)] = 0.1 if e >= 4 else 0.0
            att[(2015, e)] = 0.3 if e >= 4 else 0.0
        omega = {2014: 0.25, 2015: 0.75}
        assert true_beta_from(att, omega) == pytest.approx(0.25)

    def test_matches_brute_force_double_sum(self):
        rng = random.Random(9)
        att = {
            (a, e): rng.gauss(0, 1)
            for a in (2014, 2015, 2016)
            for e in range(-5, 8)
        }
        pops = {a: rng.uniform(1, 10) for a in (2014, 2015, 2016)}
        total = sum(pops.values())
        omega = {a: p / total for a, p in pops.items()}
        brute = 0.0
        for e in (4, 5, 6, 7):
            for a in (2014, 2015, 2016):
                brute += omega[a] * att[(a, e)]
        brute /= 4
        assert true_beta_from(att, omega) == pytest.approx(brute, rel=1e-12)


class TestObservedProfile:
    def test_pre_period_is_zero(self):
        assert observed_profile((0.2,) * 8, -3, True) == 0.0

    def test_partial_dilution(self):
        profile = (0.2,) * 8
        for e in range(0, 4):
            assert observed_profile(profile, e, True) == pytest.approx(0.2 * (e + 1) / 5)

    def test_no_averaging_passthrough(self):
        profile = tuple(float(i) for i in range(8))
        assert observed_profile(profile, 3, False) == 3.0


class TestSpatialField:
    def test_correlogram_decays_with_distance(self):
        # 200 replications of a pure-field DGP; pair products are binned by
        # each replication's own pair distances, so the binned correlogram
        # should track exp(-d / range) within Monte Carlo bands
        from zonedid.geo import haversine_miles

        rng_range = 2.0
        base = dict(
            cohorts=(2014,),
            n_designee=12,
            n_finalist=12,
            years=(2009, 2023),
            averaging=False,
            baseline_sd=0.0,
            trend_mean=0.0,
            noise_sd=0.0,
            spatial_sd=1.0,
            spatial_range_miles=rng_range,
            effect_profiles={"y": (0.0,) * 8},
        )
        bins = [(0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 4.0)]
        products = {b: [] for b in bins}
        distances = {b: [] for b in bins}
        for seed in range(200):
            panel, _ = generate(DGPSpec(seed=seed, **base))
            years = panel.years
            tracts = panel.tracts
            values = np.array(
                [[panel.get(t, y).outcome("y") for y in years] for t in tracts]
            )
            centroid = {t: panel.get(t, years[0]).centroid for t in tracts}
            for i, a in enumerate(tracts):
                for j in range(i + 1, len(tracts)):
                    b = tracts[j]
                    d = haversine_miles(centroid[a], centroid[b])
                    for lo, hi in bins:
                        if lo <= d < hi:
                            # years are independent draws; E[x_a x_b] = cov
                            products[(lo, hi)].append(float(values[i] @ values[j] / len(years)))
                            distances[(lo, hi)].append(d)
        means = []
        for b in bins:
            sample = np.array(products[b])
            assert len(sample) > 50
            mean = sample.mean()
            target = float(np.mean(np.exp(-np.array(distances[b]) / rng_range)))
            mc_se = sample.std(ddof=1) / math.sqrt(len(sample))
            assert abs(mean - target) < max(4 * mc_se, 0.02)
            means.append(mean)
        assert means == sorted(means, reverse=True)


class TestSpilloverTruth:
    def test_ring_truth_monotone_under_decay(self):
        spec = DGPSpec(
            seed=6,
            n_designee=4,
            n_finalist=6,
            spillover=SpilloverSpec(reach_miles=1.0),
        )
        _, truth = generate(spec)
        rings = truth.ring_att["y"]
        assert rings["inside"] > rings["border"] > rings["outside_1mi"] >= rings["outside_2mi"]
        assert rings["outside_2mi"] == pytest.approx(0.0, abs=1e-12)
        assert len(truth.assignments) > 0
        assert truth.zones["dz2014"] == ("designee", 2014)

    def test_attribute_scales_shift_truth(self):
        spec = DGPSpec(
            seed=7,
            n_designee=10,
            n_finalist=10,
            attribute_name="online",
            attribute_scales=(0.5, 1.5),
        )
        panel, truth = generate(spec)
        flags = [panel.attributes[t]["online"] for t in panel.tracts_with_role("designee")]
        assert 0 < sum(flags) < len(flags)
        assert 0.1 < true_beta(truth) < 0.3


class TestSpecValidation:
    def test_profile_length(self):
        with pytest.raises(ValidationError):
            DGPSpec(effect_profiles={"y": (0.1, 0.2)})

    def test_range_positive(self):
        with pytest.raises(ValidationError):
            DGPSpec(spatial_range_miles=0.0)

    def test_spec_from_dict_roundtrip(self):
        raw = {
            "cohorts": [2014, 2016],
            "n_designee": 3,
            "n_finalist": 5,
            "effect_profiles": {"y": [0.1] * 8},
            "seed": 11,
            "spillover": {
                "reach_miles": 1.5,
                "rings": {
                    "border": {
                        "count": 4,
                        "overlap_share": 0.5,
                        "distance_range": [0.1, 0.3],
                        "pop_share_in_zone": 0.4,
                    }
                },
            },
        }
        spec = spec_from_dict(raw)
        assert spec.cohorts == (2014, 2016)
        assert spec.spillover.reach_miles == 1.5
        assert spec.spillover.rings["border"].count == 4
        panel, truth = generate(spec)
        assert len(panel.observations) > 0
