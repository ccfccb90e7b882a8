import math
import random

import numpy as np
import pytest
from scipy.stats import norm

from zonedid.errors import ValidationError
from zonedid.estimator import ATTEstimate
from zonedid.sensitivity import SensitivityResult, feasible_slopes, robust_interval


def grid_search_slopes(pre_coeffs, level, step=1e-5):
    """Brute-force oracle scanning candidate slopes at fixed resolution."""
    z = norm.ppf(0.5 + level / 2)
    span = max((abs(e) + z * s) / abs(t + 1) for t, (e, s) in pre_coeffs.items()) + 10 * step
    ms = np.arange(-span, span + step, step)
    ok = np.ones_like(ms, dtype=bool)
    for t, (est, se) in pre_coeffs.items():
        trend = ms * (t + 1)
        ok &= (trend >= est - z * se - 1e-12) & (trend <= est + z * se + 1e-12)
    if not ok.any():
        return None
    feasible = ms[ok]
    return (float(feasible.min()), float(feasible.max()))


class TestFeasibleSlopes:
    def test_flat_zero_coefficients_bind_at_earliest_period(self):
        s = 0.04
        pre = {t: (0.0, s) for t in (-5, -4, -3, -2)}
        z = norm.ppf(0.975)
        lo, hi = feasible_slopes(pre, 0.95)
        assert hi == pytest.approx(z * s / 4, rel=1e-12)
        assert lo == pytest.approx(-z * s / 4, rel=1e-12)

    def test_exact_line_with_tiny_ses(self):
        m0 = 0.02
        pre = {t: (m0 * (t + 1), 1e-9) for t in (-5, -4, -3, -2)}
        lo, hi = feasible_slopes(pre, 0.95)
        assert lo == pytest.approx(m0, abs=1e-7)
        assert hi == pytest.approx(m0, abs=1e-7)

    def test_matches_grid_search_oracle(self):
        rng = random.Random(17)
        for _ in range(100):
            pre = {
                t: (rng.gauss(0, 0.05), rng.uniform(0.005, 0.08))
                for t in (-5, -4, -3, -2)
            }
            level = rng.choice([0.8, 0.9, 0.95])
            exact = feasible_slopes(pre, level)
            grid = grid_search_slopes(pre, level)
            if exact is None:
                assert grid is None
            else:
                assert grid is not None
                assert exact[0] == pytest.approx(grid[0], abs=2e-5)
                assert exact[1] == pytest.approx(grid[1], abs=2e-5)

    def test_empty_set_reported_not_raised(self):
        # t=-2 band demands slope near -0.5, t=-3 band demands slope near +0.25
        pre = {-2: (0.5, 0.01), -3: (-0.5, 0.01)}
        assert feasible_slopes(pre, 0.95) is None

    def test_rejects_post_period_input(self):
        with pytest.raises(ValidationError):
            feasible_slopes({-1: (0.0, 0.1)}, 0.95)


class TestRobustInterval:
    ATT = ATTEstimate(0.198, 0.067, 0.003)

    def test_zero_slopes_collapse_to_conventional(self):
        pre = {t: (0.0, 0.05) for t in (-5, -4, -3, -2)}
        result = robust_interval(self.ATT, pre, slopes=(0.0, 0.0))
        lo, hi = self.ATT.ci(0.95)
        assert result.robust_ci[0] == pytest.approx(lo, rel=1e-12)
        assert result.robust_ci[1] == pytest.approx(hi, rel=1e-12)

    def test_table_two_like_inputs_straddle_zero(self):
        # pre-period coefficients on a mild upward trend line with realistic
        # SEs: the robust CI lands near (-0.09, 0.36), straddles zero, and
        # the breakdown level sits in the low twenties percent
        pre = {t: (0.0098 * (t + 1), 0.0301) for t in (-5, -4, -3, -2)}
        result = robust_interval(self.ATT, pre)
        lo, hi = result.robust_ci
        assert lo < 0 < hi
        assert lo < self.ATT.value < hi
        assert lo == pytest.approx(-0.09, abs=0.02)
        assert hi == pytest.approx(0.36, abs=0.02)
        assert 0.15 < result.breakdown_p < 0.35

    def test_wider_pre_ses_widen_robust_ci(self):
        base = {t: (0.0, 0.03) for t in (-5, -4, -3, -2)}
        wide = {t: (0.0, 0.06) for t in (-5, -4, -3, -2)}
        r_base = robust_interval(self.ATT, base)
        r_wide = robust_interval(self.ATT, wide)
        width_base = r_base.robust_ci[1] - r_base.robust_ci[0]
        width_wide = r_wide.robust_ci[1] - r_wide.robust_ci[0]
        assert width_wide > width_base

    def test_higher_level_widens_robust_ci(self):
        pre = {t: (0.0, 0.03) for t in (-5, -4, -3, -2)}
        r90 = robust_interval(self.ATT, pre, level=0.90)
        r99 = robust_interval(self.ATT, pre, level=0.99)
        assert (r99.robust_ci[1] - r99.robust_ci[0]) > (r90.robust_ci[1] - r90.robust_ci[0])

    def test_breakdown_scale_invariance(self):
        pre = {t: (0.01 * (t + 1), 0.04) for t in (-5, -4, -3, -2)}
        r1 = robust_interval(self.ATT, pre)
        c = 7.3
        att_scaled = ATTEstimate(self.ATT.value * c, self.ATT.std_error * c, 0.003)
        pre_scaled = {t: (e * c, s * c) for t, (e, s) in pre.items()}
        r2 = robust_interval(att_scaled, pre_scaled)
        assert r1.breakdown_p == pytest.approx(r2.breakdown_p, abs=2e-4)

    def test_breakdown_bisection_matches_direct_scan(self):
        pre = {t: (0.0, 0.05) for t in (-5, -4, -3, -2)}
        result = robust_interval(self.ATT, pre)

        def robust_at(alpha):
            z = norm.ppf(1 - alpha / 2)
            slopes = feasible_slopes(pre, 1 - alpha)
            m_low, m_high = slopes
            lo = self.ATT.value - m_high * 6.5 - z * self.ATT.std_error
            hi = self.ATT.value - m_low * 6.5 + z * self.ATT.std_error
            return lo > 0 or hi < 0

        # scan on a fine alpha grid for the transition point
        grid = np.arange(1e-4, 1.0, 1e-4)
        flips = [a for a in grid if robust_at(a)]
        assert flips
        assert result.breakdown_p == pytest.approx(min(flips), abs=5e-4)

    def test_tight_pre_trends_give_zero_breakdown(self):
        pre = {t: (0.0, 1e-6) for t in (-5, -4, -3, -2)}
        result = robust_interval(ATTEstimate(0.5, 0.01, 0.0), pre)
        assert result.breakdown_p == 0.0

    def test_zero_estimate_never_robust(self):
        # a zero point estimate can never be dragged away from zero
        pre = {t: (0.0, 0.5) for t in (-5, -4, -3, -2)}
        result = robust_interval(ATTEstimate(0.0, 0.1, 1.0), pre)
        assert result.breakdown_p == 1.0

    def test_empty_feasible_at_report_level_raises(self):
        pre = {-2: (0.5, 0.01), -3: (-0.5, 0.01)}
        with pytest.raises(ValidationError, match="empty"):
            robust_interval(self.ATT, pre)
