"""Income-bucket share outcomes: per-bucket effects and the inflation
correction for nominal bucket boundaries.

Bucket shares are compositional (they sum to one per tract-year), so
effects across an exhaustive scheme add to zero mechanically. Because the
underlying data are nominal, pure inflation shifts mass across fixed
dollar boundaries even with no real change; the correction models each
group's income density as uniform within buckets (the open top bucket is
capped for this purpose), inflates, recomputes shares, and differences the
two groups, with a sensitivity band from varying the top-bucket cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import ValidationError
from .estimator import ATTEstimate
from .panel import Panel, ROLE_DESIGNEE

DEFAULT_BOUNDARIES = (25_000.0, 50_000.0, 75_000.0, 100_000.0)
DEFAULT_TOP_CAP = 150_000.0
SHARE_SUM_TOL = 1e-9


def _label(lo: float, hi: float | None) -> str:
    def k(x: float) -> str:
        return f"{int(round(x / 1000))}k"

    if lo == 0:
        return f"under_{k(hi)}"
    if hi is None:
        return f"over_{k(lo)}"
    return f"{k(lo)}_{k(hi)}"


@dataclass(frozen=True)
class BucketScheme:
    """Nominal dollar cutoffs; the top bucket is open above the last one.

    ``top_cap`` bounds the top bucket's support for the uniform-density
    inflation model only; it does not affect share definitions.
    """

    boundaries: tuple[float, ...] = DEFAULT_BOUNDARIES
    top_cap: float = DEFAULT_TOP_CAP

    def __post_init__(self):
        if list(self.boundaries) != sorted(set(self.boundaries)):
            raise ValidationError("boundaries must be strictly ascending")
        if not self.boundaries or self.boundaries[0] <= 0:
            raise ValidationError("boundaries must be positive")
        if self.top_cap <= self.boundaries[-1]:
            raise ValidationError("top cap must exceed the last boundary")

    @property
    def labels(self) -> tuple[str, ...]:
        edges = (0.0, *self.boundaries)
        out = [_label(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
        out.append(_label(self.boundaries[-1], None))
        return tuple(out)

    def share_outcomes(self, prefix: str = "share_") -> tuple[str, ...]:
        return tuple(prefix + label for label in self.labels)

    def supports(self, top_cap: float | None = None) -> tuple[tuple[float, float], ...]:
        """Closed supports for the uniform-density model, capping the top."""
        cap = top_cap if top_cap is not None else self.top_cap
        edges = (0.0, *self.boundaries, cap)
        return tuple(zip(edges[:-1], edges[1:]))


@dataclass(frozen=True)
class BucketResult:
    label: str
    att: ATTEstimate
    baseline_share: float
    correction: float | None = None

    @property
    def corrected_value(self) -> float:
        return self.att.value - (self.correction or 0.0)


def validate_shares(
    panel: Panel,
    scheme: BucketScheme,
    prefix: str = "share_",
    tolerance: float = SHARE_SUM_TOL,
) -> None:
    """Check that every observation's bucket shares sum to one."""
    names = scheme.share_outcomes(prefix)
    for obs in panel.observations:
        values = [obs.outcome(n) for n in names]
        if any(v is None for v in values):
            missing = [n for n, v in zip(names, values) if v is None]
            raise ValidationError(
                f"tract {obs.tract_id} year {obs.data_year}: missing {missing[0]}"
            )
        total = sum(values)
        if abs(total - 1.0) > tolerance:
            raise ValidationError(
                f"tract {obs.tract_id} year {obs.data_year}: shares sum to {total:.6f}"
            )


def baseline_shares(
    panel: Panel,
    scheme: BucketScheme,
    baseline_year: int,
    role: str = ROLE_DESIGNEE,
    prefix: str = "share_",
) -> dict[str, float]:
    """Population-weighted mean share per bucket at the baseline year."""
    names = scheme.share_outcomes(prefix)
    out = {}
    for label, name in zip(scheme.labels, names):
        num = den = 0.0
        for obs in panel.observations:
            if obs.data_year != baseline_year or panel.label(obs.tract_id).role != role:
                continue
            value = obs.outcome(name)
            if value is None:
                continue
            num += obs.population * value
            den += obs.population
        if den == 0:
            raise ValidationError(f"no baseline data for {name}")
        out[label] = num / den
    return out


def bucket_atts(
    panel: Panel,
    scheme: BucketScheme,
    fit_outcome: Callable[[str], ATTEstimate],
    baseline_year: int | None = None,
    prefix: str = "share_",
    tolerance: float = SHARE_SUM_TOL,
    corrections: Mapping[str, float] | None = None,
) -> list[BucketResult]:
    """Run the baseline specification once per bucket-share outcome.

    ``fit_outcome`` maps an outcome name to its effect estimate (wired to
    the full stack/fit/inference chain by the pipeline).
    """
    validate_shares(panel, scheme, prefix, tolerance)
    baseline_year = baseline_year if baseline_year is not None else panel.years[0]
    base = baseline_shares(panel, scheme, baseline_year, prefix=prefix)
    results = []
    for label, name in zip(scheme.labels, scheme.share_outcomes(prefix)):
        att = fit_outcome(name)
        correction = corrections.get(label) if corrections else None
        results.append(BucketResult(label, att, base[label], correction))
    return results


def shift_shares(
    shares: Sequence[float],
    factor: float,
    scheme: BucketScheme,
    top_cap: float | None = None,
) -> list[float]:
    """Shares after inflating incomes by ``factor`` under uniform densities.

    Each bucket's mass spreads uniformly over its (inflated) support; the
    top nominal bucket is open, so mass inflated past the last boundary
    stays there. Mass is conserved exactly.
    """
    if factor < 1.0:
        raise ValidationError("inflation factor must be at least 1")
    supports = scheme.supports(top_cap)
    if len(shares) != len(supports):
        raise ValidationError(
            f"expected {len(supports)} shares, got {len(shares)}"
        )
    edges = (0.0, *scheme.boundaries, float("inf"))
    nominal = tuple(zip(edges[:-1], edges[1:]))
    out = [0.0] * len(supports)
    for share, (lo, hi) in zip(shares, supports):
        new_lo, new_hi = lo * factor, hi * factor
        width = new_hi - new_lo
        for k, (nlo, nhi) in enumerate(nominal):
            overlap = min(new_hi, nhi) - max(new_lo, nlo)
            if overlap > 0:
                out[k] += share * overlap / width
    return out


def inflation_correction(
    treated_baseline: Sequence[float],
    control_baseline: Sequence[float],
    factor: float,
    scheme: BucketScheme,
    top_cap: float | None = None,
) -> dict[str, float]:
    """Per-bucket share change produced by pure inflation, differenced
    across groups; subtract from the raw estimates."""
    treated_post = shift_shares(treated_baseline, factor, scheme, top_cap)
    control_post = shift_shares(control_baseline, factor, scheme, top_cap)
    return {
        label: (tp - t0) - (cp - c0)
        for label, tp, t0, cp, c0 in zip(
            scheme.labels, treated_post, treated_baseline, control_post, control_baseline
        )
    }


def correction_cap_band(
    treated_baseline: Sequence[float],
    control_baseline: Sequence[float],
    factor: float,
    scheme: BucketScheme,
    caps: Sequence[float] = (125_000.0, 150_000.0, 175_000.0, 200_000.0),
) -> dict[str, tuple[float, float]]:
    """Correction range over top-cap choices, a stand-in uncertainty band
    for the unobserved within-top-bucket income distribution."""
    per_cap = [
        inflation_correction(treated_baseline, control_baseline, factor, scheme, cap)
        for cap in caps
    ]
    return {
        label: (
            min(c[label] for c in per_cap),
            max(c[label] for c in per_cap),
        )
        for label in scheme.labels
    }
