import random

import pandas as pd

from zonedid.panel import GroupLabel, Panel, PanelObservation
from zonedid.stacking import CohortWeights, StackedDesign


def manual_design(records, window=(-1, 4), locations=None):
    """StackedDesign assembled directly from row tuples for fixture tests."""
    frame = pd.DataFrame.from_records(
        records,
        columns=[
            "sub_experiment",
            "tract_id",
            "treated",
            "event_time",
            "data_year",
            "outcome",
            "q_weight",
            "unit_weight",
        ],
    )
    weights = CohortWeights({2014: 1.0}, {2014: 1}, {2014: 1.0})
    if locations is None:
        locations = {t: (0.0, 0.0) for t in frame["tract_id"].unique()}
    return StackedDesign(frame, "y", window, weights, locations)


def make_balanced_panel(
    cohorts=(2014, 2015, 2016),
    n_designee=4,
    n_finalist=6,
    years=range(2009, 2024),
    outcome="y",
    value_fn=None,
    populations=None,
    seed=0,
):
    """Small balanced panel with designee cohorts and pooled finalists.

    ``value_fn(tract, role, adoption_year, year)`` supplies outcome values;
    defaults to a deterministic hash-free formula so stacks are reproducible.
    """
    rng = random.Random(seed)
    observations = []
    labels = {}
    zone_pop = {}

    def default_value(tract, role, adoption, year):
        return 0.1 * (year - 2009) + (0.5 if role == "designee" else 0.0)

    value_fn = value_fn or default_value

    idx = 0
    for a in cohorts:
        for i in range(n_designee):
            tract = f"d{a}_{i}"
            labels[tract] = GroupLabel("designee", f"dz{a}", a)
            pop = populations[idx] if populations else rng.uniform(1000, 5000)
            idx += 1
            zone_pop[tract] = pop
            for year in years:
                observations.append(
                    PanelObservation(
                        tract,
                        year,
                        {outcome: value_fn(tract, "designee", a, year)},
                        pop,
                        (-118.0 + 0.01 * i, 34.0 + 0.05 * (a - 2014)),
                    )
                )
    rounds = list(cohorts)
    for j in range(n_finalist):
        tract = f"f{j}"
        round_year = rounds[j % len(rounds)]
        labels[tract] = GroupLabel("finalist", f"fz{round_year}", round_year)
        pop = populations[idx] if populations else rng.uniform(1000, 5000)
        idx += 1
        zone_pop[tract] = pop
        for year in years:
            observations.append(
                PanelObservation(
                    tract,
                    year,
                    {outcome: value_fn(tract, "finalist", round_year, year)},
                    pop,
                    (-117.0 + 0.01 * j, 33.5),
                )
            )
    return Panel(tuple(observations), labels, (-5, 7), zone_pop)
