import math
import random

import pytest
from hypothesis import given, strategies as st

from zonedid.errors import RowError, SchemaError, ValidationError
from zonedid.panel import (
    GroupLabel,
    Panel,
    PanelObservation,
    PanelSchema,
    crosswalk_average,
    enforce_balance,
    event_time,
    load_panel,
    write_panel_csv,
)

HEADER = (
    "tract_id,year,population,lon,lat,role,zone_id,adoption_year,pop_in_zone,"
    "poverty_rate,log_median_income,emp_pop_ratio"
)


def write_csv(tmp_path, rows, header=HEADER, name="panel.csv"):
    path = tmp_path / name
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def make_obs(tract, year, outcomes=None, population=100.0, centroid=(0.0, 0.0)):
    if outcomes is None:
        outcomes = {"poverty_rate": 0.3, "log_median_income": 10.0, "emp_pop_ratio": 0.4}
    return PanelObservation(tract, year, outcomes, population, centroid)


class TestLoadPanel:
    def test_well_formed(self, tmp_path):
        rows = [
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
            "t1,2015,100,-118.2,34.0,designee,z1,2014,80,0.29,10.2,0.41",
            "t2,2014,200,-118.3,34.1,finalist,z2,2014,150,0.35,10.0,0.38",
        ]
        panel = load_panel(write_csv(tmp_path, rows))
        assert len(panel.observations) == 3
        assert panel.label("t1") == GroupLabel("designee", "z1", 2014)
        assert panel.zone_population["t2"] == 150.0
        assert panel.get("t1", 2015).outcome("poverty_rate") == 0.29

    def test_missing_year_column(self, tmp_path):
        header = HEADER.replace("year,", "yr,")
        rows = ["t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4"]
        with pytest.raises(SchemaError, match="year"):
            load_panel(write_csv(tmp_path, rows, header=header))

    def test_rate_out_of_bounds(self, tmp_path):
        rows = ["t1,2014,100,-118.2,34.0,designee,z1,2014,80,1.3,10.1,0.4"]
        with pytest.raises(RowError, match="poverty_rate"):
            load_panel(write_csv(tmp_path, rows))

    def test_unparseable_numeric_reports_row(self, tmp_path):
        rows = [
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
            "t2,2014,abc,-118.3,34.1,finalist,z2,2014,150,0.35,10.0,0.38",
        ]
        with pytest.raises(RowError) as err:
            load_panel(write_csv(tmp_path, rows))
        assert err.value.rows == [3]

    def test_duplicate_tract_year(self, tmp_path):
        rows = [
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
        ]
        with pytest.raises(RowError, match="duplicate"):
            load_panel(write_csv(tmp_path, rows))

    def test_conflicting_labels_surface_as_errors(self, tmp_path):
        rows = [
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
            "t1,2015,100,-118.2,34.0,finalist,z2,2015,80,0.3,10.1,0.4",
        ]
        with pytest.raises(RowError, match="conflicting labels"):
            load_panel(write_csv(tmp_path, rows))

    def test_adoption_year_required_for_roles(self, tmp_path):
        rows = ["t1,2014,100,-118.2,34.0,designee,z1,,80,0.3,10.1,0.4"]
        with pytest.raises(RowError, match="adoption_year"):
            load_panel(write_csv(tmp_path, rows))

    def test_missing_outcome_cell_is_allowed(self, tmp_path):
        rows = ["t1,2014,100,-118.2,34.0,neither,,,,,10.1,0.4"]
        panel = load_panel(write_csv(tmp_path, rows))
        assert panel.get("t1", 2014).outcome("poverty_rate") is None

    def test_roundtrip_through_write(self, tmp_path):
        rows = [
            "t1,2014,100,-118.2,34.0,designee,z1,2014,80,0.3,10.1,0.4",
            "t2,2014,200,-118.3,34.1,neither,,,,0.35,10.0,0.38",
        ]
        panel = load_panel(write_csv(tmp_path, rows))
        out = tmp_path / "copy.csv"
        write_panel_csv(panel, out)
        again = load_panel(out)
        assert again.observations == panel.observations
        assert dict(again.labels) == dict(panel.labels)


class TestCrosswalkAverage:
    def test_equal_weight_mean(self):
        assert crosswalk_average([(2.0, 1, False), (4.0, 1, False)]) == 3.0

    def test_skips_missing_entries(self):
        assert crosswalk_average([(2.0, 1, False), (None, 1, True)]) == 2.0

    def test_all_missing(self):
        assert crosswalk_average([(None, 1, True), (None, 2, True)]) is None

    def test_zero_nonmissing_weight(self):
        assert crosswalk_average([(5.0, 0.0, False)]) is None

    def test_negative_weight(self):
        with pytest.raises(ValidationError):
            crosswalk_average([(2.0, -1, False)])

    @given(
        st.lists(
            st.tuples(
                st.floats(-1e6, 1e6),
                st.floats(0.01, 100),
                st.booleans(),
            ),
            min_size=1,
            max_size=12,
        ),
        st.floats(0.1, 10),
        st.randoms(),
    )
    def test_order_and_scale_invariance(self, entries, scale, rng):
        base = crosswalk_average(entries)
        shuffled = list(entries)
        rng.shuffle(shuffled)
        rescaled = [(v, w * scale, m) for v, w, m in entries]
        if base is None:
            assert crosswalk_average(shuffled) is None
            assert crosswalk_average(rescaled) is None
        else:
            assert crosswalk_average(shuffled) == pytest.approx(base, rel=1e-9, abs=1e-9)
            assert crosswalk_average(rescaled) == pytest.approx(base, rel=1e-9, abs=1e-9)


class TestEventTime:
    def test_adoption_year_is_zero(self):
        assert event_time(2014, 2014) == 0

    def test_post_window_end(self):
        assert event_time(2023, 2016) == 7

    def test_pre_window_start(self):
        assert event_time(2009, 2014) == -5

    @given(st.integers(1900, 2100), st.integers(1900, 2100))
    def test_roundtrip(self, year, adoption):
        assert event_time(year, adoption) + adoption == year


def balanced_scan(panel, required, years):
    """Exhaustive completeness check used as the balance oracle."""
    for tract in panel.tracts:
        for year in years:
            obs = panel.get(tract, year)
            if obs is None:
                return False
            if any(obs.outcome(name) is None for name in required):
                return False
    return True


class TestEnforceBalance:
    REQUIRED = ("poverty_rate", "log_median_income", "emp_pop_ratio")

    def _panel(self, tracts, years, missing=()):
        obs = []
        for t in tracts:
            for y in years:
                outcomes = {
                    "poverty_rate": 0.3,
                    "log_median_income": 10.0,
                    "emp_pop_ratio": 0.4,
                }
                for m_tract, m_year, m_name in missing:
                    if (t, y) == (m_tract, m_year):
                        outcomes.pop(m_name, None)
                obs.append(make_obs(t, y, outcomes))
        labels = {t: GroupLabel("neither") for t in tracts}
        return Panel(tuple(obs), labels)

    def test_missing_outcome_drops_tract(self):
        panel = self._panel(["a", "b"], [2016, 2017], missing=[("a", 2017, "poverty_rate")])
        balanced, dropped = enforce_balance(panel, self.REQUIRED)
        assert set(dropped) == {"a"}
        assert "poverty_rate" in dropped["a"]
        assert balanced.tracts == ("b",)

    def test_complete_panel_drops_nothing(self):
        panel = self._panel(["a", "b", "c"], [2016, 2017])
        balanced, dropped = enforce_balance(panel, self.REQUIRED)
        assert dropped == {}
        assert balanced.observations == panel.observations

    def test_random_deletions_leave_balanced_output(self):
        rng = random.Random(7)
        tracts = [f"t{i}" for i in range(30)]
        years = list(range(2010, 2020))
        obs = []
        for t in tracts:
            for y in years:
                outcomes = {
                    "poverty_rate": 0.3,
                    "log_median_income": 10.0,
                    "emp_pop_ratio": 0.4,
                }
                if rng.random() < 0.10:
                    outcomes.pop(rng.choice(self.REQUIRED))
                obs.append(make_obs(t, y, outcomes))
        panel = Panel(tuple(obs), {t: GroupLabel("neither") for t in tracts})
        balanced, dropped = enforce_balance(panel, self.REQUIRED)
        assert balanced_scan(balanced, self.REQUIRED, years)
        # dropped set is exactly the complement of the surviving tracts
        assert set(dropped) | set(balanced.tracts) == set(tracts)
        assert set(dropped) & set(balanced.tracts) == set()
        # every dropped tract genuinely fails the exhaustive scan
        for tract in dropped:
            sub = Panel(
                tuple(o for o in panel.observations if o.tract_id == tract),
                {tract: GroupLabel("neither")},
            )
            assert not balanced_scan(sub, self.REQUIRED, years)


class TestTypes:
    def test_group_label_requires_adoption_iff_not_neither(self):
        with pytest.raises(ValidationError):
            GroupLabel("designee", "z1", None)
        with pytest.raises(ValidationError):
            GroupLabel("neither", None, 2014)
        GroupLabel("finalist", "z9", 2015)

    def test_panel_rejects_duplicate_keys(self):
        obs = (make_obs("a", 2014), make_obs("a", 2014))
        with pytest.raises(ValidationError):
            Panel(obs, {"a": GroupLabel("neither")})

    def test_nan_outcome_reads_as_missing(self):
        obs = make_obs("a", 2014, {"poverty_rate": math.nan})
        assert obs.outcome("poverty_rate") is None
