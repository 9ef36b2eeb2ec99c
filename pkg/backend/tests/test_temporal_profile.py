"""
Tests for the start-hour profile P(hour | activity).

Test classes
============
TestLocalHour       - UTC seconds to local clock hour
TestValidation      - 24 bins, non-negative, summing to 1
TestConstructors    - default, uniform and fitted profiles
TestProfileFile     - JSON save/load and error reporting
"""

import json

import pytest
from pydantic import ValidationError

from errors import ProfileError, ProfileMissingCode
from models import Activity
from temporal_profile import TemporalProfile, local_hour

MONDAY = 1_704_067_200


class TestLocalHour:

    def test_utc(self):
        assert local_hour(MONDAY + 13 * 3600 + 59) == 13

    def test_negative_offset_wraps_to_previous_day(self):
        assert local_hour(MONDAY + 2 * 3600, utc_offset_hours=-8) == 18

    def test_fractional_offset(self):
        assert local_hour(MONDAY, utc_offset_hours=5.5) == 5


class TestValidation:

    def test_wrong_bin_count(self):
        with pytest.raises(ValidationError):
            TemporalProfile(bins={Activity.HOME: [1.0 / 23] * 23})

    def test_negative_bin(self):
        values = [1.0 / 24] * 24
        values[0], values[1] = -0.1, values[1] + 0.1 + 1.0 / 24
        with pytest.raises(ValidationError):
            TemporalProfile(bins={Activity.HOME: values})

    def test_bins_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            TemporalProfile(bins={Activity.HOME: [0.05] * 24})

    def test_missing_code(self):
        profile = TemporalProfile.uniform([Activity.HOME])
        assert not profile.covers(Activity.WORK)
        with pytest.raises(ProfileMissingCode) as exc_info:
            profile.prob(Activity.WORK, 9)
        assert exc_info.value.code == 2


class TestConstructors:

    def test_default_covers_every_activity(self):
        profile = TemporalProfile.default()
        for activity in Activity:
            assert profile.covers(activity)
            assert sum(profile.bins[activity]) == pytest.approx(1.0, abs=1e-9)
            assert min(profile.bins[activity]) > 0

    def test_default_peaks_are_plausible(self):
        profile = TemporalProfile.default()
        meals = profile.bins[Activity.BUY_MEALS]
        assert meals.index(max(meals)) == 12
        work = profile.bins[Activity.WORK]
        assert work.index(max(work)) == 8

    def test_uniform(self):
        profile = TemporalProfile.uniform()
        assert profile.prob(Activity.BUY_GOODS, 3) == pytest.approx(1 / 24)

    def test_fit_counts_start_hours(self):
        samples = [(7, MONDAY + 12 * 3600)] * 3 + [(7, MONDAY + 18 * 3600)]
        profile = TemporalProfile.fit(samples, smoothing=0.0)
        assert list(profile.bins) == [Activity.BUY_MEALS]
        assert profile.prob(Activity.BUY_MEALS, 12) == pytest.approx(0.75)
        assert profile.prob(Activity.BUY_MEALS, 18) == pytest.approx(0.25)

    def test_fit_with_smoothing_covers_all_codes(self):
        profile = TemporalProfile.fit([(7, MONDAY + 12 * 3600)], smoothing=1.0)
        assert all(profile.covers(a) for a in Activity)
        assert profile.prob(Activity.BUY_MEALS, 12) == pytest.approx(2 / 25)
        assert profile.prob(Activity.HOME, 0) == pytest.approx(1 / 24)

    def test_fit_respects_utc_offset(self):
        profile = TemporalProfile.fit([(2, MONDAY + 16 * 3600)], smoothing=0.0,
                                      utc_offset_hours=-8)
        assert profile.prob(Activity.WORK, 8) == 1.0

    def test_negative_smoothing(self):
        with pytest.raises(ProfileError):
            TemporalProfile.fit([], smoothing=-1.0)

    @pytest.mark.parametrize("sample", [(16, MONDAY), (0, MONDAY), (7.5, MONDAY),
                                        ("meals", MONDAY), (7, "noon"), (7, float("nan"))])
    def test_fit_rejects_bad_sample_with_row(self, sample):
        samples = [(7, MONDAY + 12 * 3600), sample]
        with pytest.raises(ProfileError, match="sample row 2 of survey.csv") as exc_info:
            TemporalProfile.fit(samples, source="survey.csv")
        assert exc_info.value.path == "survey.csv"

    def test_fit_accepts_numeric_strings(self):
        profile = TemporalProfile.fit([("7", str(MONDAY + 12 * 3600))], smoothing=0.0)
        assert profile.prob(Activity.BUY_MEALS, 12) == 1.0


class TestProfileFile:

    def test_save_then_load(self, tmp_path):
        path = tmp_path / "profile.json"
        profile = TemporalProfile.default()
        profile.save(str(path))
        assert sorted(json.loads(path.read_text())) == sorted(str(int(a)) for a in Activity)
        assert TemporalProfile.load(str(path)) == profile

    def test_missing_file_names_path(self, tmp_path):
        path = str(tmp_path / "nope.json")
        with pytest.raises(ProfileError) as exc_info:
            TemporalProfile.load(path)
        assert path in str(exc_info.value)
        assert exc_info.value.path == path

    def test_invalid_bins_name_path(self, tmp_path):
        path = tmp_path / "profile.json"
        path.write_text(json.dumps({"7": [0.5] * 24}))
        with pytest.raises(ProfileError) as exc_info:
            TemporalProfile.load(str(path))
        assert "code 7" in str(exc_info.value)
        assert str(path) in str(exc_info.value)

    def test_unknown_code(self, tmp_path):
        path = tmp_path / "profile.json"
        path.write_text(json.dumps({"99": [1 / 24] * 24}))
        with pytest.raises(ProfileError):
            TemporalProfile.load(str(path))

    def test_not_json(self, tmp_path):
        path = tmp_path / "profile.json"
        path.write_text("{")
        with pytest.raises(ProfileError):
            TemporalProfile.load(str(path))
