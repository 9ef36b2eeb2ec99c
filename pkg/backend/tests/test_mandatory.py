"""
Tests for the Home/Work/School periodicity rules.

Test classes
============
TestOverlapsWindow      - clock-window overlap, midnight wrap, weekdays
TestClusterPlaces       - stays merge around the first stay's anchor
TestHomeWork            - week-long home/work fixture and its variations
TestSchool              - education POI proximity
TestPrecedence          - one label per place, Home before Work before School
"""

from config import InferConfig
from geo import meters_to_degrees
from mandatory import cluster_places, education_index, infer_mandatory, overlaps_window
from models import Activity, PoiRecord
from conftest import DAY, HOUR, MONDAY, classification, stay

HOME = (-118.2500, 34.0500)


def _offset(east_m, north_m=0.0, origin=HOME):
    dlon, dlat = meters_to_degrees(east_m, north_m, origin[1])
    return origin[0] + float(dlon), origin[1] + float(dlat)


WORK = _offset(5000)
SCHOOL_POI = _offset(-3000)


def _week(work=WORK, days=7):
    """Nightly dwell at HOME, weekday 9-17 dwell at `work`"""
    history = []
    for day in range(days):
        if day % 7 < 5 and work is not None:
            history.append(stay(day, 9, 17, *work))
        history.append(stay(day, 18, 32, *HOME))
    return history


def _label_at(result, lonlat):
    for place in result.places:
        if (place.lon, place.lat) == lonlat:
            return result.labels.get(place.index)
    raise AssertionError(f"no place at {lonlat}")


class TestOverlapsWindow:

    def test_before_window(self):
        assert not overlaps_window(MONDAY + 7 * HOUR, MONDAY + 7.5 * HOUR, 8, 19)

    def test_partial_overlap(self):
        assert overlaps_window(MONDAY + 7.5 * HOUR, MONDAY + 8.5 * HOUR, 8, 19)

    def test_touching_boundary_is_not_overlap(self):
        assert not overlaps_window(MONDAY + 18 * HOUR, MONDAY + 19 * HOUR, 19, 8)

    def test_night_window_wraps_midnight(self):
        assert overlaps_window(MONDAY + 22 * HOUR, MONDAY + 23 * HOUR, 19, 8)
        assert overlaps_window(MONDAY + DAY + 2 * HOUR, MONDAY + DAY + 3 * HOUR, 19, 8)
        assert not overlaps_window(MONDAY + 12 * HOUR, MONDAY + 13 * HOUR, 19, 8)

    def test_weekend_excluded(self):
        saturday = MONDAY + 5 * DAY
        assert not overlaps_window(saturday + 9 * HOUR, saturday + 10 * HOUR, 8, 19,
                                   weekdays_only=True)
        assert overlaps_window(saturday + 9 * HOUR, saturday + 10 * HOUR, 8, 19)

    def test_friday_evening_into_saturday_counts(self):
        friday = MONDAY + 4 * DAY
        assert overlaps_window(friday + 18.5 * HOUR, friday + DAY + 9 * HOUR, 8, 19,
                               weekdays_only=True)

    def test_utc_offset_shifts_clock(self):
        # 17:00-18:00 UTC is 09:00-10:00 at UTC-8
        assert overlaps_window(MONDAY + 17 * HOUR, MONDAY + 18 * HOUR, 9, 10,
                               utc_offset_hours=-8)
        assert not overlaps_window(MONDAY + 17 * HOUR, MONDAY + 18 * HOUR, 9, 10)


class TestClusterPlaces:

    def test_nearby_stays_merge(self):
        history = [stay(0, 9, 10, *HOME), stay(0, 11, 12, *_offset(30)),
                   stay(0, 13, 14, *_offset(500))]
        places = cluster_places(history, 50)
        assert [p.members for p in places] == [[0, 1], [2]]
        assert (places[0].lon, places[0].lat) == HOME

    def test_empty(self):
        assert cluster_places([], 50) == []


class TestHomeWork:

    def test_seven_day_fixture(self):
        result = infer_mandatory(_week())
        assert _label_at(result, HOME) is Activity.HOME
        assert _label_at(result, WORK) is Activity.WORK
        assert len(result.labels) == 2

    def test_every_stay_maps_to_its_label(self):
        history = _week()
        result = infer_mandatory(history)
        for i, sp in enumerate(history):
            expected = Activity.HOME if (sp.lon, sp.lat) == HOME else Activity.WORK
            assert result.label_for_stay(i) is expected

    def test_single_all_day_stay_is_home_only(self):
        result = infer_mandatory([stay(0, 0, 24, *HOME)])
        assert list(result.labels.values()) == [Activity.HOME]

    def test_dropping_weekend_stays_keeps_labels(self):
        park = _offset(0, 2000)
        history = _week() + [stay(5, 10, 14, *park), stay(6, 9, 17, *park)]
        weekdays = [sp for sp in history if (sp.t_start - MONDAY) // DAY % 7 < 5]
        assert len(weekdays) < len(history)

        full, trimmed = infer_mandatory(history), infer_mandatory(weekdays)
        for lonlat in (HOME, WORK):
            assert _label_at(full, lonlat) is _label_at(trimmed, lonlat)
        assert _label_at(trimmed, HOME) is Activity.HOME
        assert _label_at(trimmed, WORK) is Activity.WORK
        assert _label_at(full, park) is None

    def test_empty_history(self):
        result = infer_mandatory([])
        assert result.places == [] and result.labels == {}

    def test_weekend_only_place_is_not_work(self):
        history = _week(work=None)
        history += [stay(5, 10, 16, *WORK), stay(6, 10, 16, *WORK)]
        result = infer_mandatory(history)
        assert _label_at(result, WORK) is None

    def test_place_too_close_to_home_is_not_work(self):
        cafe = _offset(80)
        result = infer_mandatory(_week(work=cafe), infer_config=InferConfig(min_work_dist_m=100))
        assert _label_at(result, cafe) is None

    def test_frequency_beats_distance(self):
        near, far = _offset(1000), _offset(9000)
        history = _week(work=near) + [stay(0, 8, 9, *far)]
        result = infer_mandatory(history)
        assert _label_at(result, near) is Activity.WORK
        assert _label_at(result, far) is None

    def test_frequency_tie_goes_to_farther_place(self):
        near, far = _offset(1000), _offset(9000)
        history = [stay(0, 9, 12, *near), stay(1, 9, 12, *far), stay(0, 20, 30, *HOME)]
        result = infer_mandatory(history)
        assert _label_at(result, far) is Activity.WORK

    def test_home_tie_goes_to_first_seen_place(self):
        other = _offset(2000)
        history = [stay(0, 20, 30, *HOME), stay(1, 20, 30, *other)]
        result = infer_mandatory(history)
        assert _label_at(result, HOME) is Activity.HOME


class TestSchool:

    def _education(self):
        school = PoiRecord(id="uni", name="Cairo University", lon=SCHOOL_POI[0],
                           lat=SCHOOL_POI[1], features={"amenity": "university"})
        restaurant = PoiRecord(id="kfc", name="KFC", lon=WORK[0], lat=WORK[1])
        return education_index(
            [school, restaurant],
            {"uni": classification("uni", (Activity.SCHOOL, 0.9)),
             "kfc": classification("kfc", (Activity.BUY_MEALS, 0.7))},
        )

    def test_education_index_keeps_top1_school_only(self):
        assert self._education().ids == ["uni"]

    def test_weekday_dwell_beside_school(self):
        campus = _offset(-3000 + 30)
        result = infer_mandatory(_week(work=campus), self._education())
        assert _label_at(result, campus) is Activity.SCHOOL
        assert _label_at(result, HOME) is Activity.HOME
        index = next(i for i, sp in enumerate(result.places) if (sp.lon, sp.lat) == campus)
        assert result.school_poi == {index: "uni"}

    def test_outside_school_radius_is_work(self):
        office = _offset(-3000 + 400)
        result = infer_mandatory(_week(work=office), self._education())
        assert _label_at(result, office) is Activity.WORK

    def test_work_and_school_can_coexist(self):
        campus = _offset(-3000 + 30)
        history = _week(work=WORK) + [stay(d, 17.2, 17.9, *campus) for d in range(5)]
        history.sort(key=lambda sp: sp.t_start)
        result = infer_mandatory(history, self._education())
        assert _label_at(result, WORK) is Activity.WORK
        assert _label_at(result, campus) is Activity.SCHOOL

    def test_no_education_index(self):
        campus = _offset(-3000 + 30)
        result = infer_mandatory(_week(work=campus))
        assert _label_at(result, campus) is Activity.WORK


class TestPrecedence:

    def test_home_place_never_relabelled(self):
        # dwelling at home all day every day: the work-hour visits do not make it Work
        history = [stay(day, 0, 24, *HOME) for day in range(7)]
        result = infer_mandatory(history)
        assert list(result.labels.values()) == [Activity.HOME]

    def test_each_label_used_once(self):
        campus = _offset(-3000 + 30)
        history = _week(work=campus) + [stay(0, 17.2, 17.9, *WORK)]
        result = infer_mandatory(history, TestSchool()._education())
        assert sorted(result.labels.values()) == [Activity.HOME, Activity.WORK, Activity.SCHOOL]
        assert _label_at(result, WORK) is Activity.WORK
