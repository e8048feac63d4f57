from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twinledger.errors import (
    DuplicateSchema,
    InactiveSource,
    MissingField,
    NoPriorValue,
    NonInvertibleConversion,
    UnknownSchema,
)
from twinledger.wrangling import (
    FAHRENHEIT_TO_CELSIUS,
    CleaningPolicy,
    Quality,
    RawReading,
    SchemaDescriptor,
    UnitConversion,
    Wrangler,
    schema_from_config,
)

F_SCHEMA = SchemaDescriptor("thermo-f", {"temp_f": ("temperature", "fahrenheit")},
                            {"fahrenheit": FAHRENHEIT_TO_CELSIUS})


@pytest.fixture
def wrangler(consortium):
    w = Wrangler(consortium.registry)
    w.register_schema(F_SCHEMA)
    return w


def raw(value, device="s1", tick=0, key="temp_f"):
    return RawReading("thermo-f", {key: value} if value is not None else {}, device, tick)


def test_conversion_is_composed_from_c_equals_f_minus_32():
    conv = schema_from_config({
        "schema_id": "x", "field_map": {"t": {"metric": "temperature", "unit": "F"}},
        "conversions": {"F": {"scale": "5/9", "offset": "-160/9", "canonical_unit": "celsius"}},
    }).unit_conversions["F"]
    assert conv == FAHRENHEIT_TO_CELSIUS
    for f in (-40, 0, 98.6, 451):
        assert conv.to_canonical(Fraction(f)) == (Fraction(f) - 32) * Fraction(5, 9)


def test_anchor_points_exact(wrangler):
    hot = wrangler.wrangle(raw(212))
    assert (hot.metric, hot.value, hot.unit) == ("temperature", 100.0, "celsius")
    assert wrangler.wrangle(raw(32)).value == 0.0
    assert wrangler.wrangle(raw("212")).value == 100.0


def test_schema_registration_errors(wrangler):
    with pytest.raises(DuplicateSchema):
        wrangler.register_schema(F_SCHEMA)
    with pytest.raises(NonInvertibleConversion):
        wrangler.register_schema(SchemaDescriptor(
            "zero", {"v": ("pressure", "bar")}, {"bar": UnitConversion(0, 1, "kpa")}))
    with pytest.raises(UnknownSchema):
        wrangler.wrangle(RawReading("nope", {}, "s1", 0))


def test_inactive_source(wrangler, consortium):
    with pytest.raises(InactiveSource):
        wrangler.wrangle(raw(50, device="ghost"))
    consortium.revoke("s1", "broken")
    with pytest.raises(InactiveSource):
        wrangler.wrangle(raw(50))


@pytest.mark.parametrize("bad", [None, "n/a", float("nan"), float("inf"), True])
def test_missing_or_invalid_values(wrangler, bad):
    with pytest.raises(MissingField):
        wrangler.wrangle(raw(bad))


def test_cleaning_policies(consortium):
    batch = [raw(122, tick=1), raw(None, tick=2), raw(140, tick=3)]

    def fresh():
        w = Wrangler(consortium.registry)
        w.register_schema(F_SCHEMA)
        return w

    assert [r.value for r in fresh().clean(batch, CleaningPolicy.DROP)] == [50.0, 60.0]
    w = fresh()
    w.seed_history("s1", "temperature", 50)
    imputed = w.clean([raw(None, tick=0)] + batch[2:], CleaningPolicy.IMPUTE_LAST_VALUE)
    assert [(r.value, r.quality) for r in imputed] == [(50.0, Quality.IMPUTED),
                                                       (60.0, Quality.VALID)]
    flagged = fresh().clean(batch, CleaningPolicy.FLAG_ONLY)
    assert [r.quality for r in flagged] == [Quality.VALID, Quality.REJECTED, Quality.VALID]
    assert flagged[1].value is None
    assert [r.seq for r in flagged] == [0, 1, 2]
    with pytest.raises(NoPriorValue):
        fresh().clean([raw(None)], CleaningPolicy.IMPUTE_LAST_VALUE)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_round_trip_relative_error(celsius):
    back = FAHRENHEIT_TO_CELSIUS.to_canonical(Fraction(FAHRENHEIT_TO_CELSIUS.to_raw(celsius)))
    assert abs(float(back) - celsius) <= 1e-9 * max(1.0, abs(celsius))


@given(st.lists(st.one_of(st.none(), st.floats(-500, 500, allow_nan=False)), max_size=12))
def test_clean_keeps_order_and_valid_values(values):
    w = Wrangler()
    w.register_schema(F_SCHEMA)
    batch = [raw(v, tick=i) for i, v in enumerate(values)]
    out = w.clean(batch, CleaningPolicy.FLAG_ONLY)
    assert [r.timestamp for r in out] == list(range(len(values)))
    for v, r in zip(values, out):
        if v is None:
            assert r.quality is Quality.REJECTED
        else:
            assert r.value == float(FAHRENHEIT_TO_CELSIUS.to_canonical(Fraction(v)))
