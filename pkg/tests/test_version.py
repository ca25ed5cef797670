import pytest
from hypothesis import given, strategies as st

from pakrat.errors import VersionError
from pakrat.version import (
    ANY,
    Exact,
    Relational,
    Wildcard,
    compare,
    matches,
    parse_spec,
    parse_version,
)

suffixes = st.sampled_from(["", "", "", "a", "a0", "a1", "b2", "rc1", "post"])
segments = st.tuples(st.integers(0, 30), suffixes)
version_texts = st.lists(segments, min_size=1, max_size=5).map(
    lambda segs: ".".join(f"{n}{s}" for n, s in segs)
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("3.12.2", ((3, ""), (12, ""), (2, ""))),
        ("0", ((0, ""),)),
        ("2.0a0", ((2, ""), (0, "a0"))),
    ],
)
def test_parse_version_segments(text, expected):
    v = parse_version(text)
    assert v.segments == expected
    assert str(v) == text


@pytest.mark.parametrize("text, index", [("1..2", 1), (".1", 0), ("1.", 1)])
def test_empty_segment_names_index(text, index):
    with pytest.raises(VersionError, match=f"index {index}"):
        parse_version(text)


@pytest.mark.parametrize("text", ["", "1.0-1", "1.0_2", "v1.0", "1.0A", "1.a"])
def test_bad_versions(text):
    with pytest.raises(VersionError):
        parse_version(text)


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ("1.0", "1.0.0", 0),
        ("3.12.2", "3.13.0", -1),
        ("2.0a0", "2.0", -1),
        ("2.0", "2.0a0", 1),
        ("1.10", "1.9", 1),
        ("1.0a", "1", -1),
        ("1.0rc1", "1.0b2", 1),
    ],
)
def test_compare(a, b, expected):
    assert compare(parse_version(a), parse_version(b)) == expected


def test_sorting_uses_compare():
    vs = [parse_version(t) for t in ["1.1", "1.0.1", "1.0", "2.0a0", "2.0"]]
    assert [v.raw for v in sorted(vs)] == ["1.0", "1.0.1", "1.1", "2.0a0", "2.0"]
    assert parse_version("1.0") == parse_version("1.0.0")
    assert hash(parse_version("1.0")) == hash(parse_version("1.0.0"))


@given(version_texts, version_texts, version_texts)
def test_compare_is_a_total_order(ta, tb, tc):
    a, b, c = parse_version(ta), parse_version(tb), parse_version(tc)
    ab, ba = compare(a, b), compare(b, a)
    assert ab in (-1, 0, 1)
    assert ab == -ba
    if ab <= 0 and compare(b, c) <= 0:
        assert compare(a, c) <= 0
    assert (ab == 0) == (a == b)


@given(version_texts)
def test_padding_and_round_trip(t):
    v = parse_version(t)
    assert str(v) == t
    assert compare(v, parse_version(t + ".0")) == 0


def test_parse_spec_common_forms():
    s = parse_spec("bzip2 >=1.0.8, <2.0a0")
    assert s.name == "bzip2"
    assert s.constraints == (
        Relational(">=", parse_version("1.0.8")),
        Relational("<", parse_version("2.0a0")),
    )
    assert parse_spec("*", name="python").constraints == (ANY,)
    rel = parse_spec(">=0.10.0,<0.11", name="ros-humble-desktop")
    assert [c.op for c in rel.constraints] == [">=", "<"]
    assert parse_spec("1.1.*", name="cowpy").constraints == (Wildcard(parse_version("1.1")),)
    assert parse_spec("numpy 1.26.4").constraints == (Exact(parse_version("1.26.4")),)
    assert parse_spec("numpy ==1.26.4") == parse_spec("numpy 1.26.4")


def test_spec_canonical_rendering():
    assert parse_spec("BZip2  >= 1.0.8 ,  < 2.0a0").render() == "bzip2 >=1.0.8,<2.0a0"
    assert parse_spec("tzdata").render() == "tzdata"
    assert parse_spec("numpy>=1.0").render() == "numpy >=1.0"


def test_build_string_is_carried_not_evaluated():
    s = parse_spec("python_abi 3.12.* *_cp312")
    assert s.build == "*_cp312"
    assert s.constraints == (Wildcard(parse_version("3.12")),)
    assert s.render() == "python_abi 3.12.* *_cp312"
    assert matches(s, "3.12.1")


@pytest.mark.parametrize(
    "text",
    ["foo ~=1.0", "foo =>1.0", "foo 1.*.2", "foo >=1.*", "foo 1.0|2.0", "foo >=1.0,", "foo ,1.0", "foo ^1"],
)
def test_bad_specs(text):
    with pytest.raises(VersionError):
        parse_spec(text)


@pytest.mark.parametrize(
    "spec, version, expected",
    [
        ("cowpy 1.1.*", "1.1.9", True),
        ("cowpy 1.1.*", "1.2.0", False),
        ("cowpy 1.1.*", "1.1", True),
        ("cowpy 1.1.*", "1.10", False),
        ("bzip2 >=1.0.8,<2.0a0", "1.0.8", True),
        ("bzip2 >=1.0.8,<2.0a0", "2.0a0", False),
        ("bzip2 >=1.0.8,<2.0a0", "1.9.99", True),
        ("python >=3.6, <3.13", "3.13", False),
        ("python >=3.6, <3.13", "3.12.2", True),
        ("foo !=1.0", "1.0.0", False),
    ],
)
def test_matches(spec, version, expected):
    assert matches(parse_spec(spec), parse_version(version)) is expected


@given(version_texts)
def test_exact_and_strict_upper_bound_laws(t):
    v = parse_version(t)
    assert matches(parse_spec(t, name="x"), v)
    assert not matches(parse_spec("<" + t, name="x"), v)


ops = st.sampled_from(["", ">=", "<=", ">", "<", "!=", "=="])


@given(st.lists(st.tuples(ops, version_texts), min_size=1, max_size=3), st.booleans())
def test_canonical_rendering_is_idempotent(parts, spaced):
    sep = " , " if spaced else ","
    text = "pkg " + sep.join(f"{op}{' ' if spaced and op else ''}{v}" for op, v in parts)
    once = parse_spec(text).render()
    assert parse_spec(once).render() == once
    assert parse_spec(once) == parse_spec(text)
