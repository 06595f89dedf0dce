import pytest

from semid.adapters.parsers import (
    format_code_tuple,
    parse_anchors,
    parse_branching,
    parse_code_tuple,
    parse_float_list,
    parse_int_list,
)
from semid.errors import ConfigError


@pytest.mark.parametrize(
    "txt,expected",
    [
        ("32,40", [32, 40]),
        (" 8 , 8 ", [8, 8]),
        ("7", [7]),
        ("", None),
        (None, None),
    ],
)
def test_parse_int_list(txt, expected):
    assert parse_int_list(txt) == expected


@pytest.mark.parametrize("txt", ["a,b", "1,,2", "1.5", "-3", "1;2"])
def test_parse_int_list_rejects(txt):
    with pytest.raises(ConfigError):
        parse_int_list(txt, "--branching")


@pytest.mark.parametrize("txt", ["1,8", "8,0"])
def test_parse_branching_needs_two_or_more(txt):
    with pytest.raises(ConfigError):
        parse_branching(txt)


@pytest.mark.parametrize(
    "txt,expected",
    [
        ("auto", None),
        ("AUTO", None),
        (None, None),
        ("32,48", [32, 48]),
    ],
)
def test_parse_anchors(txt, expected):
    assert parse_anchors(txt) == expected


def test_code_tuple_format_and_parse():
    assert format_code_tuple([3, 0, 12]) == "3,0,12"
    assert parse_code_tuple("3,0,12") == (3, 0, 12)


def test_parse_code_tuple_empty():
    with pytest.raises(ValueError):
        parse_code_tuple("")


@pytest.mark.parametrize(
    "txt,expected",
    [
        ("1,1,0.5", [1.0, 1.0, 0.5]),
        ("2", [2.0]),
        ("", None),
        (None, None),
    ],
)
def test_parse_float_list(txt, expected):
    assert parse_float_list(txt) == expected


def test_parse_float_list_rejects():
    with pytest.raises(ConfigError):
        parse_float_list("1,x", "--field-weights")
