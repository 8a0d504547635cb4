"""Cell formatting and table rendering."""

from modevar.report import format_cell, render_table


def test_missing_values_render_as_na():
    assert format_cell(None) == "N/A"
    assert format_cell(float("nan")) == "N/A"
    assert format_cell(float("inf")) == "N/A"
    assert format_cell(float("-inf")) == "N/A"


def test_numbers_default_to_three_digits():
    assert format_cell(0.5) == "0.500"
    assert format_cell(-1.23456) == "-1.235"
    assert format_cell(7) == "7"
    assert format_cell("abc") == "abc"


def test_precise_mode_round_trips():
    x = 0.1 + 0.2
    assert float(format_cell(x, precise=True)) == x


def test_aligned_layout():
    text = render_table(["name", "value"], [["a", 1.0], ["long-name", None]])
    lines = text.splitlines()
    assert lines[0] == "name       value"
    assert set(lines[1]) == {"-", " "}
    assert lines[2] == "a          1.000"
    assert lines[3] == "long-name    N/A"


def test_tsv_layout():
    text = render_table(["a", "b"], [[1, 2.5]], tsv=True)
    assert text == "a\tb\n1\t2.500\n"


def test_no_trailing_spaces():
    text = render_table(["x", "yy"], [["a", None]])
    assert all(line == line.rstrip() for line in text.splitlines())
