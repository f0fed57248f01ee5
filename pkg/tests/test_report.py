import csv
import io
import xml.etree.ElementTree as ET

from rcacalib.calib import reliability_report
from rcacalib.report import RELIABILITY_COLUMNS, histogram_csv, reliability_csv, reliability_svg


def table():
    return reliability_report([(0.1, 0), (0.15, 1), (0.9, 1), (1.0, 1)], 5)


def test_reliability_csv():
    rows = list(csv.reader(io.StringIO(reliability_csv(table()))))
    assert tuple(rows[0]) == RELIABILITY_COLUMNS
    assert rows[1][:5] == ["0.000000", "0.200000", "2", "0.125000", "0.500000"]
    assert rows[2][2:] == ["0", "", "", "", ""]


def test_svg_is_well_formed():
    root = ET.fromstring(reliability_svg(table(), "t & u"))
    assert root.tag.endswith("svg")


def test_histogram_counts():
    rows = list(csv.reader(io.StringIO(histogram_csv([0.05, 0.06, 0.95, 1.0], [1, 0, 1, 1], 10))))
    assert rows[1][2:] == ["1", "1"] and rows[10][2:] == ["2", "0"]
