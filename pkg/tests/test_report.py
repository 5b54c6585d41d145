"""Tests of run reports."""

import json

import pytest

from stochsym.exceptions import UndeserializableReport
from stochsym.report import Entry, Report


@pytest.fixture
def report(settings) -> Report:
    """A report with one passing, one informational and one failing entry."""
    report = Report.start("check", settings)
    report.add("symmetry X", True, {"model": "ex1.sde"}, {"max_residual": 1.5e-12})
    report.add("loaded model", inputs={"equations": ["dx1 = (1) dt + (1) dw1"]})
    report.add("symmetry wrong", False, results={"max_residual": 0.25})
    return report


class TestReport:
    """Tests of the Report class."""

    def test_verdicts(self, report):
        assert [entry.verdict for entry in report.entries] == ["pass", "info", "fail"]
        assert not report.passed
        assert report.verdict == "fail"

    def test_empty_report_passes(self, settings):
        assert Report.start("fixtures", settings).passed

    def test_settings_are_recorded(self, report, settings):
        assert report.settings["seed"] == settings.seed
        assert report.settings["points"] == settings.points

    def test_unknown_verdict_raises_error(self):
        with pytest.raises(ValueError):
            Entry("step", "maybe")

    def test_json_round_trip(self, report):
        text = report.to_json()
        parsed = Report.parse(text)
        assert parsed.as_dict() == json.loads(text)
        assert parsed.verdict == "fail"

    def test_json_is_stable(self, report):
        assert report.to_json() == Report.parse(report.to_json()).to_json()

    def test_parse_rejects_other_documents(self):
        with pytest.raises(UndeserializableReport):
            Report.parse('{"entries": []}')
        with pytest.raises(UndeserializableReport):
            Report.parse("not json")

    def test_text(self, report):
        lines = report.to_text().splitlines()
        assert lines[0] == "check: FAIL"
        assert lines[1] == "  [pass] symmetry X"
        assert "      model: ex1.sde" in lines
        assert "      max_residual = 1.5e-12" in lines
        assert "      equations: dx1 = (1) dt + (1) dw1" in lines

    def test_render(self, report):
        assert report.render("json").endswith("}\n")
        assert report.render() == report.to_text()
