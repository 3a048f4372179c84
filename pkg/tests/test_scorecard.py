from pathlib import Path

import pytest

from scorecard import FeatureMatrix, InvalidScore, UnknownComponent, load_matrix, score

FEATURES = Path(__file__).resolve().parent.parent / "features"


@pytest.fixture
def published():
    return load_matrix(FEATURES / "published_matrix.json")


def test_published_matrix_loads(published):
    assert published.baseline == "PSA"
    assert [d.device for d in published.devices] == ["FlexPipe", "Arista 7170", "Agilio Cx", "PSA", "T-switch"]
    flexpipe = published.devices[0].scores
    assert flexpipe["parser"] == ["NA", 1, "NA", 1]
    assert flexpipe["scheduler"] == [1, 1, 1, 1]


def test_strict_mode_rejects_out_of_domain(published):
    with pytest.raises(InvalidScore) as exc:
        score(published)
    assert exc.value.axis == "E2" and exc.value.value == 3


def test_lenient_totals_and_flags(published):
    report = score(published, strict=False)
    assert report.totals == {"FlexPipe": 20, "Arista 7170": 35, "Agilio Cx": 44, "PSA": 33, "T-switch": 3}
    assert report.out_of_domain == ["PSA deparser E2=3", "T-switch deparser E2=3"]
    arista = [(f.component, f.axis) for f in report.below_baseline if f.device == "Arista 7170"]
    assert arista == [("deparser", "E2")]
    assert all(f.device != "PSA" for f in report.below_baseline)


def test_render_lists_rows_in_component_order(published):
    text = score(published, strict=False).render()
    lines = text.splitlines()
    assert lines[0].split()[:2] == ["Component", "Device"]
    assert lines[2].startswith("parser") and "FlexPipe" in lines[2]
    assert "Below baseline PSA:" in text
    assert "T-switch deparser E2=3" in text


def test_unknown_component():
    matrix = FeatureMatrix.model_validate(
        {"devices": [{"device": "X", "scores": {"crossbar": [0, 0, 0, 0]}}]})
    with pytest.raises(UnknownComponent):
        score(matrix)


def test_wrong_score_count():
    matrix = FeatureMatrix.model_validate(
        {"devices": [{"device": "X", "scores": {"parser": [0, 0, 0]}}]})
    with pytest.raises(InvalidScore):
        score(matrix)


def test_processing_logic_allows_three():
    matrix = FeatureMatrix.model_validate(
        {"baseline": None, "devices": [{"device": "X", "scores": {"ingress_mau": [2, 2, 2, 3]}}]})
    report = score(matrix)
    assert report.totals == {"X": 9}
    assert report.below_baseline == []


def test_rows_reproduce_matrix_verbatim(published):
    report = score(published, strict=False)
    rows = {(component, device): values for component, device, values in report.rows()}
    for entry in published.devices:
        for component, values in entry.scores.items():
            assert rows[(component, entry.device)] == values
    assert len(rows) == 5 * 6


def test_totals_ignore_device_order(published):
    shuffled = FeatureMatrix(baseline="PSA", devices=list(reversed(published.devices)))
    assert score(shuffled, strict=False).totals == score(published, strict=False).totals
