import json
import math
import re

import pytest

from bucketflow import plot, report
from bucketflow.evaluation import EvalConfig, EvalPartial, evaluate_dataset, evaluate_sequence
from bucketflow.report import build_report, dumps, format_value, merge_documents, partial_from_document

from .helpers import build_dataset, table_matrix


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    return build_dataset(tmp_path_factory.mktemp("ds"))


@pytest.fixture(scope="module")
def whole(data):
    return build_report(evaluate_dataset(*data), EvalConfig())


class TestFormatValue:
    @pytest.mark.parametrize(
        "value, text",
        [(0.2873675, "0.287368"), (0.1234565, "0.123457"), (0.1234564999, "0.123456"), (1.0, "1.000000"), (None, "undefined")],
    )
    def test_half_up(self, value, text):
        assert format_value(value) == text

    def test_table_mean_prints(self):
        doc = build_report(EvalPartial(table_matrix()), EvalConfig())
        assert "dynamic 0.287368" in report.report_summary_lines(doc)[-1]


class TestReport:
    def test_deterministic(self, data, whole):
        again = build_report(evaluate_dataset(*data), EvalConfig())
        assert dumps(again) == dumps(whole)

    def test_structure(self, whole):
        assert whole["schema"] == report.REPORT_SCHEMA
        assert whole["sequences"] == [f"seq{i:04d}" for i in range(4)]
        assert whole["frames_evaluated"] == 12
        assert whole["missing_predictions"] == {"flagged": False, "count": 0, "frames": []}
        assert set(whole["threeway"]["categories"]) == {"foreground_dynamic", "foreground_static", "background_static"}
        assert sum(whole["point_histogram"].values()) > 0

    def test_undefined_is_null(self):
        doc = build_report(EvalPartial(table_matrix()), EvalConfig())
        text = dumps(doc)
        parsed = json.loads(text)
        assert parsed["per_class"]["BACKGROUND"]["dynamic_normalized_epe"] is None
        assert parsed["mean"]["mean_static_epe"] is None
        assert "NaN" not in text and "Infinity" not in text

    def test_nan_refused(self):
        with pytest.raises(ValueError):
            dumps({"x": math.nan})

    def test_merge_per_sequence_equals_whole(self, data, whole):
        gt_root, pred_root = data
        docs = [
            json.loads(dumps(build_report(evaluate_sequence(gt_root / f"seq{i:04d}", pred_root, EvalConfig()), EvalConfig())))
            for i in (2, 0, 3, 1)
        ]
        assert dumps(merge_documents(docs)) == dumps(whole)

    def test_merge_roundtrip_through_json(self, whole):
        partial, config = partial_from_document(json.loads(dumps(whole)))
        assert config == whole["config"]
        assert dumps(build_report(partial, config)) == dumps(whole)

    def test_merge_rejects_config_mismatch(self, data):
        a = build_report(evaluate_dataset(*data, sequences=["seq0000"]), EvalConfig())
        b = build_report(evaluate_dataset(*data, sequences=["seq0001"]), EvalConfig(max_radius=20.0))
        with pytest.raises(ValueError, match="different configurations"):
            merge_documents([a, b])

    def test_merge_rejects_duplicates(self, whole):
        with pytest.raises(ValueError, match="evaluated twice"):
            merge_documents([whole, whole])

    def test_bare_matrix(self):
        doc = merge_documents([table_matrix().to_dict()])
        assert doc["mean"]["mean_dynamic_normalized_epe"] == 0.2873675

    def test_missing_prediction_flagged(self, data, tmp_path):
        gt_root, pred_root = data
        import shutil

        shutil.copytree(pred_root, tmp_path / "pred")
        (tmp_path / "pred" / "seq0001" / "000001.bin").unlink()
        doc = build_report(evaluate_dataset(gt_root, tmp_path / "pred"), EvalConfig())
        assert doc["missing_predictions"]["frames"] == [{"sequence": "seq0001", "frame_id": 1}]
        assert doc["frames_evaluated"] == 11
        assert report.report_summary_lines(doc)[-1].startswith("WARNING: 1 frame")

    def test_load_report_rejects_other_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{}")
        with pytest.raises(ValueError):
            report.load_report(tmp_path / "x.json")


def _heights(svg):
    return {
        (m["series"], m["group"]): float(m["h"])
        for m in re.finditer(r'data-series="(?P<series>[^"]*)" data-group="(?P<group>[^"]*)"[^>]* height="(?P<h>[^"]*)"', svg)
    }


class TestPlot:
    def test_linear_ratio(self):
        a, b = plot.bar_heights([0.3, 0.6])
        assert b / a == pytest.approx(2.0, rel=1e-12)

    def test_log_ratio(self):
        a, b = plot.bar_heights([10, 1000], log_scale=True)
        assert b / a == pytest.approx(3.0, rel=1e-12)

    def test_undefined_bar(self):
        assert plot.bar_heights([None, 1.0]) == [None, plot.PLOT_HEIGHT]
        svg = plot.grouped_bar_svg("t", ["g"], ["a", "b"], [[None], [1.0]], "y")
        assert "n/a" in svg and len(_heights(svg)) == 1

    def test_svg_heights(self):
        svg = plot.grouped_bar_svg("t", ["g1", "g2"], ["m"], [[0.3, 0.6]], "y")
        h = _heights(svg)
        assert h[("m", "g2")] / h[("m", "g1")] == pytest.approx(2.0, rel=1e-4)

    def test_hatched(self):
        svg = plot.grouped_bar_svg("t", ["g"], ["sup", "unsup"], [[1.0], [0.5]], "y", hatched=["sup"])
        assert 'fill="url(#hatch0)"' in svg and 'fill="url(#hatch1)"' not in svg

    def test_escape(self):
        svg = plot.grouped_bar_svg('a<b & "c"', ["g"], ["m"], [[1.0]], "y")
        assert "a&lt;b &amp; &quot;c&quot;" in svg

    def test_charts_byte_identical(self, whole, tmp_path):
        a = plot.write_charts([whole, whole], ["x", "y"], tmp_path / "a", hatched=["x"])
        b = plot.write_charts([whole, whole], ["x", "y"], tmp_path / "b", hatched=["x"])
        assert [p.name for p in a] == ["mean_dynamic.svg", "per_class_dynamic.svg", "point_histogram.svg"]
        assert all(p.read_bytes() == q.read_bytes() for p, q in zip(a, b))

    def test_taxonomy_mismatch(self, whole):
        other = json.loads(dumps(whole))
        other["bucket_matrix"]["classes"] = ["BACKGROUND", "SMALL", "MEDIUM", "LARGE"]
        with pytest.raises(ValueError, match="different taxonomies"):
            plot.per_class_dynamic_chart([whole, other], ["a", "b"])

    def test_label_validation(self, whole, tmp_path):
        with pytest.raises(ValueError):
            plot.write_charts([whole], ["a", "b"], tmp_path)
        with pytest.raises(ValueError):
            plot.write_charts([whole, whole], ["a", "a"], tmp_path)

    def test_histogram_log(self, whole):
        svg = plot.histogram_chart(whole)
        h = _heights(svg)
        counts = {c: n for c, n in whole["point_histogram"].items() if n > 0}
        top = max(counts, key=counts.get)
        assert h[("points", top)] == pytest.approx(plot.PLOT_HEIGHT)
        for c, n in counts.items():
            assert h[("points", c)] == pytest.approx(
                plot.PLOT_HEIGHT * math.log10(n) / math.log10(counts[top]), abs=1e-4
            )
