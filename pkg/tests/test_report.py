import pytest

from qaan.report import METRICS_FILE, ReportError, emit_report, read_metrics, summary_table, write_metrics

ROWS = [(1, "rbm", "kl", 1.2, 0.0), (2, "rbm", "kl", 0.9, 0.0), (1, "qbm", "kl", 1.0, 0.0),
        (2, "qbm", "kl", 0.7, 0.0), (2, "qbm", "degeneracy_warnings", 0.0, 0.0)]


class TestMetricsFile:
    def test_round_trip_exact(self, tmp_path):
        rows = [(1, "aan", "is", 1 / 3, 0.1), (2, "aan", "is", 2 / 3, 1e-17)]
        write_metrics(tmp_path / METRICS_FILE, rows)
        got = read_metrics(tmp_path / METRICS_FILE)
        assert [(r.epoch, r.mode, r.metric, r.mean, r.std) for r in got] == rows

    def test_missing(self, tmp_path):
        with pytest.raises(ReportError, match="no metrics file"):
            read_metrics(tmp_path / METRICS_FILE)

    def test_empty(self, tmp_path):
        write_metrics(tmp_path / METRICS_FILE, [])
        with pytest.raises(ReportError, match="no metric rows"):
            read_metrics(tmp_path / METRICS_FILE)

    def test_wrong_columns(self, tmp_path):
        (tmp_path / METRICS_FILE).write_text("a,b\n1,2\n")
        with pytest.raises(ReportError, match="expected columns"):
            read_metrics(tmp_path / METRICS_FILE)


class TestReport:
    def test_table_uses_final_epoch(self, tmp_path):
        write_metrics(tmp_path / METRICS_FILE, ROWS)
        table = summary_table(read_metrics(tmp_path / METRICS_FILE))
        assert "qbm | kl | 2 | 0.7 |" in table and "rbm | kl | 2 | 0.9 |" in table
        assert "1.2" not in table

    def test_emit(self, tmp_path):
        write_metrics(tmp_path / METRICS_FILE, ROWS)
        table = emit_report(tmp_path)
        assert (tmp_path / "report.txt").read_text() == table
        for name in ("curves.svg", "kl_bars.svg"):
            assert (tmp_path / name).read_text().lstrip().startswith("<?xml")

    def test_no_kl_bars_without_kl(self, tmp_path):
        write_metrics(tmp_path / METRICS_FILE, [(1, "aan", "is", 2.0, 0.1)])
        emit_report(tmp_path)
        assert (tmp_path / "curves.svg").exists() and not (tmp_path / "kl_bars.svg").exists()

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ReportError):
            emit_report(tmp_path)
        with pytest.raises(ReportError, match="not a directory"):
            emit_report(tmp_path / "nope")
