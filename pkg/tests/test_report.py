from permlens import report
from permlens.gap import GapReport, diff_maps
from permlens.pipeline import RewriteOptions, analyze

from conftest import load_fw

PNG = b"\x89PNG\r\n\x1a\n"


def test_size_summary_worked(worked):
    pm = analyze(worked).map
    assert report.size_summary(pm) == "0 perms: 1, 1 perm: 3"
    assert report.size_rows(pm) == [(0, 1), (1, 3)]


def test_size_summary_binder_explosion():
    fw = load_fw("binder")
    assert report.size_summary(analyze(fw, options=RewriteOptions(redirect=False)).map) == "6 perms: 4"
    assert report.size_summary(analyze(fw).map) == "1 perm: 4"


def test_tsv_and_text():
    rows = [("a", 1), ("b", 22)]
    assert report.to_tsv(("k", "v"), rows) == "k\tv\na\t1\nb\t22\n"
    text = report.to_text(("k", "v"), rows)
    assert text.splitlines()[1] == "-  --" and text.splitlines()[3] == "b  22"


def test_gap_histogram_counts_discarded():
    reports = [GapReport("a", frozenset({"P1"}), gap=frozenset({"P1"})), GapReport("b", frozenset()),
               GapReport("c", frozenset(), discarded=True, reason="reflection")]
    rows = report.gap_histogram(reports)
    assert rows == [(0, 1), (1, 1), ("discarded", 1)]
    assert sum(r[1] for r in rows) == 3


def test_diff_rows(worked):
    pm = analyze(worked).map
    rows = report.diff_rows(diff_maps(pm, pm))
    assert rows[0] == ("identical", 4, "100.00%") and rows[-1] == ("total", 4, "100.00%")


def test_resolution_rows_shape():
    rows = report.resolution_rows(analyze(load_fw("strings")).map)
    assert rows[0] == ("total analyses", 8)
    assert dict(rows)["string not found"] == 3


def test_figures_written(tmp_path, worked):
    pm = analyze(worked).map
    paths = [report.plot_sizes(pm, tmp_path / "s.png"),
             report.plot_gap_histogram([GapReport("a", frozenset())], tmp_path / "g.png"),
             report.plot_diff(diff_maps(pm, pm), tmp_path / "d.png")]
    for p in paths:
        assert p.read_bytes().startswith(PNG)
    again = report.plot_sizes(pm, tmp_path / "s2.png")
    assert again.read_bytes() == paths[0].read_bytes()
