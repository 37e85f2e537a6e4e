import csv
import itertools
import json
import math
from pathlib import Path

import pytest

from clicktree.cli import EXIT_INVALID, EXIT_OK, EXIT_ORACLE_FAILURE, SWEEP_COLUMNS, main
from clicktree.estimator import Classification, EstimateReport
from clicktree.models import CountSummary
from clicktree.registry import manifest_path, read_manifest
from clicktree.timetags import ingest, read_stream

from .utils import make_counts


def simulate(tmp_path: Path, name: str, *args: str) -> Path:
    output = tmp_path / name
    assert main(["simulate", "-o", str(output), *args]) == EXIT_OK
    return output


def test_simulate_dark_source(tmp_path: Path):
    output = simulate(tmp_path, "dark.json", "--preset", "dark", "--pulses", "1000")

    counts = CountSummary.model_validate_json(output.read_text())
    assert counts.n_trials == 1000
    assert all(count == 0 for count in counts.counts.values())

    manifest = read_manifest(manifest_path(output))
    assert manifest.command == "simulate"
    assert manifest.config["m"] == 0
    assert manifest.outputs == {"counts": str(output)}


def test_simulate_is_deterministic(tmp_path: Path):
    args = ("--preset", "cluster", "--pulses", "5000", "--seed", "3", "--lam", "0.05")
    first = simulate(tmp_path, "first.json", *args)
    second = simulate(tmp_path, "second.json", *args)
    assert first.read_bytes() == second.read_bytes()


def test_paper_preset_reports_every_pair(tmp_path: Path):
    output = simulate(tmp_path, "paper.json", "--preset", "paper", "--pulses", "10000")
    counts = CountSummary.model_validate_json(output.read_text())
    assert len(counts.pairs) == 6
    assert counts.channels == 4


def test_manifest_repeats_the_run(tmp_path: Path):
    first = simulate(tmp_path, "first.json", "--m", "2", "--eta", "0.3", "--pulses", "3000", "--seed", "8")
    second = tmp_path / "second.json"
    assert main(["simulate", "--manifest", str(manifest_path(first)), "-o", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()


def test_simulate_needs_output():
    assert main(["simulate", "--pulses", "10"]) == EXIT_INVALID


def test_stream_and_counts_agree(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    stream = tmp_path / "tags.txt"
    counts_path = simulate(tmp_path, "counts.json", "--preset", "cluster", "--pulses", "4000", "--stream", str(stream))
    assert ingest(read_stream(stream)) == CountSummary.model_validate_json(counts_path.read_text())

    reports = []
    for source in (counts_path, stream):
        output = tmp_path / f"{source.stem}-report.json"
        assert main(["analyze", str(source), "--method", "propagation", "-o", str(output)]) == EXIT_OK
        reports.append(EstimateReport.model_validate_json(output.read_text()))

    assert reports[0].estimates == reports[1].estimates
    assert "classification:" in capsys.readouterr().out


def test_analyze_precomputed_estimates(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    source = tmp_path / "reported.json"
    source.write_text(json.dumps({"estimates": [{"kind": "g", "order": 2, "value": 0.407, "sigma": 0.012}]}))
    output = tmp_path / "report.json"

    assert main(["analyze", str(source), "-o", str(output)]) == EXIT_OK

    out = capsys.readouterr().out
    assert out.startswith("classification: nonclassical")
    assert "single-emitter candidate" in out

    report = EstimateReport.model_validate_json(output.read_text())
    assert report.classification == Classification.NONCLASSICAL
    assert read_manifest(manifest_path(output)).classification == "nonclassical"


def test_report_renders_a_saved_report(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    source = tmp_path / "reported.json"
    source.write_text(json.dumps({"estimates": [{"kind": "theta", "order": 2, "value": 0.98, "sigma": 0.001}]}))
    report = tmp_path / "report.json"
    assert main(["analyze", str(source), "-o", str(report)]) == EXIT_OK
    analyzed = capsys.readouterr().out

    rendered = tmp_path / "report.txt"
    assert main(["report", str(report), "-o", str(rendered)]) == EXIT_OK
    assert rendered.read_text() == analyzed


def test_analyze_golden_stream(golden_path: Path, capsys: pytest.CaptureFixture[str]):
    assert main(["analyze", str(golden_path), "--boot", "50", "--chunk-size", "2"]) == EXIT_OK
    assert "theta2[0-1]" in capsys.readouterr().out


def test_analyze_missing_input(tmp_path: Path):
    assert main(["analyze", str(tmp_path / "missing.json")]) == EXIT_INVALID


def test_sweep(tmp_path: Path):
    output = tmp_path / "sweep.csv"
    args = ["sweep", "--preset", "paper", "--pulses", "2000", "--method", "propagation"]
    assert main([*args, "--axis", "lam", "--values", "0,0.01,0.1", "-o", str(output)]) == EXIT_OK

    with output.open(newline="") as fh:
        rows = list(csv.reader(fh))

    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert len(rows) == 4
    assert [row[1] for row in rows[1:]] == ["0", "0.01", "0.1"]
    # one emitter without background never fires two channels
    assert abs(float(rows[1][3])) < 1e-9
    thetas = {row[2] for row in rows[1:]}
    assert len(thetas) == 1
    assert float(thetas.pop()) < 1.0


def test_imbalance_sweep_needs_even_channels(tmp_path: Path):
    output = tmp_path / "sweep.csv"
    args = ["sweep", "--channels", "3", "--pulses", "100", "--axis", "imbalance", "--values", "0.1"]
    assert main([*args, "-o", str(output)]) == EXIT_INVALID


def test_oracle_check(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    args = ["oracle-check", "--max-photons", "3", "--max-channels", "3", "--trees", "3"]
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out.startswith("oracle check: pass")

    output = tmp_path / "oracle.json"
    assert main([*args, "--paper-literal", "-o", str(output)]) == EXIT_ORACLE_FAILURE
    assert "worst case: Q_click(" in capsys.readouterr().out
    assert read_manifest(manifest_path(output)).classification == "fail"


def test_bad_config_file(tmp_path: Path):
    config = tmp_path / "run.conf"
    config.write_text("m = 2\ncolour = blue\n")
    assert main(["simulate", "--config", str(config), "-o", str(tmp_path / "out.json")]) == EXIT_INVALID
    assert not (tmp_path / "out.json").exists()


def test_bad_argument():
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--m", "two"])

    assert e.value.code == EXIT_INVALID


def test_runs(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    registry = tmp_path / "runs.db"
    output = tmp_path / "counts.json"
    assert main(["--registry", str(registry), "simulate", "--pulses", "100", "--seed", "4", "-o", str(output)]) == 0
    capsys.readouterr()

    assert main(["--registry", str(registry), "runs", "command:simulate AND seed:4"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    assert lines[0].split("\t")[2:] == ["simulate", "seed=4", "-", str(output)]

    assert main(["--registry", str(registry), "runs", "command:analyze"]) == EXIT_OK
    assert capsys.readouterr().out == ""


def test_runs_needs_registry():
    assert main(["runs"]) == EXIT_INVALID


def test_analyze_pairs_only_summary(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    labels = {str(c): 100 for c in range(4)}
    labels.update({f"{a}-{b}": 5 for a, b in itertools.combinations(range(4), 2)})
    source = tmp_path / "pairs.json"
    source.write_text(make_counts(4, 10_000, labels).model_dump_json())

    assert main(["analyze", str(source), "--method", "propagation"]) == EXIT_OK
    assert "theta2[0-1]" in capsys.readouterr().out


def test_analyze_manifest_repeats_the_analysis(tmp_path: Path):
    counts = simulate(tmp_path, "counts.json", "--preset", "cluster", "--pulses", "3000", "--seed", "2")
    first = tmp_path / "first.json"
    args = ["--method", "bootstrap", "--boot", "40", "--boot-seed", "3", "--weighting", "spread", "--orders", "2,3"]
    assert main(["analyze", str(counts), *args, "-o", str(first)]) == EXIT_OK

    manifest = read_manifest(manifest_path(first))
    assert manifest.options["calibrate_t0"] is False
    assert manifest.options["chunk_size"] > 0
    assert manifest.options["weighting"] == "spread"

    second = tmp_path / "second.json"
    assert main(["analyze", "--manifest", str(manifest_path(first)), "-o", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    assert read_manifest(manifest_path(second)).inputs == {"input": str(counts)}


def test_analyze_manifest_must_match_the_command(tmp_path: Path):
    counts = simulate(tmp_path, "counts.json", "--pulses", "100")
    assert main(["analyze", "--manifest", str(manifest_path(counts))]) == EXIT_INVALID


def test_analyze_needs_input():
    assert main(["analyze"]) == EXIT_INVALID


def test_sweep_manifest_repeats_the_sweep(tmp_path: Path):
    first = tmp_path / "first.csv"
    args = ["sweep", "--preset", "paper", "--pulses", "2000", "--method", "propagation", "--boot-seed", "5"]
    assert main([*args, "--axis", "lam", "--values", "0,0.05", "-o", str(first)]) == EXIT_OK

    options = read_manifest(manifest_path(first)).options
    assert options["boot_seed"] == 5
    assert options["k_sigma"] == 3.0
    assert options["weighting"] == "mean"

    second = tmp_path / "second.csv"
    assert main(["sweep", "--manifest", str(manifest_path(first)), "-o", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize(
    "args",
    [
        ["--values", "0.1", "-o", "sweep.csv"],
        ["--axis", "lam", "--values", "0.1"],
    ],
)
def test_sweep_needs_axis_and_output(args: list[str]):
    assert main(["sweep", "--pulses", "100", *args]) == EXIT_INVALID


def test_emitter_number_sweep(tmp_path: Path):
    output = tmp_path / "sweep.csv"
    args = ["sweep", "--preset", "paper", "--lam", "0", "--pulses", "1000", "--method", "propagation"]
    assert main([*args, "--axis", "m", "--values", "1,2,4,8", "-o", str(output)]) == EXIT_OK

    with output.open(newline="") as fh:
        rows = list(csv.DictReader(fh))

    single = math.log(float(rows[0]["theta_model"]))
    for row in rows:
        m = float(row["value"])
        assert math.log(float(row["theta_model"])) == pytest.approx(m * single, rel=1e-8)


def test_imbalance_sweep(tmp_path: Path):
    output = tmp_path / "sweep.csv"
    args = ["sweep", "--preset", "paper", "--m", "3", "--lam", "0.01", "--pulses", "1000", "--method", "propagation"]
    assert main([*args, "--axis", "imbalance", "--values", "0,0.1,0.2", "-o", str(output)]) == EXIT_OK

    with output.open(newline="") as fh:
        rows = list(csv.DictReader(fh))

    gs = [float(row["g_model"]) for row in rows]
    assert max(gs) == pytest.approx(min(gs), rel=1e-3)
    assert len({row["theta_model"] for row in rows}) == 3
