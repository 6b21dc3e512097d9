import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from ttpredict.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, main
from ttpredict.grid import read_matrix_csv

SCENARIO = {
    "segments": 3,
    "horizon": 576,
    "demand_profile": 40.0,
    "noise_sd_rel": 0.02,
    "seed": 5,
    "random_events": {"per_day": 6.0},
}
FAST = {"train": {"epochs": 30}, "cnn": {"filters": [2, 2], "hidden": [4], "epochs": 30}}
SPLIT = "2017-07-02T12:00:00Z"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scenario.json").write_text(json.dumps(SCENARIO))
    (d / "fast.json").write_text(json.dumps(FAST))
    assert main(["generate", "--config", str(d / "scenario.json"), "--out", str(d / "gen")]) == EXIT_OK
    assert main(["ingest", "--events", str(d / "gen" / "events.csv"), "--segments", str(d / "gen" / "segments.csv"),
                 "--start", "2017-07-01", "--end", "2017-07-03", "--out", str(d / "matrix.csv")]) == EXIT_OK
    return d


def evaluate(d, report, *extra):
    return main(["evaluate", "--matrix", str(d / "matrix.csv"), "--split", SPLIT,
                 "--config", str(d / "fast.json"), "--report", str(report), *extra])


class TestPipeline:
    def test_generate_outputs(self, workdir):
        names = sorted(p.name for p in (workdir / "gen").iterdir())
        assert names == ["events.csv", "scenario.json", "segments.csv", "truth.csv"]

    def test_ingest_recovers_truth(self, workdir):
        m = read_matrix_csv(workdir / "matrix.csv")
        truth = read_matrix_csv(workdir / "gen" / "truth.csv")
        assert m.shape == truth.shape == (3, 576)
        both = m.mask & truth.mask
        assert both.mean() > 0.95
        rel = np.abs(m.values[both] - truth.values[both]) / truth.values[both]
        assert np.mean(rel) < 0.02

    def test_ingest_prints_stats(self, workdir, capsys):
        main(["ingest", "--events", str(workdir / "gen" / "events.csv"),
              "--segments", str(workdir / "gen" / "segments.csv"), "--out", str(workdir / "m2.csv")])
        out = capsys.readouterr().out
        assert "S1:" in out and "trips matched" in out

    def test_train_and_predict(self, workdir):
        model = workdir / "lin.json"
        assert main(["train", "--matrix", str(workdir / "matrix.csv"), "--method", "linear",
                     "--window", "3,2,1", "--split", SPLIT, "--model-out", str(model)]) == EXIT_OK
        out = workdir / "pred.csv"
        assert main(["predict", "--model", str(model), "--matrix", str(workdir / "matrix.csv"),
                     "--out", str(out)]) == EXIT_OK
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["interval_start", "segment_id", "predicted_hr", "actual_hr"]
        assert {r["segment_id"] for r in rows} == {"S2"}
        assert rows[-1]["actual_hr"] == "" and float(rows[-1]["predicted_hr"]) > 0

    def test_evaluate_is_reproducible(self, workdir, capsys):
        assert evaluate(workdir, workdir / "r1.json", "--table", str(workdir / "t.txt")) == EXIT_OK
        printed = capsys.readouterr().out
        assert evaluate(workdir, workdir / "r2.json") == EXIT_OK
        assert (workdir / "r1.json").read_bytes() == (workdir / "r2.json").read_bytes()
        assert (workdir / "t.txt").read_text().strip() == printed.strip()
        doc = json.loads((workdir / "r1.json").read_text())
        assert sorted(doc["ranking"]) == ["avg", "cnn-general", "linear", "nn"]

    def test_console_script(self, workdir):
        exe = shutil.which("ttpredict")
        if exe is None:
            pytest.skip("package not installed")
        proc = subprocess.run([exe, "evaluate", "--matrix", str(workdir / "matrix.csv"), "--split", SPLIT,
                               "--methods", "avg", "--report", str(workdir / "r3.json")],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "provincial road requirement" in proc.stdout


class TestExitCodes:
    def test_empty_test_split(self, workdir):
        assert evaluate(workdir, workdir / "x.json", "--split", "2030-01-01") == EXIT_CONFIG

    def test_bad_window(self, workdir):
        assert evaluate(workdir, workdir / "x.json", "--window", "3") == EXIT_CONFIG

    def test_unknown_method(self, workdir):
        assert evaluate(workdir, workdir / "x.json", "--methods", "avg,svm") == EXIT_CONFIG

    def test_missing_matrix(self, workdir):
        assert main(["evaluate", "--matrix", str(workdir / "nope.csv"), "--split", SPLIT,
                     "--report", str(workdir / "x.json")]) == EXIT_DATA

    def test_missing_model(self, workdir):
        assert main(["predict", "--model", str(workdir / "nope.json"), "--matrix", str(workdir / "matrix.csv"),
                     "--out", str(workdir / "p.csv")]) == EXIT_DATA

    def test_malformed_events(self, workdir):
        bad = workdir / "bad_events.csv"
        bad.write_text("detector_id,vehicle_tag,timestamp_unix_s\nD0,A,yesterday\n")
        assert main(["ingest", "--events", str(bad), "--segments", str(workdir / "gen" / "segments.csv"),
                     "--out", str(workdir / "m3.csv")]) == EXIT_DATA

    def test_missing_scenario(self, workdir):
        assert main(["generate", "--config", str(workdir / "nope.json"), "--out", str(workdir / "g2")]) == EXIT_CONFIG

    def test_divergence(self, workdir):
        cfg = workdir / "wild.json"
        cfg.write_text(json.dumps({"cnn": {"filters": [2], "hidden": [3], "epochs": 20, "optimizer": "momentum",
                                           "momentum": 0.0, "learning_rate": 1e300}}))
        code = main(["evaluate", "--matrix", str(workdir / "matrix.csv"), "--split", SPLIT,
                     "--methods", "cnn-general", "--config", str(cfg), "--report", str(workdir / "x.json")])
        assert code == EXIT_DIVERGENCE

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["train"])
        assert info.value.code == 2
