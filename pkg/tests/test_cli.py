import json

import numpy as np
import pytest

from driftscope.cli import EXIT_DRIFT, EXIT_ERROR, EXIT_OK, main
from driftscope.io import dataset_text
from driftscope.spectral import Clickstream


def simulate(tmp_path, name, *flags):
    out = tmp_path / f"{name}.jsonl"
    assert main(["simulate", "--out", str(out), *flags]) == EXIT_OK
    return out


def run(*argv):
    return main([str(a) for a in argv])


class TestAnalyze:
    def test_constant_no_drift(self, tmp_path):
        data = simulate(tmp_path, "c", "--kind", "constant", "--circuits", "4", "--samples", "500")
        rep = tmp_path / "r.json"
        assert run("analyze", data, "--out", rep) == EXIT_OK
        report = json.loads(rep.read_text())
        assert report["verdict"] == {"drift_detected": False, "exit_code": 0}
        assert all(c["significant"] == [] for c in report["circuits"].values())
        assert report["averaged"]["significant"] == []

    def test_tone_flagged_at_injection(self, tmp_path):
        data = simulate(tmp_path, "t", "--kind", "cosine-tone", "--samples", "1000",
                        "--amplitude", "0.2", "--index", "5", "--seed", "3")
        rep = tmp_path / "r.json"
        spectra = tmp_path / "s.csv"
        traj = tmp_path / "p.csv"
        code = run("analyze", data, "--out", rep, "--csv-spectra", spectra, "--csv-trajectories", traj)
        assert code == EXIT_DRIFT
        report = json.loads(rep.read_text())
        sig = report["circuits"]["0"]["significant"]
        assert 5 in [f["index"] for f in sig]
        assert sig[0]["hz"] == pytest.approx(sig[0]["index"] / (2 * 1000 * 1.0))
        assert spectra.read_text().startswith("circuit_id,index,hz,power\n")
        assert len(traj.read_text().splitlines()) == 1001

    @pytest.mark.parametrize("flag", [["--alpha", "1.5"], ["--alpha", "0"], ["--weight-w", "2"],
                                      ["--policy", "bogus"]])
    def test_bad_flags(self, tmp_path, flag):
        data = simulate(tmp_path, "c", "--kind", "constant", "--samples", "50")
        assert run("analyze", data, *flag) == EXIT_ERROR

    def test_malformed_names_line(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format_version": 1}\n{"circuit_id": "a", "outcomes": [0, 1]}\n{"circuit_id": "b"}\n')
        assert run("analyze", path) == EXIT_ERROR
        assert "line 3" in capsys.readouterr().err

    def test_mixed_lengths(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(dataset_text([Clickstream("a", [0, 1]), Clickstream("b", [0, 1, 1])]))
        assert run("analyze", path) == EXIT_ERROR

    def test_missing_file(self, tmp_path):
        assert run("analyze", tmp_path / "nope.jsonl") == EXIT_ERROR

    def test_index_only_note(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"format_version": 1}\n{"circuit_id": "a", "outcomes": [0, 1, 1, 0, 1, 0, 0, 1]}\n')
        rep = tmp_path / "r.json"
        assert run("analyze", path, "--out", rep) == EXIT_OK
        assert any("indices only" in n for n in json.loads(rep.read_text())["notes"])

    def test_deterministic(self, tmp_path):
        data = simulate(tmp_path, "t", "--kind", "cosine-tone", "--circuits", "3", "--samples", "400",
                        "--amplitude", "0.15", "--index", "7")
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run("analyze", data, "--out", a, "--estimator", "mle")
        run("analyze", data, "--out", b, "--estimator", "mle")
        assert a.read_bytes() == b.read_bytes()

    def test_multi_outcome(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 600
        i = np.arange(n)
        p11 = 0.3 + 0.2 * np.cos(4 * np.pi * (i + 0.5) / n)
        labels = np.where(rng.random(n) < p11, "11", rng.choice(["00", "01", "10"], n))
        path = tmp_path / "m.jsonl"
        path.write_text('{"format_version": 1, "raster_period": 1}\n'
                        + json.dumps({"circuit_id": "q", "outcomes": labels.tolist()}) + "\n")
        rep = tmp_path / "r.json"
        assert run("analyze", path, "--out", rep) == EXIT_DRIFT
        report = json.loads(rep.read_text())
        assert report["input"]["multi_outcome"]
        assert 4 in [f["index"] for f in report["circuits"]["q"]["significant"]]
        assert report["circuits"]["q"]["dof"] == 3
        # collapse to success / failure
        rep2 = tmp_path / "r2.json"
        bins = '{"11": 1, "00": 0, "01": 0, "10": 0}'
        assert run("analyze", path, "--bin-map", bins, "--out", rep2) == EXIT_DRIFT
        assert json.loads(rep2.read_text())["circuits"]["q"]["dof"] == 1

    def test_unmapped_label(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"format_version": 1}\n{"circuit_id": "q", "outcomes": ["a", "b", "c"]}\n')
        assert run("analyze", path, "--bin-map", '{"a": 0, "b": 1}') == EXIT_ERROR

    def test_round_trip_contains_injection(self, tmp_path):
        data = simulate(tmp_path, "t", "--kind", "cosine-tone", "--circuits", "5", "--samples", "1000",
                        "--amplitude", "0.1", "--index", "12", "--seed", "8")
        truth = json.loads((tmp_path / "t.truth.json").read_text())
        injected = {truth["circuits"]["0"]["params"]["index"]}
        rep = tmp_path / "r.json"
        assert run("analyze", data, "--out", rep) == EXIT_DRIFT
        report = json.loads(rep.read_text())
        flagged = {f["index"] for f in report["averaged"]["significant"]}
        for c in report["circuits"].values():
            flagged |= {f["index"] for f in c["significant"]}
        assert injected <= flagged

    def test_thread_env(self, tmp_path, monkeypatch):
        data = simulate(tmp_path, "c", "--kind", "constant", "--samples", "50")
        monkeypatch.setenv("DRIFTSCOPE_THREADS", "x")
        assert run("analyze", data, "--estimator", "mle") == EXIT_ERROR


class TestFitRB:
    def test_perfect_success(self, tmp_path):
        path = tmp_path / "rb.jsonl"
        streams = [Clickstream(f"m{m}", np.ones(40, int), metadata={"m": m}) for m in (2, 4, 8, 16)]
        path.write_text(dataset_text(streams, 1.0))
        rep, csv = tmp_path / "r.json", tmp_path / "r.csv"
        assert run("fit-rb", path, "--out", rep, "--csv", csv, "--n-times", 5) == EXIT_OK
        rows = json.loads(rep.read_text())["rb"]["instants"]
        assert len(rows) == 5 and all(r["r"] == 0.0 for r in rows)
        assert csv.read_text().splitlines()[0] == "t,r,A,B,lambda"

    def test_synthetic_within_tolerance(self, tmp_path):
        data = simulate(tmp_path, "rb", "--kind", "rb-family", "--circuits", "48", "--samples", "500",
                        "--lengths", "2,4,8,16,32,64", "--r0", "0.02", "--seed", "1")
        rep = tmp_path / "r.json"
        assert run("fit-rb", data, "--out", rep, "--times", "10,5000") == EXIT_OK
        for row in json.loads(rep.read_text())["rb"]["instants"]:
            assert abs(row["r"] - 0.02) < 0.15 * 0.02

    def test_missing_m_and_single_length(self, tmp_path):
        path = tmp_path / "rb.jsonl"
        path.write_text(dataset_text([Clickstream("a", [0, 1, 1]), Clickstream("b", [1, 1, 0])]))
        assert run("fit-rb", path) == EXIT_ERROR
        path.write_text(dataset_text([Clickstream(c, [0, 1, 1], metadata={"m": 4}) for c in "ab"]))
        assert run("fit-rb", path) == EXIT_ERROR


class TestFitRamsey:
    def test_missing_tw_and_l(self, tmp_path):
        data = simulate(tmp_path, "r", "--kind", "ramsey-family", "--circuits", "14", "--samples", "50")
        assert run("fit-ramsey", data) == EXIT_ERROR
        path = tmp_path / "x.jsonl"
        path.write_text(dataset_text([Clickstream("a", [0, 1, 1])]))
        assert run("fit-ramsey", path, "--tw", "4e-4") == EXIT_ERROR

    def test_zero_detuning(self, tmp_path):
        data = simulate(tmp_path, "r", "--kind", "ramsey-family", "--circuits", "14", "--samples", "1000",
                        "--seed", "4")
        rep, csv = tmp_path / "r.json", tmp_path / "r.csv"
        assert run("fit-ramsey", data, "--tw", "4e-4", "--out", rep, "--csv", csv, "--n-times", 20) == EXIT_OK
        ram = json.loads(rep.read_text())["ramsey"]
        assert max(abs(r["omega_hz"]) for r in ram["instants"]) <= 0.02
        assert ram["aic_table"] and set(ram["comparison"]) == {str(c) for c in range(14)}
        assert len(csv.read_text().splitlines()) == 21


class TestSimulate:
    def test_same_seed_identical(self, tmp_path):
        a = simulate(tmp_path, "a", "--kind", "brownian-phase", "--circuits", "3", "--samples", "200", "--seed", "9")
        b = simulate(tmp_path, "b", "--kind", "brownian-phase", "--circuits", "3", "--samples", "200", "--seed", "9")
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()

    def test_brownian_defaults_echoed(self, tmp_path):
        simulate(tmp_path, "a", "--kind", "brownian-phase", "--samples", "20")
        truth = json.loads((tmp_path / "a.truth.json").read_text())
        assert truth["defaults"]["a"] == pytest.approx(2 * np.pi * 1e-5)
        assert truth["circuits"]["0"]["params"]["a"] == pytest.approx(2 * np.pi * 1e-5)

    @pytest.mark.parametrize("flags", [["--circuits", "0"], ["--kind", "square"], ["--samples", "1"]])
    def test_usage_errors(self, tmp_path, flags):
        argv = ["simulate", "--out", str(tmp_path / "x.jsonl"), "--kind", "constant", *flags]
        assert main(argv) == EXIT_ERROR

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "driftscope" in capsys.readouterr().out
