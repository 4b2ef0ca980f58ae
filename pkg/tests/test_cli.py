import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import FIXTURES
from metashadow.cli import main
from metashadow.emulator import read_counts_csv, read_shotset
from metashadow.mitigate import read_table_csv
from metashadow.noise import load_noise


def _write_config(tmp_path, **kw):
    doc = {"state": {"w": 2}, "noise": "calibrated_noise.json", "shots": 2000, "reps": 4, "seed": 3}
    doc.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _svg_ok(path):
    root = ET.fromstring(path.read_text())
    assert root.tag.endswith("svg")
    assert root.attrib["width"] == "800" and root.attrib["height"] == "500"
    return root


class TestExitCodes:
    def test_no_command(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 64

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["povm-check", "--design", "tetra4"])
        assert info.value.code == 64

    def test_bad_threads(self):
        with pytest.raises(SystemExit) as info:
            main(["povm-check", "--threads", "0"])
        assert info.value.code == 64

    def test_missing_out(self, tmp_path):
        assert main(["run", "--config", str(_write_config(tmp_path))]) == 64

    def test_bad_data(self, tmp_path):
        bad = tmp_path / "c.csv"
        bad.write_text((FIXTURES / "calibration_counts.csv").read_text()[:120])
        assert main(["calibrate", "--counts", str(bad), "--out", str(tmp_path / "n.json")]) == 65

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"state": {"w": 2}, "bogus": 1}')
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 65

    def test_validation_threshold(self, tmp_path):
        assert main(["validate", "--sweep", "8", "--out", str(tmp_path / "v.json")]) == 0
        assert main(["validate", "--sweep", "8", "--threshold", "0.9999", "--out", str(tmp_path / "w.json")]) == 2

    def test_estimation_failure(self, tmp_path):
        noise = json.loads((FIXTURES / "calibrated_noise.json").read_text())
        for b in noise["bases"]:
            b["p_pl"] = [0.99, 0.99]
        npath = tmp_path / "lossy.json"
        npath.write_text(json.dumps(noise))
        cfg = _write_config(tmp_path, state={"w": 4}, noise=str(npath), shots=10, reps=1)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4

    def test_plot_empty_values(self, tmp_path):
        rep = tmp_path / "r.json"
        rep.write_text(json.dumps({"estimator": "fidelity", "values": [], "mean": 0, "std": 0}))
        assert main(["plot", str(rep), "--out", str(tmp_path / "p.svg")]) == 65


class TestCommands:
    def test_povm_check(self, tmp_path, capsys):
        out = tmp_path / "check.json"
        assert main(["povm-check", "--design", "icosa12", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert abs(doc["frame_potential"] - 1 / 3) < 1e-12
        assert (tmp_path / "check.json.manifest.json").exists()

    def test_fit_emulate_calibrate_pipeline(self, tmp_path):
        ops = tmp_path / "ops.json"
        counts = tmp_path / "counts.csv"
        noise = tmp_path / "noise.json"
        assert main(["fit-ports", "--out", str(ops)]) == 0
        assert main(["emulate", "--kind", "counts", "--ops", str(ops), "--seed", "1", "--out", str(counts)]) == 0
        table = read_counts_csv(counts)
        assert table.injected.tolist() == [10000] * 6
        assert main(["calibrate", "--counts", str(counts), "--starts", "4", "--out", str(noise)]) == 0
        lam = load_noise(noise)
        ref = load_noise(FIXTURES / "calibrated_noise.json")
        assert np.abs(lam.p_bf - ref.p_bf).max() < 0.01
        diag = json.loads((tmp_path / "noise_diagnostics.json").read_text())
        assert {"objective", "per_probe_fidelity", "starts", "converged"} <= set(diag)
        manifest = json.loads((tmp_path / "noise.json.manifest.json").read_text())
        assert manifest["command"] == "calibrate"
        assert str(counts) in manifest["inputs"]

    def test_emulate_shots(self, tmp_path):
        out = tmp_path / "shots"
        args = ["emulate", "--kind", "shots", "--state", "w3", "--noise", str(FIXTURES / "calibrated_noise.json")]
        assert main(args + ["--shots", "500", "--reps", "2", "--seed", "4", "--out", str(out)]) == 0
        s = read_shotset(out)
        assert s.reps == 2 and s.n == 3
        assert all(r.survived + r.lost == 500 for r in s.repetitions)
        assert (out / "manifest.json").exists()

    def test_run_outputs_and_thread_independence(self, tmp_path):
        cfg = _write_config(tmp_path, sweep={"mitigate": [True, False]})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["run", "--config", str(cfg), "--threads", "3", "--out", str(b), "--save-tables"]) == 0
        for name in ("report_000.json", "report_001.json", "values_000.csv", "values_001.csv", "index.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        report = json.loads((a / "report_000.json").read_text())
        assert report["sweep"] == {"mitigate": True} and len(report["values"]) == 4
        assert (a / "values_000.csv").read_text().splitlines()[0] == "repetition,value"
        table = read_table_csv(b / "tables_000" / "rep_000.csv", 6)
        assert table.probs.shape == (9, 4)
        manifest = json.loads((a / "manifest.json").read_text())
        assert manifest["seed"] == 3
        # --save-tables changes the configuration, --threads and --out do not
        assert manifest["config_hash"] != json.loads((b / "manifest.json").read_text())["config_hash"]
        c = tmp_path / "c"
        assert main(["run", "--config", str(cfg), "--threads", "2", "--out", str(c)]) == 0
        assert manifest["config_hash"] == json.loads((c / "manifest.json").read_text())["config_hash"]

    def test_seed_override(self, tmp_path):
        cfg = _write_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["run", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "b")]) == 0
        va = json.loads((tmp_path / "a" / "report_000.json").read_text())["values"]
        vb = json.loads((tmp_path / "b" / "report_000.json").read_text())["values"]
        assert va != vb
        assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 9

    def test_plots(self, tmp_path):
        cfg = _write_config(tmp_path, sweep={"h": [0.0, 1.0], "mitigate": [True, False]})
        run = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out", str(run)]) == 0
        hist, hist2 = tmp_path / "h.svg", tmp_path / "h2.svg"
        reports = [str(run / "report_002.json"), str(run / "report_003.json")]
        assert main(["plot", *reports, "--truth", "1", "--out", str(hist)]) == 0
        assert main(["plot", *reports, "--truth", "1", "--out", str(hist2)]) == 0
        assert hist.read_bytes() == hist2.read_bytes()
        _svg_ok(hist)
        curve = tmp_path / "c.svg"
        assert main(["plot", str(run), "--kind", "curve", "--guide", "1", "--out", str(curve)]) == 0
        root = _svg_ok(curve)
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2
        val = tmp_path / "v.json"
        assert main(["validate", "--sweep", "8", "--out", str(val)]) == 0
        vsvg = tmp_path / "v.svg"
        assert main(["plot", str(val), "--kind", "curve", "--out", str(vsvg)]) == 0
        _svg_ok(vsvg)

    def test_too_many_hist_series(self, tmp_path):
        cfg = _write_config(tmp_path, sweep={"h": [0.0, 0.5, 1.0]})
        run = tmp_path / "run"
        assert main(["run", "--config", str(cfg), "--out", str(run)]) == 0
        assert main(["plot", str(run), "--out", str(tmp_path / "h.svg")]) == 64
