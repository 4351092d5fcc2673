"""End-to-end command line behavior and exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from spafa.cli import (build_run_config, derive_seed, load_config, main,
                       read_trace, ConfigError)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A small simulated dataset shared by the fit/select-d tests."""
    out = tmp_path_factory.mktemp("sim")
    cfg = out / "sim.cfg"
    cfg.write_text(
        "sim.lattice = square(6)\n"
        "sim.h0 = 3\n"
        "sim.potts_d = 1.0\n"
        "sim.potts_sweeps = 20\n"
        "sim.p = 20\n"
        "sim.q = 3\n"
        "sim.seed = 11\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(out),
                 "--no-figures"]) == 0
    return out


def fit_config(tmp_path, extra=""):
    cfg = tmp_path / "fit.cfg"
    cfg.write_text(
        "prior.family = MFM\n"
        "prior.beta = 1.0\n"
        "prior.delta = -1.0\n"
        "prior.d = 0.5\n"
        "hyper.q = 2\n"
        "sampler.iterations = 8\n"
        "sampler.burn_in = 4\n"
        "sampler.seed = 5\n"
        "sampler.init = kmeans(3)\n"
        + extra)
    return cfg


class TestLoadConfig:
    def test_flat_format(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("# comment\nprior.d = 1.5\nsampler.init = kmeans(4)\n"
                     "ingest.normalize = true\n\n")
        data = load_config(f)
        assert data == {"prior.d": 1.5, "sampler.init": "kmeans(4)",
                        "ingest.normalize": True}

    def test_json_format(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"prior.d": 1.5, "run.n_chains": 2}))
        data = load_config(f)
        assert data["prior.d"] == 1.5 and data["run.n_chains"] == 2

    def test_bad_line(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("no equals sign here\n")
        with pytest.raises(ConfigError, match="line 1"):
            load_config(f)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="sim.H0"):
            build_run_config({"sim.H0": 3})

    def test_d_grid_string(self):
        cfg = build_run_config({"run.d_grid": "0,0.5,1"})
        assert cfg.d_grid == [0.0, 0.5, 1.0]

    def test_seed_override(self):
        cfg = build_run_config({"sampler.seed": 3}, seed_override=9)
        assert cfg.sampler.seed == 9


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        a = derive_seed(1, "chain", 0)
        assert a == derive_seed(1, "chain", 0)
        assert a != derive_seed(1, "chain", 1)
        assert a != derive_seed(2, "chain", 0)
        assert 0 <= a < 2 ** 63


class TestSimulate:
    def test_outputs_and_determinism(self, dataset, tmp_path):
        for name in ("expression.csv", "coords.csv", "truth.csv",
                     "params.json", "manifest.json"):
            assert (dataset / name).exists()
        # rerun with the same config produces identical bytes
        cfg = tmp_path / "sim.cfg"
        cfg.write_text((dataset / "sim.cfg").read_text())
        out2 = tmp_path / "rerun"
        assert main(["simulate", "--config", str(cfg), "--out", str(out2),
                     "--no-figures"]) == 0
        assert (out2 / "expression.csv").read_bytes() \
            == (dataset / "expression.csv").read_bytes()

    def test_figure_emitted(self, tmp_path):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("sim.lattice = square(4)\nsim.p = 10\nsim.q = 3\n"
                       "sim.potts_sweeps = 5\n")
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "truth_pattern.png").exists()


class TestFit:
    def test_smoke_outputs(self, dataset, tmp_path):
        cfg = fit_config(tmp_path)
        out = tmp_path / "fit"
        rc = main(["fit", "--config", str(cfg),
                   "--expression", str(dataset / "expression.csv"),
                   "--coords", str(dataset / "coords.csv"),
                   "--out", str(out), "--emit-ppm"])
        assert rc == 0
        for name in ("labels_ppm.csv", "labels_map.csv", "icl.txt",
                     "trace_chain1.jsonl", "manifest.json", "ppm.csv",
                     "domains_ppm.png", "domains_map.png"):
            assert (out / name).exists(), name
        lines = (out / "labels_ppm.csv").read_text().splitlines()
        assert lines[0] == "spot_id,label"
        assert len(lines) == 37
        # labels are 1-based in files
        assert min(int(l.split(",")[1]) for l in lines[1:]) == 1
        float((out / "icl.txt").read_text())
        trace = read_trace(out / "trace_chain1.jsonl")
        assert trace.n_kept == 4 and trace.n == 36

    def test_no_figures(self, dataset, tmp_path):
        cfg = fit_config(tmp_path)
        out = tmp_path / "fit"
        assert main(["fit", "--config", str(cfg),
                     "--expression", str(dataset / "expression.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(out), "--no-figures"]) == 0
        assert not (out / "domains_ppm.png").exists()
        assert not (out / "ppm.csv").exists()

    def test_multichain_agreement(self, dataset, tmp_path):
        cfg = fit_config(tmp_path, "run.n_chains = 2\n")
        out = tmp_path / "fit2"
        assert main(["fit", "--config", str(cfg),
                     "--expression", str(dataset / "expression.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(out), "--no-figures"]) == 0
        assert (out / "trace_chain2.jsonl").exists()
        rows = (out / "chain_agreement.csv").read_text().splitlines()
        m = np.array([[float(v) for v in r.split(",")] for r in rows])
        assert m.shape == (2, 2) and np.all(np.diag(m) == 1.0)

    def test_unknown_config_key_exit_2(self, dataset, tmp_path):
        cfg = fit_config(tmp_path, "prior.mrf_d = 1\n")
        assert main(["fit", "--config", str(cfg),
                     "--expression", str(dataset / "expression.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_missing_input_exit_3(self, dataset, tmp_path):
        cfg = fit_config(tmp_path)
        assert main(["fit", "--config", str(cfg),
                     "--expression", str(tmp_path / "absent.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(tmp_path / "x")]) == 3

    def test_nonstandard_py_flag(self, dataset, tmp_path):
        cfg = fit_config(tmp_path).read_text().replace(
            "prior.family = MFM", "prior.family = PY").replace(
            "prior.delta = -1.0", "prior.delta = -0.1")
        f = tmp_path / "py.cfg"
        f.write_text(cfg)
        args = ["fit", "--config", str(f),
                "--expression", str(dataset / "expression.csv"),
                "--coords", str(dataset / "coords.csv"),
                "--out", str(tmp_path / "py_out"), "--no-figures"]
        assert main(args) == 2
        assert main(args + ["--allow-nonstandard-py"]) == 0


class TestSelectD:
    def test_grid_outputs(self, dataset, tmp_path):
        cfg = fit_config(tmp_path, "run.d_grid = 0,1\n")
        out = tmp_path / "sel"
        assert main(["select-d", "--config", str(cfg),
                     "--expression", str(dataset / "expression.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(out), "--no-figures"]) == 0
        rows = (out / "icl.csv").read_text().splitlines()
        assert rows[0] == "d,icl,H_hat"
        assert len(rows) == 3
        best = float((out / "best_d.txt").read_text())
        assert best in (0.0, 1.0)
        icls = {float(r.split(",")[0]): float(r.split(",")[1])
                for r in rows[1:]}
        assert icls[best] == min(icls.values())
        assert (out / "trace_d0.jsonl").exists()
        assert (out / "trace_d1.jsonl").exists()


class TestSummarize:
    def test_from_traces(self, dataset, tmp_path):
        cfg = fit_config(tmp_path, "run.n_chains = 2\n")
        fit_out = tmp_path / "fit"
        assert main(["fit", "--config", str(cfg),
                     "--expression", str(dataset / "expression.csv"),
                     "--coords", str(dataset / "coords.csv"),
                     "--out", str(fit_out), "--no-figures"]) == 0
        out = tmp_path / "sum"
        assert main(["summarize",
                     str(fit_out / "trace_chain1.jsonl"),
                     str(fit_out / "trace_chain2.jsonl"),
                     "--expression", str(dataset / "expression.csv"),
                     "--out", str(out)]) == 0
        assert (out / "labels_ppm.csv").exists()
        assert (out / "chain_agreement.csv").exists()
        # pooled summaries match the fit's own outputs
        assert (out / "labels_ppm.csv").read_bytes() \
            == (fit_out / "labels_ppm.csv").read_bytes()


class TestAri:
    def _labels(self, path, rows):
        path.write_text("spot_id,label\n"
                        + "\n".join(f"{s},{l}" for s, l in rows) + "\n")

    def test_identical_prints_one(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        self._labels(a, [("s1", 1), ("s2", 1), ("s3", 2)])
        assert main(["ari", str(a), str(a)]) == 0
        assert capsys.readouterr().out.strip() == "1.000000"

    def test_hand_case(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        self._labels(a, [("s1", 1), ("s2", 1), ("s3", 2), ("s4", 2)])
        self._labels(b, [("s1", 1), ("s2", 2), ("s3", 1), ("s4", 2)])
        assert main(["ari", str(a), str(b)]) == 0
        assert capsys.readouterr().out.strip() == "-0.500000"

    def test_rows_joined_by_spot_id(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        self._labels(a, [("s1", 1), ("s2", 1), ("s3", 2)])
        self._labels(b, [("s3", 5), ("s1", 4), ("s2", 4)])
        assert main(["ari", str(a), str(b)]) == 0
        assert capsys.readouterr().out.strip() == "1.000000"

    def test_id_mismatch_exit_3(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        self._labels(a, [("s1", 1), ("s2", 1)])
        self._labels(b, [("s1", 1), ("sX", 1)])
        assert main(["ari", str(a), str(b)]) == 3


class TestCheckIdentifiability:
    def test_passes_at_default_tolerance(self, capsys):
        assert main(["check-identifiability", "--q", "2", "--n", "12",
                     "--partitions", "4", "--transforms", "5"]) == 0
        assert "deviation" in capsys.readouterr().out
