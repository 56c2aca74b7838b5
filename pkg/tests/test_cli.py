import json

import pytest

from oodgen.cli import load_config_file, main

SYNTH = ["--format", "synthetic", "--synthetic", "4x12", "--synthetic-seed", "3"]
FAST = ["--batch-size", "16", "--learning-rate", "0.005", "--decay-every", "8",
        "--patience", "6", "--max-epochs", "40"]
GEN_FAST = ["--candidate-fraction", "0.05", "--iterations", "1"]


def run(args):
    return main([a for a in args])


class TestSubcommands:
    def test_train(self, tmp_path, capsys):
        code = run(["train", "--out", str(tmp_path), *SYNTH, *FAST,
                    "--fraction", "0.5"])
        assert code == 0
        assert (tmp_path / "model.npz").exists()
        record = json.loads((tmp_path / "train_record.json").read_text())
        assert record["chosen_epoch"] >= 0
        assert "best dev accuracy" in capsys.readouterr().out

    def test_generate_and_export(self, tmp_path, capsys):
        code = run(["generate", "--out", str(tmp_path), *SYNTH, *FAST, *GEN_FAST,
                    "--fraction", "0.5"])
        assert code == 0
        samples = tmp_path / "ood_samples.jsonl"
        lines = [json.loads(l) for l in samples.read_text().splitlines()]
        assert lines, "expected generated samples"
        for rec in lines:
            assert {"text", "label", "source_example_id", "position",
                    "original_word", "replacement_word", "iteration"} <= set(rec)
        out_file = tmp_path / "plain.jsonl"
        code = run(["export-ood", "--samples", str(samples),
                    "--out-file", str(out_file)])
        assert code == 0
        plain = [json.loads(l) for l in out_file.read_text().splitlines()]
        assert all(set(rec) == {"text", "label"} for rec in plain)
        assert len(plain) == len(lines)
        # the provenance file itself loads as a dataset split
        from oodgen.corpus import OOD_LABEL, load_dataset

        ds = load_dataset(samples, "jsonl")
        assert len(ds.train) == len(lines)
        assert ds.labels == [OOD_LABEL]

    def test_iterate(self, tmp_path, capsys):
        code = run(["iterate", "--out", str(tmp_path), *SYNTH, *FAST, *GEN_FAST,
                    "--fraction", "0.5"])
        assert code == 0
        states = json.loads((tmp_path / "iterations.json").read_text())
        assert len(states) >= 1
        assert (tmp_path / "final_model.npz").exists()

    def test_benchmark_and_determinism(self, tmp_path, capsys):
        args = ["benchmark", *SYNTH, *FAST, *GEN_FAST,
                "--fractions", "0.5", "--selections", "1",
                "--systems", "msp,gen", "--master-seed", "3"]
        assert run(args + ["--out", str(tmp_path / "a")]) == 0
        assert run(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "report.json").read_bytes()
        b = (tmp_path / "b" / "report.json").read_bytes()
        assert a == b
        report = json.loads(a)
        assert set(report["cells"]) == {"msp", "gen"}
        assert (tmp_path / "a" / "report.txt").exists()

    def test_sweep(self, tmp_path):
        code = run(["sweep", "--out", str(tmp_path), *SYNTH, *FAST, *GEN_FAST,
                    "--axis", "iterations", "--grid", "1",
                    "--fractions", "0.5", "--selections", "1"])
        assert code == 0
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_transfer(self, tmp_path):
        code = run(["transfer", "--out", str(tmp_path), *SYNTH, *FAST, *GEN_FAST,
                    "--fraction", "0.5", "--student-seed", "99"])
        assert code == 0
        result = json.loads((tmp_path / "transfer.json").read_text())
        assert {"teacher_macro_f1", "student_with_macro_f1",
                "student_without_macro_f1"} <= set(result)

    def test_analogy_eval(self, tmp_path, capsys):
        emb = tmp_path / "emb.txt"
        emb.write_text(
            "aa 1 0 0\nbb 0 1 0\ncc 1 0 1\ndd 0 1 1\nee -1 0.5 -1\n"
        )
        questions = tmp_path / "q.txt"
        questions.write_text(": section\naa bb cc dd\n")
        code = run(["analogy-eval", "--embeddings", str(emb),
                    "--questions", str(questions)])
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy 1.0000" in out

    def test_data_error_exit_code(self, tmp_path, capsys):
        code = run(["train", "--out", str(tmp_path), "--format", "jsonl",
                    "--data", str(tmp_path / "missing.jsonl")])
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestConfigFile:
    def test_values_become_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iterations = 1\nsimilarity_threshold = 0.4  # comment\n")
        values = load_config_file(cfg)
        assert values == {"iterations": 1, "similarity_threshold": 0.4}

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("not_a_real_option = 1\n")
        with pytest.raises(ValueError, match="not_a_real_option"):
            load_config_file(cfg)

    def test_cli_flag_wins_over_config(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iterations = 5\n")
        out = tmp_path / "out"
        code = run(["iterate", "--config", str(cfg), "--out", str(out),
                    *SYNTH, *FAST, "--candidate-fraction", "0.05",
                    "--iterations", "1", "--fraction", "0.5"])
        assert code == 0
        states = json.loads((out / "iterations.json").read_text())
        assert len(states) <= 2  # 1 round + final, not 5

    def test_config_without_flag_applies(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iterations = 1\ncandidate_fraction = 0.05\n")
        out = tmp_path / "out"
        code = run(["iterate", "--config", str(cfg), "--out", str(out),
                    *SYNTH, *FAST, "--fraction", "0.5"])
        assert code == 0
        states = json.loads((out / "iterations.json").read_text())
        assert len(states) <= 2


class TestEnvOverrides:
    def test_env_data_path(self, tmp_path, monkeypatch, capsys):
        data = tmp_path / "data.jsonl"
        with open(data, "w") as fh:
            for i in range(12):
                fh.write(json.dumps({"text": f"alpha beta w{i % 3}", "label": f"l{i % 2}"}) + "\n")
        emb = tmp_path / "emb.txt"
        words = sorted({"alpha", "beta"} | {f"w{i}" for i in range(3)})
        with open(emb, "w") as fh:
            for j, w in enumerate(words):
                vec = " ".join(str(float(j == t)) for t in range(4))
                fh.write(f"{w} {vec}\n")
        monkeypatch.setenv("OODGEN_DATA", str(data))
        monkeypatch.setenv("OODGEN_FORMAT", "jsonl")
        monkeypatch.setenv("OODGEN_EMBEDDINGS", str(emb))
        code = run(["train", "--out", str(tmp_path / "out"), *FAST,
                    "--test-ratio", "0.3", "--dev-ratio", "0.2"])
        assert code == 0
        assert (tmp_path / "out" / "model.npz").exists()
