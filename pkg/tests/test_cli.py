import os

import pytest

from conftest import toy_corpus_path
from histvae.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cliwork")


@pytest.fixture(scope="module")
def vocab_file(workdir):
    import importlib.resources

    return str(importlib.resources.files("histvae").joinpath("data/qm9.vocab"))


@pytest.fixture(scope="module")
def small_data(workdir):
    # a 25-molecule slice of the bundled corpus keeps CLI runs quick
    src = open(toy_corpus_path(), encoding="utf-8").read().splitlines()
    path = workdir / "small.smi"
    path.write_text("\n".join(src[:26]) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def config_file(workdir, vocab_file, small_data):
    path = workdir / "run.cfg"
    path.write_text(
        "\n".join(
            [
                f"vocab={vocab_file}",
                f"train_data={small_data}",
                "latent_dim=8",
                "hidden_dim=8",
                "mp_steps=2",
                "mlp_hidden=12",
                "epochs=2",
                "batch_size=8",
                "lambda_latent=0.05",
                "lambda_opt=1.0",
                "lr=0.002",
                "seed=3",
            ]
        )
        + "\n"
    )
    return str(path)


@pytest.fixture(scope="module")
def checkpoint(workdir, config_file):
    path = str(workdir / "model.ckpt")
    assert main(["train", "--config", config_file, "--out", path]) == 0
    return path


class TestPreprocess:
    def test_outputs(self, workdir, vocab_file, small_data, capsys):
        out = str(workdir / "prep")
        assert main([
            "preprocess", "--data", small_data, "--vocab", vocab_file,
            "--out", out, "--seed", "1", "--test-frac", "0.2",
        ]) == 0
        captured = capsys.readouterr().out
        assert "parsed=25" in captured
        assert os.path.exists(os.path.join(out, "split.txt"))
        assert os.path.exists(os.path.join(out, "histograms.dist"))
        train = open(os.path.join(out, "train.smi")).read().strip().splitlines()
        test = open(os.path.join(out, "test.smi")).read().strip().splitlines()
        assert len(train) == 20 and len(test) == 5

    def test_deterministic_split(self, workdir, vocab_file, small_data):
        a, b = str(workdir / "prepA"), str(workdir / "prepB")
        for out in (a, b):
            main(["preprocess", "--data", small_data, "--vocab", vocab_file,
                  "--out", out, "--seed", "7"])
        assert open(os.path.join(a, "split.txt")).read() == open(
            os.path.join(b, "split.txt")
        ).read()

    def test_failure_reporting(self, workdir, vocab_file, capsys):
        bad = workdir / "bad.smi"
        bad.write_text("C\n???\nCCO\n")
        out = str(workdir / "prepbad")
        assert main(["preprocess", "--data", str(bad), "--vocab", vocab_file,
                     "--out", out]) == 0
        assert "failures=1" in capsys.readouterr().out


class TestTrainAndGenerate:
    def test_checkpoint_written(self, checkpoint):
        assert os.path.exists(checkpoint)

    def test_generate_deterministic(self, workdir, checkpoint):
        out1, out2 = str(workdir / "g1.smi"), str(workdir / "g2.smi")
        for out in (out1, out2):
            assert main(["generate", "--ckpt", checkpoint, "-n", "40",
                         "--seed", "11", "--out", out]) == 0
        assert open(out1).read() == open(out2).read()
        lines = open(out1).read().strip().splitlines()
        assert len(lines) == 40
        for line in lines:
            smiles, _, flag = line.partition("\t")
            assert flag in ("fallback=0", "fallback=1")

    def test_generate_trace(self, workdir, checkpoint):
        trace = str(workdir / "trace.txt")
        assert main(["generate", "--ckpt", checkpoint, "-n", "3", "--seed", "2",
                     "--out", str(workdir / "traced.smi"), "--trace", trace]) == 0
        text = open(trace).read()
        assert "# molecule 0" in text and ("STOP" in text or "u=" in text)

    def test_missing_checkpoint_reports_error(self, workdir, capsys):
        rc = main(["generate", "--ckpt", str(workdir / "nope.ckpt"),
                   "-n", "1", "--out", str(workdir / "x.smi")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_config_key_rejected(self, workdir, capsys):
        cfg = workdir / "broken.cfg"
        cfg.write_text("not_a_key=1\n")
        rc = main(["train", "--config", str(cfg), "--out", str(workdir / "m.ckpt")])
        assert rc == 2
        assert "unknown config key" in capsys.readouterr().err


class TestTiming:
    def test_bundled_corpus_ingest_under_five_seconds(self, vocab):
        import time

        from histvae.smiles import load_dataset

        start = time.time()
        loaded = load_dataset(toy_corpus_path(), vocab)
        assert len(loaded.records) == 500
        assert time.time() - start < 5.0

    def test_end_to_end_smoke_under_ten_minutes(self, workdir, vocab_file, small_data):
        import time

        start = time.time()
        prep = str(workdir / "smoke_prep")
        ckpt = str(workdir / "smoke.ckpt")
        cfg = workdir / "smoke.cfg"
        cfg.write_text(
            f"vocab={vocab_file}\ntrain_data={small_data}\n"
            "latent_dim=8\nhidden_dim=8\nmp_steps=2\nmlp_hidden=12\n"
            "epochs=2\nbatch_size=8\nlambda_opt=1.0\nseed=5\n"
        )
        assert main(["preprocess", "--data", small_data, "--vocab", vocab_file,
                     "--out", prep]) == 0
        assert main(["train", "--config", str(cfg), "--out", ckpt]) == 0
        assert main(["generate", "--ckpt", ckpt, "-n", "100", "--seed", "0",
                     "--out", str(workdir / "smoke.smi")]) == 0
        assert main(["evaluate", "--ckpt", ckpt, "--train-data", small_data,
                     "--samples", "100", "--seed", "0"]) == 0
        assert time.time() - start < 600


class TestProtocolCommands:
    def test_reconstruct(self, checkpoint, small_data, capsys):
        rc = main(["reconstruct", "--ckpt", checkpoint, "--data", small_data,
                   "--encodings", "2", "--cap", "10", "--seed", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "reconstruction_pct=" in out and "attempts=20" in out

    def test_reconstruct_vocab_mismatch_aborts(self, checkpoint, small_data, workdir, capsys):
        other = workdir / "other.vocab"
        other.write_text("C 4\nN 3\n")
        rc = main(["reconstruct", "--ckpt", checkpoint, "--data", small_data,
                   "--vocab", str(other)])
        assert rc == 2
        assert "mismatch" in capsys.readouterr().err

    def test_evaluate(self, checkpoint, small_data, capsys):
        rc = main(["evaluate", "--ckpt", checkpoint, "--train-data", small_data,
                   "--samples", "50", "--seed", "1"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "validity_pct=100.00" in out
        assert "%Rec.\t%Val.\t%Nov.\t%Uniq.\t%Div." in out

    def test_optimize(self, checkpoint, capsys):
        rc = main(["optimize", "--ckpt", checkpoint, "--smiles", "CCO",
                   "--steps", "5", "--direction", "up", "--seed", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "property_before=" in out and "property_after=" in out
        before = float(out.split("property_before=")[1].splitlines()[0])
        after = float(out.split("property_after=")[1].splitlines()[0])
        assert after >= before - 1e-6
        assert "optimized=" in out
