import json

import pytest

from pacrr.cli import main
from pacrr.config import RunConfig, load_run_config, write_run_config
from pacrr.errors import ConfigError


class TestRunConfig:
    def test_defaults(self):
        cfg = load_run_config(None)
        assert cfg.l_d == 768 and cfg.mode == "firstk" and cfg.k == 20

    def test_parse_and_roundtrip(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nl_q = 8\nmode = kwindow\nlearning_rate = 0.5\n")
        cfg = load_run_config(path)
        assert cfg.l_q == 8 and cfg.mode == "kwindow" and cfg.learning_rate == 0.5
        write_run_config(cfg, tmp_path / "copy.cfg")
        assert load_run_config(tmp_path / "copy.cfg") == cfg

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("bogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_run_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("l_q = not-a-number\n")
        with pytest.raises(ConfigError, match="l_q"):
            load_run_config(path)

    def test_grade_map_parsing(self):
        cfg = RunConfig(grade_map="-1:0,5:4")
        assert cfg.parsed_grade_map() == {-1: 0, 5: 4}
        with pytest.raises(ConfigError):
            RunConfig(grade_map="oops").parsed_grade_map()

    def test_missing_config_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config("no/such/file.cfg")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-synth")
    code = main(["--out", str(out), "--seed", "5", "synth",
                 "--docs", "60", "--train-queries", "5", "--val-queries", "2",
                 "--run-depth", "30"])
    assert code == 0
    # shrink the generated config for fast CLI tests
    cfg = load_run_config(out / "config.txt")
    cfg.iterations = 2
    cfg.batches_per_iteration = 2
    write_run_config(cfg, out / "config.txt")
    return out


class TestCliCommands:
    def test_synth_outputs(self, synth_dir):
        for name in ("corpus.jsonl", "queries.jsonl", "qrels.txt", "run.txt",
                     "embeddings.txt", "train_qids.txt", "val_qids.txt", "config.txt"):
            assert (synth_dir / name).exists(), name

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        for op in ("conv2d", "max_over_filters", "kmax_per_row", "softmax",
                   "recurrent_sequence", "hinge_loss", "pipeline_firstk",
                   "pipeline_kwindow"):
            assert op in out

    def test_gradcheck_deterministic(self, capsys):
        reports = []
        for _ in range(3):
            main(["--seed", "3", "gradcheck"])
            reports.append(capsys.readouterr().out)
        assert reports[0] == reports[1] == reports[2]

    def test_train_then_apply(self, synth_dir, tmp_path):
        config = str(synth_dir / "config.txt")
        assert main(["--config", config, "train"]) == 0
        train_out = synth_dir / "train_out"
        checkpoint = train_out / "best.pacrr"
        assert checkpoint.exists()
        log_lines = (train_out / "training_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2

        assert main(["--config", config, "--out", str(tmp_path / "rr"), "rerank",
                     "--checkpoint", str(checkpoint)]) == 0
        assert (tmp_path / "rr" / "reranked_run.txt").exists()
        metrics = [json.loads(line) for line in
                   (tmp_path / "rr" / "rerank_metrics.jsonl").read_text().splitlines()]
        assert {m["stage"] for m in metrics} == {"before", "after"}

        assert main(["--config", config, "--out", str(tmp_path / "sc"), "score",
                     "--checkpoint", str(checkpoint)]) == 0
        scores = [json.loads(line) for line in
                  (tmp_path / "sc" / "scores.jsonl").read_text().splitlines()]
        assert scores and {"query_id", "doc_id", "score"} == set(scores[0])

        assert main(["--config", config, "--out", str(tmp_path / "ev"), "eval"]) == 0
        assert (tmp_path / "ev" / "metrics.jsonl").exists()

        assert main(["--config", config, "--out", str(tmp_path / "pa"), "pairacc",
                     "--checkpoint", str(checkpoint)]) == 0
        report = json.loads((tmp_path / "pa" / "pair_accuracy.json").read_text())
        volumes = [p["volume"] for p in report["pairs"]]
        assert sum(volumes) == pytest.approx(1.0)
        recomputed = sum(p["accuracy"] * p["volume"] for p in report["pairs"])
        assert report["weighted_average"] == pytest.approx(recomputed)

    def test_reranked_run_round_trips(self, synth_dir, tmp_path):
        from pacrr.corpus import load_run

        config = str(synth_dir / "config.txt")
        checkpoint = synth_dir / "train_out" / "best.pacrr"
        out = tmp_path / "rr2"
        assert main(["--config", config, "--out", str(out), "rerank",
                     "--checkpoint", str(checkpoint)]) == 0
        runs = load_run(out / "reranked_run.txt")
        assert runs

    def test_missing_path_is_config_error(self, synth_dir, tmp_path):
        cfg = load_run_config(synth_dir / "config.txt")
        cfg.embeddings = str(tmp_path / "missing.txt")
        bad = tmp_path / "bad.cfg"
        write_run_config(cfg, bad)
        assert main(["--config", str(bad), "train"]) == 1

    def test_corrupt_data_is_data_error(self, synth_dir, tmp_path):
        cfg = load_run_config(synth_dir / "config.txt")
        broken = tmp_path / "broken.jsonl"
        broken.write_text("not json\n")
        cfg.corpus = str(broken)
        bad = tmp_path / "bad2.cfg"
        write_run_config(cfg, bad)
        assert main(["--config", str(bad), "train"]) == 2

    def test_constant_scorer_preserves_metrics(self, synth_dir, tmp_path):
        # zeroed recurrent weights make rel(q, d) identically 0; the tie rule
        # must then reproduce the original ordering and metrics exactly
        from pacrr.model import init_params, save_params

        cfg = load_run_config(synth_dir / "config.txt")
        params = init_params(cfg.pacrr_config())
        for name in ("rnn_w", "rnn_u", "rnn_b"):
            params[name].value[...] = 0.0
        checkpoint = tmp_path / "constant.pacrr"
        save_params(params, cfg.pacrr_config(), checkpoint)
        out = tmp_path / "const-rr"
        assert main(["--config", str(synth_dir / "config.txt"), "--out", str(out),
                     "rerank", "--checkpoint", str(checkpoint)]) == 0
        metrics = [json.loads(line) for line in
                   (out / "rerank_metrics.jsonl").read_text().splitlines()]
        before = {m["query_id"]: m for m in metrics if m["stage"] == "before"}
        after = {m["query_id"]: m for m in metrics if m["stage"] == "after"}
        assert before.keys() == after.keys()
        for qid in before:
            assert before[qid]["err20"] == after[qid]["err20"]
            assert before[qid]["ndcg20"] == after[qid]["ndcg20"]

    def test_gradcheck_failure_exits_3(self, monkeypatch, capsys):
        from pacrr import cli
        from pacrr.neural import GradCheckResult

        monkeypatch.setattr(cli, "gradcheck_report", lambda seed: {
            "conv2d": GradCheckResult(max_rel_error=0.5, checked=10, excluded=0)})
        assert main(["gradcheck"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_train_is_deterministic(self, synth_dir, tmp_path):
        cfg = load_run_config(synth_dir / "config.txt")
        for sub in ("r1", "r2"):
            cfg.out_dir = str(tmp_path / sub)
            path = tmp_path / f"{sub}.cfg"
            write_run_config(cfg, path)
            assert main(["--config", str(path), "train"]) == 0
        assert (tmp_path / "r1" / "training_log.jsonl").read_bytes() == \
            (tmp_path / "r2" / "training_log.jsonl").read_bytes()
