import json

import numpy as np
import pytest

from specdraft.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, load_config, main
from specdraft.errors import ConfigError
from specdraft.ngram import build_trie, save_trie


@pytest.fixture
def demo_corpus(tmp_path):
    p = tmp_path / "corpus.txt"
    p.write_text("1 2 3 1 2\n", encoding="utf-8")
    return p


@pytest.fixture
def config_file(tmp_path):
    def make(**sections):
        cfg = {
            "seed": 3,
            "target": {"seed": 7, "vocab_size": 16, "order": 2, "concentration": 0.1},
            "decode": {"d": 3, "max_tokens": 16, "temperature": 0.0},
            "prune": {"k": 4, "w": 4, "theta": 8},
        }
        cfg.update(sections)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg), encoding="utf-8")
        return str(p)

    return make


def test_build_trie_hand_count(tmp_path, demo_corpus, capsys):
    out = tmp_path / "t.bin"
    rc = main(["build-trie", "--corpus", str(demo_corpus), "--order", "3",
               "--out", str(out)])
    assert rc == EXIT_OK
    text = capsys.readouterr().out
    # windows (1,2,3), (2,3,1), (3,1,2): root + 3 + 3 + 3 nodes
    assert "node_count         10" in text


def test_build_trie_empty_corpus_warns(tmp_path, capsys):
    src = tmp_path / "empty.txt"
    src.write_text("")
    rc = main(["build-trie", "--corpus", str(src), "--order", "3",
               "--out", str(tmp_path / "t.bin")])
    assert rc == EXIT_OK
    captured = capsys.readouterr()
    assert "warning" in captured.err
    assert "node_count         1" in captured.out


def test_build_trie_order_one_rejected(tmp_path, demo_corpus):
    rc = main(["build-trie", "--corpus", str(demo_corpus), "--order", "1",
               "--out", str(tmp_path / "t.bin")])
    assert rc == EXIT_CONFIG


def test_build_trie_missing_corpus(tmp_path):
    rc = main(["build-trie", "--corpus", str(tmp_path / "nope.txt"),
               "--order", "3", "--out", str(tmp_path / "t.bin")])
    assert rc == EXIT_IO


def test_decode_matches_baseline_at_t0(config_file, capsys):
    cfg = config_file()
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2"])
    assert rc == EXIT_OK
    spec_out = capsys.readouterr().out.splitlines()[0]
    rc = main(["decode", "--config", cfg, "--baseline", "--prompt-tokens", "1 2"])
    assert rc == EXIT_OK
    base_out = capsys.readouterr().out.splitlines()[0]
    assert spec_out == base_out


def test_decode_no_ngram_flag_and_warning(config_file, capsys):
    cfg = config_file()
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2"])
    assert rc == EXIT_OK
    assert "no trie configured" in capsys.readouterr().err
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2", "--no-ngram"])
    assert rc == EXIT_OK
    assert "no trie configured" not in capsys.readouterr().err


def test_decode_with_trie_and_jsonl(tmp_path, config_file, capsys):
    trie = build_trie([[1, 2, 3, 1, 2, 4]], 3, 16)
    trie_path = tmp_path / "t.bin"
    save_trie(trie, trie_path)
    cfg = config_file(paths={"trie": str(trie_path)})
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2", "--jsonl"])
    assert rc == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    records = [json.loads(l) for l in lines]
    assert "tau" in records[-1]
    assert all("draft_ms" in r for r in records[:-1])


def test_decode_max_tokens_one(config_file, capsys):
    cfg = config_file(decode={"d": 3, "max_tokens": 1, "temperature": 0.0})
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2", "--jsonl"])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert summary["cycles"] == 1 and summary["tokens_out"] == 1


def test_decode_transcript_file(tmp_path, config_file):
    cfg = config_file()
    out = tmp_path / "transcript.txt"
    rc = main(["decode", "--config", cfg, "--drafter", "oracle",
               "--prompt-tokens", "1 2", "--transcript", str(out)])
    assert rc == EXIT_OK
    assert len(out.read_text().split()) == 16


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"seed": 1, "bogus": {}}))
    with pytest.raises(ConfigError):
        load_config(str(p))
    p.write_text(json.dumps({"prune": {"beam": 2}}))
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_missing_referenced_file_rejected(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"paths": {"trie": str(tmp_path / "nope.bin")}}))
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_override_parsing():
    cfg = load_config(None, ["prune.k=3", "decode.temperature=0.5", "seed=9"])
    assert cfg.prune.k == 3
    assert cfg.decode.temperature == 0.5
    assert cfg.seed == 9
    with pytest.raises(ConfigError):
        load_config(None, ["malformed"])


def test_default_config_uses_reference_constants():
    cfg = load_config(None)
    assert (cfg.prune.k, cfg.prune.w, cfg.prune.theta) == (25, 20, 59)
    assert cfg.prune.w_ng == 0.5
    assert cfg.decode.d == 8
    assert cfg.training["gamma"] == 0.6


def test_bench_trie_zero_queries(tmp_path, capsys):
    trie = build_trie([[0, 1, 2, 3, 4]], 3, 8)
    path = tmp_path / "t.bin"
    save_trie(trie, path)
    rc = main(["bench-trie", "--trie", str(path), "--queries", "0"])
    assert rc == EXIT_OK
    assert "empty histogram" in capsys.readouterr().out


def test_bench_trie_runs_and_reports(tmp_path, capsys):
    rng = np.random.default_rng(0)
    trie = build_trie([list(rng.integers(0, 16, 400))], 3, 16)
    path = tmp_path / "t.bin"
    save_trie(trie, path)
    rc = main(["bench-trie", "--trie", str(path), "--queries", "5000", "--jsonl"])
    assert rc == EXIT_OK
    records = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert records[-1]["queries"] == 5000
    assert records[-1]["median_us"] > 0


def test_bench_trie_threads_consistent(tmp_path, capsys):
    rng = np.random.default_rng(0)
    trie = build_trie([list(rng.integers(0, 16, 400))], 3, 16)
    path = tmp_path / "t.bin"
    save_trie(trie, path)
    rc = main(["bench-trie", "--trie", str(path), "--queries", "4000",
               "--threads", "4", "--jsonl"])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert summary["queries"] == 4000 and summary["threads"] == 4


@pytest.fixture
def train_config(tmp_path):
    cfg = {
        "seed": 5,
        "target": {"seed": 5, "vocab_size": 8, "order": 1, "concentration": 0.05},
        "prune": {"k": 6, "w": 6, "theta": 12},
        "training": {"gamma": 0.6, "d": 3, "steps": 60, "lr": 0.1,
                     "sequence_length": 12, "corpus_sequences": 8,
                     "heldout_sequences": 10},
        "paths": {"model": str(tmp_path / "toy.npz")},
    }
    p = tmp_path / "train.json"
    p.write_text(json.dumps(cfg))
    return str(p), tmp_path


def test_train_eval_report_cycle(train_config, capsys):
    cfg, tmp_path = train_config
    rc = main(["train-toy", "--config", cfg])
    assert rc == EXIT_OK
    assert (tmp_path / "toy.npz").exists()
    log_path = tmp_path / "toy.npz.log.jsonl"
    assert log_path.exists()
    capsys.readouterr()

    rc = main(["eval", "--config", cfg, "--drafter", "toy", "--tau-prompts", "2"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "a-1" in out and "tau" in out

    rc = main(["report", "--log", str(log_path), "--every", "20"])
    assert rc == EXIT_OK
    assert "loss" in capsys.readouterr().out


def test_train_log_byte_identical_across_runs(train_config, capsys):
    cfg, tmp_path = train_config
    main(["train-toy", "--config", cfg])
    first = (tmp_path / "toy.npz.log.jsonl").read_bytes()
    main(["train-toy", "--config", cfg])
    second = (tmp_path / "toy.npz.log.jsonl").read_bytes()
    assert first == second


def test_train_divergence_exit_code(train_config, capsys):
    cfg, _ = train_config
    rc = main(["train-toy", "--config", cfg, "--override", "training.lr=50",
               "--override", "target.concentration=5.0"])
    assert rc == EXIT_DIVERGED


def test_eval_oracle_greedy_alpha_is_one(train_config, capsys):
    cfg, _ = train_config
    rc = main(["eval", "--config", cfg, "--drafter", "oracle",
               "--alpha-vs", "greedy", "--tau-prompts", "1", "--jsonl"])
    assert rc == EXIT_OK
    rec = json.loads(capsys.readouterr().out.splitlines()[0])
    assert all(a == 1.0 for a in rec["alpha"])


def test_toy_drafter_vocab_mismatch_rejected(train_config, capsys):
    cfg, _ = train_config
    main(["train-toy", "--config", cfg])
    capsys.readouterr()
    rc = main(["decode", "--config", cfg, "--drafter", "toy",
               "--prompt-tokens", "1", "--override", "target.vocab_size=16"])
    assert rc == EXIT_CONFIG
    assert "vocab" in capsys.readouterr().err


def test_estimate_speedup_command(capsys):
    rc = main(["estimate-speedup", "--tau", "4", "--t-verify", "10",
               "--t-draft", "0", "--t-prune", "0", "--t-base", "10"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "4.0000" in out
    rc = main(["estimate-speedup", "--tau", "0.5", "--t-verify", "10",
               "--t-draft", "0", "--t-prune", "0", "--t-base", "10"])
    assert rc == EXIT_CONFIG


def test_text_prompt_requires_byte_vocab(config_file):
    rc = main(["decode", "--config", config_file(), "--prompt", "hello"])
    assert rc == EXIT_CONFIG


def test_text_prompt_byte_pipeline(tmp_path, capsys):
    src = tmp_path / "corpus.txt"
    src.write_text("the cat sat\nthe dog sat\n", encoding="utf-8")
    trie_path = tmp_path / "bytes.trie"
    rc = main(["build-trie", "--corpus", str(src), "--order", "3",
               "--out", str(trie_path), "--format", "text"])
    assert rc == EXIT_OK
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 1,
        "target": {"seed": 2, "vocab_size": 256, "order": 1, "concentration": 0.05},
        "decode": {"d": 3, "max_tokens": 12, "temperature": 0.0},
        "prune": {"k": 8, "w": 8, "theta": 12},
        "paths": {"trie": str(trie_path)},
    }))
    capsys.readouterr()
    rc = main(["decode", "--config", str(cfg), "--drafter", "oracle",
               "--prompt", "the "])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "# text:" in out
