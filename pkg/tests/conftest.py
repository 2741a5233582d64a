import numpy as np
import pytest

from sigrec.model import ModelConfig, build_model
from sigrec.tokenize import PAD, UNK, Vocabulary


@pytest.fixture
def tiny_vocab():
    return Vocabulary([PAD, UNK] + list("abcdef"), [0, 0, 5, 4, 3, 3, 2, 1])


@pytest.fixture
def tiny_model(tiny_vocab):
    """H=4, size=2, vocab 8, float64, trainable embeddings."""
    rng = np.random.default_rng(11)
    cfg = ModelConfig(size=2, embed_dim=5, hidden=4, precision=64, train_embeddings=True)
    return build_model(cfg, tiny_vocab, rng.normal(size=(8, 5)), seed=5)


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(3)
    ids = rng.integers(2, 8, size=(3, 8))
    lengths = np.array([8, 5, 4])
    ids[1, 5:] = 0
    ids[2, 4:] = 0
    targets = {
        "pc": np.array([1, 2, 9]),
        "pt1": np.array([0, 3, 10]),
        "pt2": np.array([11, 5, 0]),
        "pt3": np.array([11, 11, 7]),
    }
    return ids, lengths, targets


def _run_cli_pipeline(root, n=80, length=30, epochs=2):
    """synth -> ingest -> embed -> train -> eval, all through the CLI. Returns output paths."""
    from sigrec.cli import main

    root.mkdir(parents=True, exist_ok=True)
    steps = [
        ["synth", "--out", str(root / "corpus"), "--n", str(n), "--length", str(length), "--seed", "3"],
        ["ingest", "--asm-dir", str(root / "corpus" / "asm"), "--labels", str(root / "corpus" / "labels.jsonl"),
         "--out", str(root / "data.jsonl")],
        ["embed", "--dataset", str(root / "data.jsonl"), "--dim", "8", "--epochs", "2", "--min-count", "1",
         "--out", str(root / "emb")],
        ["train", "--dataset", str(root / "data.jsonl"), "--embeddings", str(root / "emb"), "--size", "10",
         "--hidden", "8", "--batch", "16", "--epochs", str(epochs), "--lr", "0.01", "--out", str(root / "model.ckpt")],
        ["eval", "--model", str(root / "model.ckpt"), "--dataset", str(root / "data.jsonl"), "--split", "test",
         "--format", "jsonl", "--out", str(root / "report.jsonl")],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, (argv, code)
    return {
        "dataset": root / "data.jsonl",
        "vocab": root / "emb" / "vocab.tsv",
        "embeddings": root / "emb" / "embeddings.txt",
        "checkpoint": root / "model.ckpt",
        "report": root / "report.jsonl",
    }


@pytest.fixture
def cli_pipeline(monkeypatch, tmp_path):
    monkeypatch.setenv("SIGREC_OUTPUT_DIR", str(tmp_path / "default-out"))
    return _run_cli_pipeline
