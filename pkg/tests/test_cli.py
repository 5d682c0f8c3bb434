import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from mproto.cli import main
from mproto.config import make_config
from mproto.encoder import PrecomputedEncoder
from mproto.prototypes import PrototypeBank
from mproto.trainer import new_state, save_checkpoint

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--set", "train_tokens=1500", "--set", "eval_tokens=400"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out)] + SMALL) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", str(synth / "train.yaml"), "--out", str(out), "--set", "epochs=3"]) == 0
    return out


def read_jsonl(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


class TestSynth:
    def test_outputs_and_manifest(self, synth):
        manifest = json.loads((synth / "manifest.json").read_text())
        assert manifest["command"] == "synth" and manifest["seed"] == 0
        for name in ("train.txt", "train_features.npz", "embeddings.npz", "gazetteer.tsv", "train.yaml"):
            assert name in manifest["outputs"]


class TestAnnotate:
    def test_golden(self, tmp_path):
        code = main(["annotate", "--corpus", str(FIXTURES / "ner_gold.txt"),
                     "--gazetteer", str(FIXTURES / "gazetteer.tsv"), "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "annotated.txt").read_text() == (FIXTURES / "annotated_golden.txt").read_text()
        report = json.loads((tmp_path / "quality.json").read_text())
        assert report["quality"]["precision"] == pytest.approx(5 / 6)

    def test_fraction_reported(self, tmp_path):
        main(["annotate", "--corpus", str(FIXTURES / "ner_gold.txt"), "--gazetteer", str(FIXTURES / "gazetteer.tsv"),
              "--out", str(tmp_path), "--fraction", "0.2"])
        report = json.loads((tmp_path / "quality.json").read_text())
        assert report["dictionary_entries_used"] == 2 and report["dictionary_entries"] == 9

    def test_no_gold_no_quality(self, tmp_path):
        raw = tmp_path / "raw.txt"
        raw.write_text("".join(line.split(" ")[0].rstrip("\n") + "\n" if line.strip() else "\n"
                               for line in open(FIXTURES / "ner_gold.txt")))
        assert main(["annotate", "--corpus", str(raw), "--gazetteer", str(FIXTURES / "gazetteer.tsv"),
                     "--out", str(tmp_path / "o")]) == 0
        assert "quality" not in json.loads((tmp_path / "o" / "quality.json").read_text())

    def test_missing_file(self, tmp_path, capsys):
        assert main(["annotate", "--corpus", "nope.txt", "--gazetteer", "g", "--out", str(tmp_path)]) != 0
        assert "not found" in capsys.readouterr().err


class TestTrainEval:
    def test_metrics_stream(self, trained):
        records = read_jsonl(trained / "metrics.jsonl")
        kinds = {r["type"] for r in records}
        assert kinds == {"step", "epoch", "final"}
        assert all("time" not in r for r in records)

    def test_eval_reproduces_logged_dev_f1(self, synth, trained, tmp_path):
        best = json.loads((trained / "results.json").read_text())["best"]
        epoch = [r for r in read_jsonl(trained / "metrics.jsonl") if r["type"] == "epoch"][best["epoch"] - 1]
        assert main(["eval", "--checkpoint", str(trained / "best.npz"), "--corpus", str(synth / "dev.txt"),
                     "--out", str(tmp_path)]) == 0
        scores = json.loads((tmp_path / "metrics.json").read_text())
        assert scores["f1"] == epoch["dev"]["f1"] == best["dev_f1"]
        assert {"loc_f1", "cls_f1", "per_class"} <= set(scores)

    def test_same_seed_same_stream(self, synth, trained, tmp_path):
        main(["train", str(synth / "train.yaml"), "--out", str(tmp_path), "--set", "epochs=3"])
        assert (tmp_path / "metrics.jsonl").read_bytes() == (trained / "metrics.jsonl").read_bytes()

    def test_gold_free_eval(self, synth, trained, tmp_path):
        raw = tmp_path / "raw.txt"
        raw.write_text("".join(line.split(" ")[0].rstrip("\n") + "\n" if line.strip() else "\n"
                               for line in open(synth / "test.txt")))
        assert main(["eval", "--checkpoint", str(trained / "best.npz"), "--corpus", str(raw),
                     "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "predictions.txt").exists()
        assert not (tmp_path / "o" / "metrics.json").exists()

    def test_empty_corpus(self, trained, tmp_path, capsys):
        (tmp_path / "empty.txt").write_text("")
        assert main(["eval", "--checkpoint", str(trained / "best.npz"), "--corpus", str(tmp_path / "empty.txt"),
                     "--out", str(tmp_path / "o")]) != 0
        assert "no sentences" in capsys.readouterr().err

    def test_class_mismatch(self, trained, tmp_path, capsys):
        (tmp_path / "c.txt").write_text("x B-LOC B-LOC\n")
        assert main(["eval", "--checkpoint", str(trained / "best.npz"), "--corpus", str(tmp_path / "c.txt"),
                     "--out", str(tmp_path / "o")]) != 0
        assert "do not match the checkpoint classes" in capsys.readouterr().err

    def test_bad_config_field(self, synth, tmp_path, capsys):
        assert main(["train", str(synth / "train.yaml"), "--out", str(tmp_path), "--set", "bogus=1"]) != 0
        assert "'bogus'" in capsys.readouterr().err


class TestDiagnose:
    def test_feature_rows(self, synth, trained, tmp_path):
        assert main(["diagnose", "--which", "features", "--checkpoint", str(trained / "best.npz"),
                     "--corpus", str(synth / "dev.txt"), "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader(open(tmp_path / "features.csv")))
        n_tokens = sum(1 for line in open(synth / "dev.txt") if line.strip())
        assert len(rows) == n_tokens + 3 * 3
        assert {"pc1", "pc2", "f0"} <= set(rows[0])

    def test_transport_zero_on_clean_corpus(self, synth, trained, tmp_path):
        # distant column replaced by gold: no missed entities
        clean = tmp_path / "clean.txt"
        clean.write_text("".join(
            f"{p[0]} {p[2]} {p[2]}\n" if (p := line.split()) else "\n" for line in open(synth / "dev.txt")
        ))
        assert main(["diagnose", "--which", "transport", "--checkpoint", str(trained / "best.npz"),
                     "--corpus", str(clean), "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.reader(open(tmp_path / "o" / "transport.csv")))
        assert all(int(v) == 0 for row in rows[1:] for v in row[1:])

    def test_transport_needs_gold(self, synth, trained, tmp_path, capsys):
        nogold = tmp_path / "ng.txt"
        nogold.write_text("".join(" ".join(line.split()[:2]) + "\n" for line in open(synth / "dev.txt")))
        assert main(["diagnose", "--which", "transport", "--checkpoint", str(trained / "best.npz"),
                     "--corpus", str(nogold), "--out", str(tmp_path / "o")]) != 0
        assert "gold" in capsys.readouterr().err

    def test_similarity_planted(self, synth, tmp_path):
        centers = np.load(synth / "centers.npz")
        vecs = np.stack([centers["centers"][centers["center_class"] == c] for c in range(3)])
        cfg = make_config({"encoder": "precomputed", "linear_head": False, "n_prototypes": 2})
        state = new_state(cfg, PrecomputedEncoder(vecs.shape[-1], head=False), ["O", "PER", "ORG"])
        state.bank = PrototypeBank(vecs, ["O", "PER", "ORG"])
        save_checkpoint(tmp_path / "planted.npz", state, cfg)
        assert main(["diagnose", "--which", "similarity", "--checkpoint", str(tmp_path / "planted.npz"),
                     "--corpus", str(synth / "dev.txt"), "--features", str(synth / "dev_features.npz"),
                     "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "similarity.csv")))
        assert [r["class"] for r in rows] == ["O", "PER", "ORG"]
        assert all(float(r["similarity"]) > 0.9 for r in rows)

    def test_plots_written(self, synth, trained, tmp_path):
        assert main(["diagnose", "--which", "similarity", "--checkpoint", str(trained / "best.npz"),
                     "--corpus", str(synth / "train.txt"), "--metrics", str(trained / "metrics.jsonl"),
                     "--plot", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "similarity.png").stat().st_size > 0
        curve = list(csv.reader(open(tmp_path / "similarity_curve.csv")))
        assert curve[0][0] == "epoch" and set(curve[0][1:]) == {"O", "PER", "ORG"} and len(curve) == 4


class TestSweepReplay:
    def test_sweep_table(self, synth, tmp_path):
        assert main(["sweep", str(synth / "train.yaml"), "--param", "n_prototypes", "--values", "1,2",
                     "--set", "epochs=1", "--out", str(tmp_path), "--plot"]) == 0
        rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
        assert [r["n_prototypes"] for r in rows] == ["1", "2"]
        assert (tmp_path / "sweep.png").exists()

    def test_replay_bit_exact(self, trained, tmp_path):
        assert main(["replay", str(trained / "manifest.json"), "--out", str(tmp_path)]) == 0
        for name in ("metrics.jsonl", "best.npz", "results.json"):
            assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()

    def test_replay_detects_changed_input(self, synth, tmp_path, capsys):
        copy = tmp_path / "syn"
        shutil.copytree(synth, copy)
        assert main(["train", str(copy / "train.yaml"), "--out", str(tmp_path / "t"), "--set", "epochs=1"]) == 0
        with open(copy / "train.txt", "a") as fh:
            fh.write("extra O O\n")
        assert main(["replay", str(tmp_path / "t" / "manifest.json"), "--out", str(tmp_path / "r")]) != 0
        assert "changed" in capsys.readouterr().err
