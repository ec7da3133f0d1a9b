"""End-to-end command wiring on a tiny synthetic corpus."""

import json

import numpy as np
import pytest

from socialrec import matio
from socialrec.cli import main
from socialrec.features import STYLE_LAYERS, STYLE_LAYER_FILTERS


SYNTH_ARGS = [
    "synth", "--users", "14", "--items", "40", "--ratings-per-user", "5",
    "--latent-dim", "5", "--social-dim", "4", "--content-dim", "8",
    "--style-dim", "10", "--seed", "3",
]


@pytest.fixture
def pipeline_dirs(tmp_path):
    raw = tmp_path / "raw"
    prep = tmp_path / "prep"
    assert main(SYNTH_ARGS + ["--out", str(raw)]) == 0
    assert main([
        "prepare", "--ratings", str(raw / "ratings.tsv"),
        "--social", str(raw / "social.tsv"),
        "--uploads", str(raw / "uploads.tsv"),
        "--min-user-ratings", "2", "--min-user-links", "0",
        "--min-item-ratings", "0", "--seed", "3", "--out", str(prep),
    ]) == 0
    return raw, prep


class TestSynth:
    def test_bad_fractions_exit_2(self, tmp_path, capsys):
        code = main(SYNTH_ARGS + ["--fractions", "0.9,0.9,0.9",
                                  "--out", str(tmp_path / "x")])
        assert code == 2
        assert "sum to 1" in capsys.readouterr().err

    def test_seed_determinism(self, tmp_path):
        for name in ("a", "b"):
            assert main(SYNTH_ARGS + ["--out", str(tmp_path / name)]) == 0
        for f in ("ratings.tsv", "social.tsv", "uploads.tsv", "groups.tsv",
                  "content.bin", "style.bin", "social.bin"):
            assert (tmp_path / "a" / f).read_bytes() == \
                (tmp_path / "b" / f).read_bytes()

    def test_group_file_covers_users(self, tmp_path):
        assert main(SYNTH_ARGS + ["--out", str(tmp_path / "g")]) == 0
        lines = (tmp_path / "g" / "groups.tsv").read_text().strip().split("\n")
        assert len(lines) == 14


class TestPrepare:
    def test_prints_stats_table(self, pipeline_dirs, capsys):
        raw, prep = pipeline_dirs
        stats = json.loads((prep / "stats.json").read_text())
        assert stats["users"] >= 14  # creator-only retention can keep all
        assert (prep / "split.json").exists()

    def test_idempotent_under_seed(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        prep2 = tmp_path / "prep2"
        assert main([
            "prepare", "--ratings", str(raw / "ratings.tsv"),
            "--social", str(raw / "social.tsv"),
            "--uploads", str(raw / "uploads.tsv"),
            "--min-user-ratings", "2", "--min-user-links", "0",
            "--min-item-ratings", "0", "--seed", "3", "--out", str(prep2),
        ]) == 0
        for name in ("ratings.tsv", "split.json", "stats.json"):
            assert (prep / name).read_bytes() == (prep2 / name).read_bytes()

    def test_missing_uploads_file_exit_2(self, tmp_path, capsys):
        code = main([
            "prepare", "--ratings", str(tmp_path / "nope.tsv"),
            "--social", str(tmp_path / "nope2.tsv"),
            "--uploads", str(tmp_path / "missing-uploads.tsv"),
            "--out", str(tmp_path / "o"),
        ])
        assert code == 2
        assert "nope.tsv" in capsys.readouterr().err


class TestEmbed:
    def test_social_rows_and_determinism(self, pipeline_dirs, tmp_path):
        _, prep = pipeline_dirs
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert main([
                "embed", "social", "--data", str(prep), "--dim", "8",
                "--walks", "4", "--walk-length", "6", "--sg-epochs", "1",
                "--seed", "5", "--out", str(out),
            ]) == 0
            outs.append(out)
        emb, ids, _ = matio.read_matrix(outs[0] / "social")
        stats = json.loads((prep / "stats.json").read_text())
        assert emb.shape == (stats["users"], 8)
        assert (outs[0] / "social.bin").read_bytes() == \
            (outs[1] / "social.bin").read_bytes()

    def test_style_from_layer_maps(self, pipeline_dirs, tmp_path):
        _, prep = pipeline_dirs
        ds_items = matio.read_matrix(tmp_path.parent / "nothing") if False else None
        import socialrec.dataset as D

        ds = D.load_interactions(prep / "ratings.tsv", prep / "social.tsv",
                                 prep / "uploads.tsv")
        maps_dir = tmp_path / "maps"
        rng = np.random.default_rng(0)
        positions = 36
        for layer in STYLE_LAYERS:
            n_l = STYLE_LAYER_FILTERS[layer]
            data = rng.random((ds.num_items, n_l * positions), dtype=np.float32)
            matio.write_matrix(maps_dir / layer, data, ds.item_ids,
                               meta={"filters": n_l, "positions": positions})
        out = tmp_path / "styleout"
        assert main([
            "embed", "style", "--data", str(prep),
            "--maps-dir", str(maps_dir), "--out", str(out),
        ]) == 0
        style, ids, _ = matio.read_matrix(out / "style")
        assert style.shape == (ds.num_items, 5120)

    def test_style_missing_layer_named(self, pipeline_dirs, tmp_path, capsys):
        _, prep = pipeline_dirs
        out = tmp_path / "s2"
        code = main(["embed", "style", "--data", str(prep),
                     "--maps-dir", str(tmp_path / "empty"), "--out", str(out)])
        assert code == 1
        assert "conv1_1" in capsys.readouterr().err


class TestTrainEvaluate:
    def run_train(self, raw, prep, out, extra=()):
        return main([
            "train", "--data", str(prep), "--embeddings", str(raw),
            "--latent", "4", "--hidden", "3", "--epochs", "2",
            "--warm-epochs", "1", "--batch", "64", "--seed", "4",
            "--out", str(out), *extra,
        ])

    def test_train_writes_log_and_checkpoint(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        out = tmp_path / "run"
        assert self.run_train(raw, prep, out) == 0
        lines = (out / "train_log.jsonl").read_text().strip().split("\n")
        assert len(lines) == 1 + 2  # header + one record per epoch
        header = json.loads(lines[0])
        assert header["type"] == "header"
        assert (out / "checkpoint" / "manifest.json").exists()
        assert (out / "run.json").exists()

    def test_mode_wiring(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        out = tmp_path / "avg"
        assert self.run_train(raw, prep, out, ("--mode", "avg,avg")) == 0
        manifest = json.loads((out / "checkpoint" / "manifest.json").read_text())
        assert manifest["mode"]["bottom"] == "avg"
        out2 = tmp_path / "bpr"
        assert self.run_train(raw, prep, out2, ("--aspects", "none")) == 0
        manifest2 = json.loads((out2 / "checkpoint" / "manifest.json").read_text())
        assert manifest2["mode"]["aspects"] == []

    def test_evaluate_emits_valid_json(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        run = tmp_path / "run"
        assert self.run_train(raw, prep, run) == 0
        out = tmp_path / "eval"
        assert main([
            "evaluate", "--data", str(prep), "--embeddings", str(raw),
            "--checkpoint", str(run / "checkpoint"), "--ks", "1,5",
            "--candidates", "20", "--repeats", "2", "--bins", "3,6",
            "--seed", "1", "--out", str(out),
        ]) == 0
        payload = json.loads((out / "report.json").read_text())
        assert set(payload["report"]["hr_mean"]) == {"1", "5"}
        pops = [b["population"] for b in payload["bins"].values()]
        assert sum(pops) == payload["report"]["n_users"]

    def test_evaluate_reruns_identically(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        run = tmp_path / "run"
        assert self.run_train(raw, prep, run) == 0
        reports = []
        for name in ("ev1", "ev2"):
            out = tmp_path / name
            assert main([
                "evaluate", "--data", str(prep), "--embeddings", str(raw),
                "--checkpoint", str(run / "checkpoint"), "--candidates", "20",
                "--repeats", "2", "--seed", "1", "--threads", "1",
                "--out", str(out),
            ]) == 0
            reports.append((out / "report.json").read_bytes())
        assert reports[0] == reports[1]

    def test_export_attention_tsv(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        run = tmp_path / "run"
        assert self.run_train(raw, prep, run) == 0
        out = tmp_path / "att"
        assert main([
            "export-attention", "--data", str(prep), "--embeddings", str(raw),
            "--checkpoint", str(run / "checkpoint"), "--out", str(out),
        ]) == 0
        lines = (out / "attention.tsv").read_text().strip().split("\n")
        assert lines[0].startswith("user_id\t")
        assert len(lines) > 1

    def test_checkpoint_dataset_mismatch_exit_2(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        run = tmp_path / "run"
        assert self.run_train(raw, prep, run) == 0
        other_raw = tmp_path / "other"
        assert main(SYNTH_ARGS[:1] + ["--users", "9", "--items", "30",
                    "--ratings-per-user", "4", "--latent-dim", "5",
                    "--social-dim", "4", "--content-dim", "8",
                    "--style-dim", "10", "--seed", "8",
                    "--out", str(other_raw)]) == 0
        other_prep = tmp_path / "otherprep"
        assert main([
            "prepare", "--ratings", str(other_raw / "ratings.tsv"),
            "--social", str(other_raw / "social.tsv"),
            "--uploads", str(other_raw / "uploads.tsv"),
            "--min-user-ratings", "0", "--min-user-links", "0",
            "--min-item-ratings", "0", "--seed", "1", "--out", str(other_prep),
        ]) == 0
        code = main([
            "evaluate", "--data", str(other_prep), "--embeddings", str(other_raw),
            "--checkpoint", str(run / "checkpoint"), "--out", str(tmp_path / "x"),
        ])
        assert code == 2


class TestAblate:
    def test_grid_rows_present(self, pipeline_dirs, tmp_path):
        raw, prep = pipeline_dirs
        out = tmp_path / "abl"
        assert main([
            "ablate", "--data", str(prep), "--embeddings", str(raw),
            "--train-all", "--latent", "3", "--hidden", "2", "--epochs", "1",
            "--warm-epochs", "1", "--batch", "64", "--candidates", "15",
            "--repeats", "1", "--seed", "2", "--out", str(out),
        ]) == 0
        rows = json.loads((out / "ablation.json").read_text())
        sections = {}
        for row in rows:
            sections.setdefault(row["section"], []).append(row["name"])
        assert len(sections["attention"]) == 7
        assert sections["aspects"] == ["U", "S", "C", "U+S+C"]
        assert len(sections["inputs"]) == 7
        bpr = next(r for r in rows if r["section"] == "baseline")
        assert bpr["hr5_gain_pct"] == 0.0
        assert bpr["ndcg5_gain_pct"] == 0.0


class TestConfigFile:
    def test_config_fills_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("users = 9\nitems = 30\nratings-per-user = 4\n"
                       "latent-dim = 5\nsocial-dim = 4\ncontent-dim = 8\n"
                       "style-dim = 10\nseed = 12\n")
        out = tmp_path / "o"
        assert main(["synth", "--config", str(cfg), "--seed", "99",
                     "--out", str(out)]) == 0
        record = json.loads((out / "run.json").read_text())
        assert record["users"] == 9          # from config
        assert record["seed"] == 99          # flag beats config

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not-a-real-option = 1\n")
        assert main(["synth", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2
        assert "unknown config keys" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1", "--out", "/tmp/gradcheck-out"]) == 0
    out = capsys.readouterr().out
    assert "overall max relative error" in out
