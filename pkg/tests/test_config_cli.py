import csv
import json

import numpy as np
import pytest

from sendi import cli
from sendi.config import (ConfigError, apply_overlay, config_hash, data_hash, load_preset, resolve,
                          training_hash)
from sendi.models import ModelConfig, build_model, serialize

TINY_APP1 = {
    "sampling": {"count": 9, "fractions": {"train": 3, "valid": 3, "test": 3}},
    "system": {"t_end": 5.0},
    "model": {"d_model": 8, "heads": 2, "encoder_blocks": 1, "encoder": [16], "decoder": [16]},
    "training": {"stages": [[0.001, 2], [0.0001, 1]]},
    "evaluation": {"horizons": [1, 2], "baseline": {"decoder": [16]}},
}

TINY_APP2 = {
    "sampling": {"count": 6, "test_count": 2},
    "system": {"t_end": 20.0},
    "noise": [0.0],
    "model": {"encoder": [8], "decoder": [8]},
    "training": {"stages": [[0.001, 2]]},
    "evaluation": {"targets": ["rho"], "train_sizes": [100, 300]},
}


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def sendi(*argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    @pytest.mark.parametrize("name", ["app1", "app2", "app3"])
    def test_presets_validate(self, name):
        cfg = resolve(None, [name])
        assert cfg["experiment"] == name

    def test_reference_counts(self):
        assert load_preset("app1")["sampling"]["count"] == 278
        assert load_preset("app2")["noise"] == [0.0, 0.02, 0.05]

    def test_desk_overlay_scales(self):
        full, desk = resolve(None, ["app2"]), resolve(None, ["app2", "desk"])
        assert desk["sampling"]["count"] == full["sampling"]["count"] // 4
        assert sum(ep for _, ep in desk["training"]["stages"]) == 200

    def test_overlay_never_drops_a_stage(self):
        out = apply_overlay({"training": {"stages": [[0.1, 3], [0.01, 0]]}}, {"scale": {"epochs": 0.1}})
        assert out["training"]["stages"] == [[0.1, 1], [0.01, 0]]

    def test_schema_lists_every_offending_key(self, tmp_path):
        bad = write(tmp_path, "bad.json", {"seed": "zero", "training": {"batch_size": -4}})
        with pytest.raises(ConfigError) as info:
            resolve(bad, ["app1"])
        text = str(info.value)
        assert "seed" in text and "training.batch_size" in text

    def test_system_kind_must_match(self, tmp_path):
        cfg = write(tmp_path, "c.json", {"system": {"kind": "lorenz"}})
        with pytest.raises(ConfigError):
            resolve(cfg, ["app1"])

    def test_hashes(self, tmp_path):
        a = resolve(None, ["app1"])
        b = resolve(None, ["app1"], output=str(tmp_path))
        assert config_hash(a) == config_hash(b)
        c = resolve(write(tmp_path, "c.json", {"training": {"lambda0": 0.0}}), ["app1"])
        assert data_hash(c) == data_hash(a)
        assert training_hash(c) != training_hash(a)
        d = resolve(None, ["app1"], seed=5)
        assert data_hash(d) != data_hash(a)


class TestApp1Chain:
    @pytest.fixture(scope="class")
    @classmethod
    def chain(cls, tmp_path_factory):
        root = tmp_path_factory.mktemp("app1")
        cfg = write(root, "tiny.json", TINY_APP1)
        out = root / "run"
        codes = [sendi(verb, "--preset", "app1", "--config", cfg, "--out", out)
                 for verb in ("generate", "train", "evaluate", "report")]
        return root, cfg, out, codes

    def test_every_stage_succeeds(self, chain):
        assert chain[3] == [0, 0, 0, 0]

    def test_outputs(self, chain):
        _, _, out, _ = chain
        assert len(list((out / "data" / "trajectories").glob("*.csv"))) == 9
        assert (out / "train" / "eq0" / "best.ckpt").exists()
        rows = list(csv.DictReader(open(out / "eval" / "forecast_metrics.csv")))
        assert {r["horizon"] for r in rows} == {"1", "2"}
        assert {r["method"] for r in rows} >= {"oasis", "set_transformer"}
        assert len({r["config_hash"] for r in rows}) == 1
        pngs = sorted(p.name for p in (out / "report").glob("*.png"))
        assert "mape_by_horizon.png" in pngs and any(p.startswith("curves_") for p in pngs)
        for p in pngs:
            assert (out / "report" / p).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_refuses_overwrite(self, chain):
        _, cfg, out, _ = chain
        assert sendi("generate", "--preset", "app1", "--config", cfg, "--out", out) == 2

    def test_byte_identical_regeneration(self, chain, tmp_path):
        _, cfg, out, _ = chain
        again = tmp_path / "again"
        assert sendi("generate", "--preset", "app1", "--config", cfg, "--out", again) == 0
        for f in sorted((out / "data" / "trajectories").glob("*.csv")):
            assert f.read_bytes() == (again / "data" / "trajectories" / f.name).read_bytes()

    def test_stale_dataset(self, chain, tmp_path):
        root, _, out, _ = chain
        changed = json.loads(json.dumps(TINY_APP1))
        changed["solver"] = {"threshold": 0.01}
        cfg = write(tmp_path, "changed.json", changed)
        assert sendi("train", "--preset", "app1", "--config", cfg, "--out", out, "--force") == 4

    def test_tampered_file(self, chain, tmp_path):
        import shutil
        _, cfg, out, _ = chain
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        target = next((copy / "data" / "windows" / "eq0").glob("train.bin"))
        target.write_bytes(target.read_bytes() + b"\0")
        assert sendi("train", "--preset", "app1", "--config", cfg, "--out", copy, "--force") == 4

    def test_dry_run_trains_nothing(self, chain, tmp_path, capsys):
        _, cfg, _, _ = chain
        fresh = tmp_path / "dry"
        assert sendi("train", "--preset", "app1", "--config", cfg, "--out", fresh, "--dry-run") == 0
        plan = json.loads(capsys.readouterr().out)["plan"]
        assert plan["tasks"][0]["plan"]["total_epochs"] == 3
        assert not fresh.exists()

    def test_resume_continues(self, chain, tmp_path):
        import shutil
        _, cfg, out, _ = chain
        copy = tmp_path / "resume"
        shutil.copytree(out, copy)
        assert sendi("train", "--preset", "app1", "--config", cfg, "--out", copy, "--resume") == 0
        summary = json.loads((copy / "train" / "summary.json").read_text())
        assert all(v["epochs_run"] == 0 for v in summary.values())


class TestApp2Chain:
    def test_sections_and_sizes(self, tmp_path):
        cfg = write(tmp_path, "tiny.json", TINY_APP2)
        out = tmp_path / "run"
        for verb in ("generate", "train", "evaluate", "report"):
            assert sendi(verb, "--preset", "app2", "--config", cfg, "--out", out) == 0
        rows = list(csv.DictReader(open(out / "eval" / "r2_by_quantity.csv")))
        assert {r["section"] for r in rows} >= {"interpolation", "extrapolation"}
        assert (out / "report" / "r2_by_quantity.png").exists()


class TestIdentify:
    @pytest.fixture
    def checkpoint(self, tmp_path):
        cfg = ModelConfig(kind="deepset", n_features=4, n_outputs=1, encoder=[8], decoder=[8],
                          features=["t", "x", "y", "z"], outputs=["rho"])
        path = tmp_path / "m.ckpt"
        path.write_bytes(serialize(build_model(cfg)))
        return path

    def window(self, tmp_path, header, rows):
        path = tmp_path / "w.csv"
        lines = [",".join(header)] + [",".join(map(repr, r)) for r in rows]
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_output_json(self, checkpoint, tmp_path, capsys):
        w = self.window(tmp_path, ["t", "x", "y", "z"], np.random.default_rng(0).random((900, 4)).tolist())
        assert sendi("identify", "--checkpoint", checkpoint, "--window", w, "--runs", 5) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out["parameters"]) == {"rho"}
        assert out["window"]["rows"] == 900 and len(out["window"]["sha256"]) == 64
        assert out["config_hash"] and out["timed_runs"] == 5

    def test_empty_window_is_usage_error(self, checkpoint, tmp_path):
        empty = tmp_path / "e.csv"
        empty.write_text("")
        assert sendi("identify", "--checkpoint", checkpoint, "--window", empty) == 2
        header_only = self.window(tmp_path, ["t", "x", "y", "z"], [])
        assert sendi("identify", "--checkpoint", checkpoint, "--window", header_only) == 2

    def test_layout_mismatch_is_config_error(self, checkpoint, tmp_path):
        w = self.window(tmp_path, ["x", "y", "z", "t"], [[1.0, 2.0, 3.0, 4.0]])
        assert sendi("identify", "--checkpoint", checkpoint, "--window", w) == 3

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        w = self.window(tmp_path, ["a"], [[1.0]])
        assert sendi("identify", "--checkpoint", tmp_path / "nope", "--window", w) == 4


class TestExitCodes:
    def test_bad_config_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert sendi("generate", "--config", bad) == 3

    def test_unknown_preset(self):
        assert sendi("generate", "--preset", "nope") == 3

    def test_missing_data(self, tmp_path):
        assert sendi("evaluate", "--preset", "app1", "--out", tmp_path / "none") == 4

    def test_argparse_usage(self):
        with pytest.raises(SystemExit) as info:
            sendi("frobnicate")
        assert info.value.code == 2
