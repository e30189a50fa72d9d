import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from cntnets import NetworkSnapshot, SnapshotMeta, save_snapshot
from cntnets.cli import main
from conftest import make_conv, make_dense

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "cntnets" / "schemas"


def load_schema(name):
    return json.loads((SCHEMA_DIR / name).read_text())


def validate(doc, schema_name):
    jsonschema.validate(doc, load_schema(schema_name))


@pytest.fixture(scope="module")
def train_config(tmp_path_factory):
    cfg = {
        "train": {
            "layer_sizes": [5, 8, 3],
            "init_family": "normal",
            "init_scale": 0.5,
            "learning_rate": 0.2,
            "batch_size": 8,
            "max_epochs": 2,
            "seed": 7,
            "snapshot_schedule": "every_epoch",
            "task_tag": "cli",
        },
        "population": {"count": 4, "accuracy_targets": None},
        "dataset": {"kind": "blobs", "n_samples": 120, "n_classes": 3,
                    "n_features": 5, "split_seed": 1},
    }
    path = tmp_path_factory.mktemp("cfg") / "train.json"
    path.write_text(json.dumps(cfg))
    validate(cfg, "train_config.schema.json")
    return path


@pytest.fixture(scope="module")
def trained_dir(train_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert main(["train", "--config", str(train_config), "--out", str(out)]) == 0
    return out


class TestTrainCommand:
    def test_file_count_and_index(self, trained_dir):
        # 4 nets x 2 epochs (every_epoch schedule) -> 8 CNTS files + index
        cnts = sorted(trained_dir.glob("*.cnts"))
        assert len(cnts) == 8
        index = json.loads((trained_dir / "population_index.json").read_text())
        validate(index, "population_index.schema.json")
        assert len(index["snapshots"]) == 8
        assert all((trained_dir / e["file"]).exists() for e in index["snapshots"])

    def test_filenames_embed_tag_seed_accuracy(self, trained_dir):
        index = json.loads((trained_dir / "population_index.json").read_text())
        for e in index["snapshots"]:
            assert e["file"].startswith(f"cli_seed{e['seed']}_acc")
            assert f"{e['accuracy']:.4f}" in e["file"]

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_dataset_path_is_usage_error(self, tmp_path):
        cfg = {"train": {"layer_sizes": [4, 2]},
               "dataset": {"kind": "csv", "path": "missing.csv"}}
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_rerun_byte_identical(self, train_config, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["train", "--config", str(train_config), "--out", str(out1)]) == 0
        assert main(["train", "--config", str(train_config), "--out", str(out2)]) == 0
        files1 = sorted(p.name for p in out1.iterdir())
        files2 = sorted(p.name for p in out2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_seed_offset_changes_population(self, train_config, tmp_path):
        out = tmp_path / "shifted"
        assert main(["train", "--config", str(train_config), "--out", str(out),
                     "--seed-offset", "1000"]) == 0
        index = json.loads((out / "population_index.json").read_text())
        assert {e["seed"] for e in index["snapshots"]} == {1007, 1008, 1009, 1010}


@pytest.fixture(scope="module")
def analyzed_dir(trained_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("analyzed")
    inputs = sorted(str(p) for p in trained_dir.glob("*.cnts"))
    assert main(["analyze", *inputs, "--out", str(out)]) == 0
    return out


class TestAnalyzeCommand:
    def test_outputs(self, analyzed_dir, trained_dir):
        records = sorted(analyzed_dir.glob("*.metrics.json"))
        assert len(records) == len(list(trained_dir.glob("*.cnts")))
        for p in records:
            validate(json.loads(p.read_text()), "metric_record.schema.json")
        csv_lines = (analyzed_dir / "metrics.csv").read_text().splitlines()
        assert csv_lines[0].startswith("snapshot,family,layer,neuron")
        assert len(csv_lines) > len(records)

    def test_matches_library_api(self, analyzed_dir, trained_dir):
        from cntnets import analyze_snapshot, load_snapshot, metric_record_to_json

        name = sorted(p.name for p in trained_dir.glob("*.cnts"))[0]
        rec = analyze_snapshot(load_snapshot(trained_dir / name))
        stored = (analyzed_dir / f"{name.removesuffix('.cnts')}.metrics.json").read_text()
        assert json.loads(stored) == json.loads(metric_record_to_json(rec))

    def test_zero_weight_snapshot_all_zero_record(self, tmp_path):
        from cntnets import Dense

        snap = NetworkSnapshot(
            layers=(Dense(weights=np.zeros((3, 2)), bias=np.zeros(2)),),
            meta=SnapshotMeta(task_tag="zero"),
        )
        p = tmp_path / "zero.cnts"
        save_snapshot(p, snap)
        out = tmp_path / "out"
        assert main(["analyze", str(p), "--out", str(out)]) == 0
        doc = json.loads((out / "zero.metrics.json").read_text())
        assert doc["link_stats"][0]["mu"] == 0.0
        assert all(v == 0.0 for v in doc["strengths"][0]["s"])

    def test_malformed_snapshot_names_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.cnts"
        bad.write_bytes(b"XXXX garbage")
        assert main(["analyze", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "bad.cnts" in capsys.readouterr().err

    def test_missing_input_is_usage_error(self, tmp_path):
        assert main(["analyze", str(tmp_path / "nope.cnts"), "--out", str(tmp_path)]) == 2

    def test_disparity_flag(self, trained_dir, tmp_path):
        name = sorted(trained_dir.glob("*.cnts"))[0]
        out = tmp_path / "disp"
        assert main(["analyze", str(name), "--out", str(out), "--disparity"]) == 0
        doc = json.loads(next(out.glob("*.metrics.json")).read_text())
        assert "disparities" in doc

    def test_thread_env_does_not_change_bytes(self, trained_dir, tmp_path, monkeypatch):
        inputs = sorted(str(p) for p in trained_dir.glob("*.cnts"))
        out1 = tmp_path / "seq"
        out2 = tmp_path / "par"
        monkeypatch.setenv("CNT_THREADS", "1")
        assert main(["analyze", *inputs, "--out", str(out1)]) == 0
        monkeypatch.setenv("CNT_THREADS", "4")
        assert main(["analyze", *inputs, "--out", str(out2)]) == 0
        for p in sorted(out1.iterdir()):
            assert p.read_bytes() == (out2 / p.name).read_bytes()


class TestReportCommand:
    def test_ensemble_outputs(self, analyzed_dir, tmp_path):
        inputs = sorted(str(p) for p in analyzed_dir.glob("*.metrics.json"))
        out = tmp_path / "report"
        assert main(["report", *inputs, "--out", str(out), "--bins", "20",
                     "--min-population", "1", "--bootstrap", "2"]) == 0
        doc = json.loads((out / "ensemble_report.json").read_text())
        validate(doc, "ensemble_report.schema.json")
        assert (out / "report_stats.csv").exists()
        for metric in ("link_weights", "strength", "fluctuation"):
            assert (out / f"pdf_{metric}.csv").exists()

    def test_trajectory_outputs(self, tmp_path):
        from cntnets import analyze_snapshot, metric_record_to_json
        from conftest import dense_chain

        paths = []
        for i, acc in enumerate((0.2, 0.5, 0.7)):
            rng = np.random.default_rng(i)
            snap = dense_chain(rng, [4, 6, 5, 4, 3, 2], accuracy=acc, epoch=i,
                               seed=42, task_tag="traj")
            p = tmp_path / f"t{i}.metrics.json"
            p.write_text(metric_record_to_json(analyze_snapshot(snap)))
            paths.append(str(p))
        out = tmp_path / "tr"
        assert main(["report", *paths, "--mode", "trajectory", "--out", str(out)]) == 0
        doc = json.loads((out / "trajectory_report.json").read_text())
        validate(doc, "trajectory_report.schema.json")
        lines = (out / "fluctuation_errorbars.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3 * 6  # snapshots x neuron layers

    def test_empty_input_usage_error(self, tmp_path):
        assert main(["report", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


class TestOracleCommand:
    def test_dense_snapshot_within_tolerance(self, tmp_path, capsys, rng):
        snap = NetworkSnapshot(
            layers=(make_dense(rng, 6, 5), make_dense(rng, 5, 3)),
            meta=SnapshotMeta(task_tag="oracle"),
        )
        p = tmp_path / "net.cnts"
        save_snapshot(p, snap)
        assert main(["oracle", str(p)]) == 0
        out = capsys.readouterr().out
        assert "OK" in out and "max abs deviation" in out

    def test_conv_snapshot_and_edge_export(self, tmp_path, rng):
        conv = make_conv(rng, 3, 3, 1, 2, 6, 6, padding="same")
        from cntnets import neuron_count

        snap = NetworkSnapshot(
            layers=(conv, make_dense(rng, neuron_count(conv, "output"), 3)),
            meta=SnapshotMeta(task_tag="conv"),
        )
        p = tmp_path / "net.cnts"
        save_snapshot(p, snap)
        edges_dir = tmp_path / "edges"
        assert main(["oracle", str(p), "--export-edges", str(edges_dir)]) == 0
        assert (edges_dir / "layer0.csv").exists()
        assert (edges_dir / "layer1.csv").exists()
        assert main(["oracle", str(p), "--export-edges", str(edges_dir),
                     "--edge-format", "graph_exchange"]) == 0
        assert (edges_dir / "layer0.graphml").exists()

    def test_cap_exceeded_suggests_flag(self, tmp_path, capsys, rng):
        snap = NetworkSnapshot(layers=(make_dense(rng, 40, 40),))
        p = tmp_path / "net.cnts"
        save_snapshot(p, snap)
        assert main(["oracle", str(p), "--oracle-cap", "100"]) == 1
        assert "--oracle-cap" in capsys.readouterr().err


class TestConvertCommand:
    def test_binary_json_round_trip(self, tmp_path, rng):
        snap = NetworkSnapshot(layers=(make_dense(rng, 4, 3),),
                               meta=SnapshotMeta(accuracy=0.25, task_tag="conv"))
        src = tmp_path / "a.cnts"
        save_snapshot(src, snap)
        as_json = tmp_path / "a.cnts.json"
        back = tmp_path / "b.cnts"
        assert main(["convert", str(src), str(as_json)]) == 0
        validate(json.loads(as_json.read_text()), "snapshot_json.schema.json")
        assert main(["convert", str(as_json), str(back)]) == 0
        assert back.read_bytes() == src.read_bytes()

    def test_missing_input(self, tmp_path):
        assert main(["convert", str(tmp_path / "x.cnts"), str(tmp_path / "y.json")]) == 2


class TestHeaderSchema:
    def test_cnts_header_validates(self, tmp_path, rng):
        import struct

        conv = make_conv(rng, 2, 2, 1, 2, 4, 4, padding="valid")
        from cntnets import neuron_count, write_snapshot

        snap = NetworkSnapshot(layers=(conv, make_dense(rng, neuron_count(conv, "output"), 2)))
        data = write_snapshot(snap)
        _, header_len = struct.unpack_from("<HI", data, 4)
        header = json.loads(data[10 : 10 + header_len])
        validate(header, "cnts_header.schema.json")
