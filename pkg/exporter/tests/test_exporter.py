"""Exporter tests.

The analysis tool is consumed strictly through its external interfaces:
the documented CNTS/JSON snapshot formats and the ``python -m cntnets``
command line.  Nothing here imports the analysis package.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cnts_exporter import (
    ExportError,
    export,
    load_manifest,
    read_cnts,
    verify,
)
from cnts_exporter.cli import main

META = {
    "accuracy": 0.7, "epoch": 12, "init_family": "normal", "init_scale": 0.05,
    "seed": 41, "task_tag": "export-test", "output_activation": "softmax",
}


def make_checkpoint(dir_path: Path):
    """PyTorch-style conv+dense checkpoint: kernels (c_out, c_in, kh, kw),
    dense weights (out, in)."""
    rng = np.random.default_rng(7)
    tensors = {
        "features.0.weight": rng.normal(0, 0.2, (4, 1, 3, 3)).astype(np.float32),
        "features.0.bias": rng.normal(0, 0.05, 4).astype(np.float32),
        "classifier.weight": rng.normal(0, 0.2, (3, 4 * 3 * 3)).astype(np.float32),
        "classifier.bias": rng.normal(0, 0.05, 3).astype(np.float32),
    }
    source = dir_path / "checkpoint.npz"
    np.savez(source, **tensors)
    manifest_doc = {
        "source": "checkpoint.npz",
        "meta": META,
        "layers": [
            {
                "kind": "conv2d",
                "weights": "features.0.weight",
                "bias": "features.0.bias",
                "source_order": ["c_out", "c_in", "kh", "kw"],
                "shape": [4, 1, 3, 3],
                "stride": [2, 2],
                "padding": "valid",
                "input_dims": [7, 7, 1],
            },
            {
                "kind": "dense",
                "weights": "classifier.weight",
                "bias": "classifier.bias",
                "source_order": ["out", "in"],
            },
        ],
    }
    manifest_path = dir_path / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_doc, indent=1))
    return tensors, manifest_doc, manifest_path


def run_cntnets(*args):
    return subprocess.run(
        [sys.executable, "-m", "cntnets", *args],
        capture_output=True, text=True,
    )


class TestExport:
    def test_export_produces_cnts_the_analyzer_accepts(self, tmp_path):
        _, _, manifest_path = make_checkpoint(tmp_path)
        out = export(load_manifest(manifest_path), tmp_path / "net.cnts")
        assert out.read_bytes()[:4] == b"CNTS"
        result = run_cntnets("oracle", str(out))
        assert result.returncode == 0, result.stderr
        assert "OK" in result.stdout

    def test_permutation_applied(self, tmp_path):
        tensors, _, manifest_path = make_checkpoint(tmp_path)
        export(load_manifest(manifest_path), tmp_path / "net.cnts")
        _, blocks = read_cnts((tmp_path / "net.cnts").read_bytes())
        # (c_out, c_in, kh, kw) -> (kh, kw, c_in, c_out)
        expected = np.transpose(tensors["features.0.weight"].astype(np.float64), (2, 3, 1, 0))
        assert np.array_equal(blocks[0]["weights"], expected)
        expected_dense = tensors["classifier.weight"].astype(np.float64).T
        assert np.array_equal(blocks[1]["weights"], expected_dense)

    def test_geometry_comes_only_from_manifest(self, tmp_path):
        _, _, manifest_path = make_checkpoint(tmp_path)
        export(load_manifest(manifest_path), tmp_path / "net.cnts")
        _, blocks = read_cnts((tmp_path / "net.cnts").read_bytes())
        assert blocks[0]["stride"] == (2, 2)
        assert blocks[0]["padding"] == "valid"
        assert blocks[0]["input_dims"] == (7, 7, 1)

    def test_meta_round_trips(self, tmp_path):
        _, _, manifest_path = make_checkpoint(tmp_path)
        export(load_manifest(manifest_path), tmp_path / "net.cnts")
        meta, _ = read_cnts((tmp_path / "net.cnts").read_bytes())
        assert meta == META


class TestFailureModes:
    def test_missing_tensor(self, tmp_path):
        _, doc, manifest_path = make_checkpoint(tmp_path)
        doc["layers"][0]["weights"] = "features.9.weight"
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ExportError, match="features.9.weight"):
            export(load_manifest(manifest_path), tmp_path / "net.cnts")

    def test_declared_shape_mismatch(self, tmp_path):
        _, doc, manifest_path = make_checkpoint(tmp_path)
        doc["layers"][0]["shape"] = [4, 1, 5, 5]
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ExportError, match="shape"):
            export(load_manifest(manifest_path), tmp_path / "net.cnts")

    def test_broken_chain_when_layer_omitted(self, tmp_path):
        _, doc, manifest_path = make_checkpoint(tmp_path)
        rng = np.random.default_rng(1)
        tensors = dict(np.load(tmp_path / "checkpoint.npz"))
        tensors["middle.weight"] = rng.normal(0, 0.1, (20, 36)).astype(np.float32)
        tensors["middle.bias"] = np.zeros(20, dtype=np.float32)
        tensors["classifier.weight"] = rng.normal(0, 0.1, (3, 20)).astype(np.float32)
        np.savez(tmp_path / "checkpoint.npz", **tensors)
        # manifest still maps conv -> classifier directly: 36 outputs vs 20 inputs
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ExportError, match="chain"):
            export(load_manifest(manifest_path), tmp_path / "net.cnts")

    def test_bad_source_order(self, tmp_path):
        _, doc, manifest_path = make_checkpoint(tmp_path)
        doc["layers"][0]["source_order"] = ["c_out", "c_out", "kh", "kw"]
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ExportError, match="permutation"):
            load_manifest(manifest_path)

    def test_missing_geometry(self, tmp_path):
        _, doc, manifest_path = make_checkpoint(tmp_path)
        del doc["layers"][0]["input_dims"]
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ExportError, match="input_dims"):
            load_manifest(manifest_path)


class TestVerify:
    def test_self_export_zero_deviation(self, tmp_path):
        _, _, manifest_path = make_checkpoint(tmp_path)
        manifest = load_manifest(manifest_path)
        export(manifest, tmp_path / "net.cnts")
        report = verify(tmp_path / "net.cnts", manifest)
        assert report["ok"]
        assert all(t["max_deviation"] == 0.0 for t in report["tensors"])

    def test_corrupted_byte_fails(self, tmp_path):
        _, _, manifest_path = make_checkpoint(tmp_path)
        manifest = load_manifest(manifest_path)
        out = tmp_path / "net.cnts"
        export(manifest, out)
        data = bytearray(out.read_bytes())
        data[-5] ^= 0xFF  # flip one payload byte
        out.write_bytes(bytes(data))
        report = verify(out, manifest)
        assert not report["ok"]
        assert max(t["max_deviation"] for t in report["tensors"]) > 0.0

    def test_permuted_source_matches_after_declared_permutation(self, tmp_path):
        # same tensors stored in two different axis orders; both manifests
        # must produce identical CNTS payloads
        rng = np.random.default_rng(3)
        kernel = rng.normal(0, 0.2, (3, 3, 2, 4))
        bias = np.zeros(4)
        np.savez(tmp_path / "a.npz", k=kernel, b=bias)
        np.savez(tmp_path / "b.npz", k=np.transpose(kernel, (3, 2, 0, 1)), b=bias)
        base = {
            "meta": META,
            "layers": [{
                "kind": "conv2d", "weights": "k", "bias": "b",
                "stride": [1, 1], "padding": "same", "input_dims": [5, 5, 2],
            }],
        }
        doc_a = json.loads(json.dumps(base))
        doc_a["source"] = "a.npz"
        doc_a["layers"][0]["source_order"] = ["kh", "kw", "c_in", "c_out"]
        doc_b = json.loads(json.dumps(base))
        doc_b["source"] = "b.npz"
        doc_b["layers"][0]["source_order"] = ["c_out", "c_in", "kh", "kw"]
        (tmp_path / "ma.json").write_text(json.dumps(doc_a))
        (tmp_path / "mb.json").write_text(json.dumps(doc_b))
        export(load_manifest(tmp_path / "ma.json"), tmp_path / "a.cnts")
        export(load_manifest(tmp_path / "mb.json"), tmp_path / "b.cnts")
        assert (tmp_path / "a.cnts").read_bytes() == (tmp_path / "b.cnts").read_bytes()
        assert verify(tmp_path / "a.cnts", load_manifest(tmp_path / "mb.json"))["ok"]


class TestCli:
    def test_export_and_verify_exit_codes(self, tmp_path, capsys):
        _, _, manifest_path = make_checkpoint(tmp_path)
        out = tmp_path / "net.cnts"
        assert main(["export", str(manifest_path), "-o", str(out)]) == 0
        assert main(["verify", str(out), str(manifest_path)]) == 0
        assert "OK" in capsys.readouterr().out
        data = bytearray(out.read_bytes())
        data[-1] ^= 0x01
        out.write_bytes(bytes(data))
        assert main(["verify", str(out), str(manifest_path)]) == 1

    def test_missing_manifest_usage_error(self, tmp_path):
        assert main(["export", str(tmp_path / "nope.json"), "-o", str(tmp_path / "x.cnts")]) == 2

    def test_missing_archive_usage_error(self, tmp_path):
        m = tmp_path / "m.json"
        m.write_text(json.dumps({
            "source": "missing.npz", "meta": META,
            "layers": [{"kind": "dense", "weights": "w", "bias": "b"}],
        }))
        assert main(["export", str(m), "-o", str(tmp_path / "x.cnts")]) == 2


def build_json_variant(tensors, manifest_doc) -> dict:
    """The documented .cnts.json layout, built from the raw checkpoint."""
    kernel = np.transpose(tensors["features.0.weight"].astype(np.float64), (2, 3, 1, 0))
    dense = tensors["classifier.weight"].astype(np.float64).T
    conv_entry = manifest_doc["layers"][0]
    return {
        "format": "cnts.json",
        "version": 1,
        "meta": manifest_doc["meta"],
        "layers": [
            {
                "kind": "conv2d",
                "kernel": kernel.tolist(),
                "bias": tensors["features.0.bias"].astype(np.float64).tolist(),
                "stride": conv_entry["stride"],
                "padding": conv_entry["padding"],
                "input_dims": conv_entry["input_dims"],
            },
            {
                "kind": "dense",
                "weights": dense.tolist(),
                "bias": tensors["classifier.bias"].astype(np.float64).tolist(),
            },
        ],
    }


def approx_equal(a, b, tol=1e-9, path=""):
    if isinstance(a, dict) and isinstance(b, dict):
        assert a.keys() == b.keys(), f"{path}: keys differ"
        return all(approx_equal(a[k], b[k], tol, f"{path}.{k}") for k in a)
    if isinstance(a, list) and isinstance(b, list):
        assert len(a) == len(b), f"{path}: lengths differ"
        return all(approx_equal(x, y, tol, f"{path}[{i}]") for i, (x, y) in enumerate(zip(a, b)))
    if isinstance(a, float) and isinstance(b, float):
        assert abs(a - b) <= tol, f"{path}: {a} vs {b}"
        return True
    assert a == b, f"{path}: {a!r} vs {b!r}"
    return True


def test_acceptance_exported_metrics_match_json_variant(tmp_path):
    """[ACCEPTANCE] a conv+dense checkpoint exported to CNTS yields metrics
    equal (<= 1e-9) to the same tensors fed through the JSON snapshot
    variant, and verify() reports zero deviation."""
    tensors, manifest_doc, manifest_path = make_checkpoint(tmp_path)
    manifest = load_manifest(manifest_path)
    exported = export(manifest, tmp_path / "exported.cnts")

    json_variant = tmp_path / "direct.cnts.json"
    json_variant.write_text(json.dumps(build_json_variant(tensors, manifest_doc)))

    out_a = tmp_path / "metrics_exported"
    out_b = tmp_path / "metrics_direct"
    for snap, out in ((exported, out_a), (json_variant, out_b)):
        result = run_cntnets("analyze", str(snap), "--out", str(out), "--disparity")
        assert result.returncode == 0, result.stderr

    rec_a = json.loads(next(out_a.glob("*.metrics.json")).read_text())
    rec_b = json.loads(next(out_b.glob("*.metrics.json")).read_text())
    assert approx_equal(rec_a, rec_b, tol=1e-9)

    report = verify(exported, manifest)
    assert report["ok"] and all(t["max_deviation"] == 0.0 for t in report["tensors"])
    print("\n[ACCEPTANCE] exporter round-trip: PASS", flush=True)
