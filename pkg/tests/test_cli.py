import csv
import json
import os

import pytest

from prbforecast.cli import main
from prbforecast.training import load_checkpoint

TINY_CONFIG = {
    "hyperparams": {"d_emb": 4, "n_enc_layers": 1, "n_dec_layers": 1,
                    "heads": 2, "d_ff": 8, "n_past": 4, "n_future": 2},
    "train": {"epochs": 2, "batch_size": 64, "patience": 2},
    "split": {"train_days": 2, "val_days": 1, "test_days": 1},
    "seed": 7,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared directory with a small generated dataset, a tiny config, and
    one trained checkpoint, so the slow steps run once per module."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    data = root / "data.csv"
    assert main(["gen", "--out", str(data), "--days", "4", "--carriers", "2",
                 "--seed", "7"]) == 0
    model = root / "model.rupf"
    history = root / "history.jsonl"
    assert main(["train", "--data", str(data), "--config", str(config),
                 "--out", str(model), "--history", str(history)]) == 0
    return {"root": root, "config": config, "data": data, "model": model,
            "history": history}


class TestGen:
    def test_row_count(self, tmp_path):
        out = tmp_path / "gen.csv"
        assert main(["gen", "--out", str(out), "--days", "2", "--carriers", "3",
                     "--seed", "1"]) == 0
        with open(out) as f:
            rows = list(csv.reader(f))
        assert len(rows) == 1 + 3 * 2 * 96

    def test_rerun_byte_identical(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for out in (a, b):
            assert main(["gen", "--out", str(out), "--days", "2",
                         "--carriers", "2", "--seed", "9"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_too_many_carriers_is_usage_error(self, tmp_path):
        out = tmp_path / "gen.csv"
        assert main(["gen", "--out", str(out), "--days", "1",
                     "--carriers", "22", "--seed", "1"]) == 1
        assert not out.exists()

    def test_refuses_overwrite_without_force(self, tmp_path):
        out = tmp_path / "gen.csv"
        args = ["gen", "--out", str(out), "--days", "1", "--carriers", "1",
                "--seed", "1"]
        assert main(args) == 0
        assert main(args) == 1
        assert main(args + ["--force"]) == 0

    def test_output_is_ingestible(self, tmp_path):
        from prbforecast.data import load_csv
        out = tmp_path / "gen.csv"
        assert main(["gen", "--out", str(out), "--days", "1", "--carriers", "2",
                     "--seed", "3"]) == 0
        series = load_csv(str(out))
        assert [s.carrier_id for s in series] == [0, 1]
        assert all(len(s) == 96 for s in series)


class TestTrain:
    def test_checkpoint_loads(self, workspace):
        model, cfg, normalizer = load_checkpoint(str(workspace["model"]))
        assert model.hp.d_emb == 4
        assert cfg.seed == 7
        assert normalizer is not None

    def test_history_is_jsonl_with_losses(self, workspace):
        lines = workspace["history"].read_text().strip().splitlines()
        assert 1 <= len(lines) <= TINY_CONFIG["train"]["epochs"]
        for line in lines:
            entry = json.loads(line)
            assert {"epoch", "train_loss", "val_loss"} <= set(entry)
            assert entry["train_loss"] == entry["train_loss"]  # not NaN

    def test_same_seed_reproduces_checkpoint_bytes(self, workspace, tmp_path):
        out = tmp_path / "again.rupf"
        assert main(["train", "--data", str(workspace["data"]),
                     "--config", str(workspace["config"]),
                     "--out", str(out)]) == 0
        assert out.read_bytes() == workspace["model"].read_bytes()

    def test_split_larger_than_data_is_usage_error(self, workspace, tmp_path):
        config = tmp_path / "big.json"
        doc = dict(TINY_CONFIG)
        doc["split"] = {"train_days": 100, "val_days": 10, "test_days": 10}
        config.write_text(json.dumps(doc))
        assert main(["train", "--data", str(workspace["data"]),
                     "--config", str(config),
                     "--out", str(tmp_path / "m.rupf")]) == 1

    def test_unknown_config_key_is_usage_error(self, workspace, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"hyperparams": {"d_embedding": 4}}))
        assert main(["train", "--data", str(workspace["data"]),
                     "--config", str(config),
                     "--out", str(tmp_path / "m.rupf")]) == 1

    def test_missing_data_file_is_io_error(self, workspace, tmp_path):
        assert main(["train", "--data", str(tmp_path / "absent.csv"),
                     "--config", str(workspace["config"]),
                     "--out", str(tmp_path / "m.rupf")]) == 3


class TestForecast:
    def test_writes_horizon_rows(self, workspace, tmp_path):
        out = tmp_path / "fc.csv"
        assert main(["forecast", "--model", str(workspace["model"]),
                     "--data", str(workspace["data"]), "--carrier", "0",
                     "--from", "2024-01-02T00:00:00Z", "--horizon", "8",
                     "--out", str(out)]) == 0
        with open(out) as f:
            rows = list(csv.reader(f))
        assert len(rows) == 9
        assert rows[1][0] == "2024-01-02T00:00:00Z"

    def test_insufficient_history_is_usage_error(self, workspace, tmp_path):
        assert main(["forecast", "--model", str(workspace["model"]),
                     "--data", str(workspace["data"]), "--carrier", "0",
                     "--from", "2024-01-01T00:15:00Z", "--horizon", "4",
                     "--out", str(tmp_path / "fc.csv")]) == 1

    def test_unknown_carrier_is_usage_error(self, workspace, tmp_path):
        assert main(["forecast", "--model", str(workspace["model"]),
                     "--data", str(workspace["data"]), "--carrier", "19",
                     "--from", "2024-01-02T00:00:00Z", "--horizon", "4",
                     "--out", str(tmp_path / "fc.csv")]) == 1

    def test_off_grid_start_is_usage_error(self, workspace, tmp_path):
        assert main(["forecast", "--model", str(workspace["model"]),
                     "--data", str(workspace["data"]), "--carrier", "0",
                     "--from", "2024-01-02T00:07:00Z", "--horizon", "4",
                     "--out", str(tmp_path / "fc.csv")]) == 1


class TestEval:
    def test_report_schema_and_plots(self, workspace, tmp_path):
        report = tmp_path / "report.json"
        plots = tmp_path / "plots"
        assert main(["eval", "--model", str(workspace["model"]),
                     "--data", str(workspace["data"]), "--horizon", "8",
                     "--anchors", "2", "--report", str(report),
                     "--plot-dir", str(plots)]) == 0
        doc = json.loads(report.read_text())
        assert set(doc) >= {"per_carrier", "aggregate", "metadata"}
        assert len(doc["per_carrier"]) == 2
        for entry in doc["per_carrier"]:
            assert 0.0 <= entry["hit_prob"] <= 1.0
            assert entry["mae"] >= 0.0
        assert "model_hash" in doc["metadata"]
        assert sorted(os.listdir(plots)) == ["carrier_0.svg", "carrier_1.svg"]

    def test_corrupt_checkpoint_is_rejected(self, workspace, tmp_path):
        broken = tmp_path / "broken.rupf"
        blob = bytearray(workspace["model"].read_bytes())
        blob[-1] ^= 0xFF
        broken.write_bytes(bytes(blob))
        assert main(["eval", "--model", str(broken),
                     "--data", str(workspace["data"]), "--horizon", "8",
                     "--report", str(tmp_path / "r.json")]) == 1


class TestParser:
    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_help_exits_ok(self):
        assert main(["--help"]) == 0
