import json
import logging

import numpy as np
import pytest
from PIL import Image

from deepway.cli import EXIT_FORMAT, EXIT_OK, EXIT_USAGE, main, read_config
from deepway.io import read_json, read_mask, read_waypoints
from deepway.order import RouteOrder
from deepway.plan import PathPlan


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["gen", "--seed", "7", "--count", "3", "--size", "256", "--holes", "0",
                 "--out", str(out)]) == EXIT_OK
    return out


def item(ds, i, key):
    return ds / read_json(ds / "manifest.json")["items"][i][key]


def test_gen_is_byte_identical(dataset, tmp_path):
    assert main(["gen", "--seed", "7", "--count", "3", "--size", "256", "--holes", "0",
                 "--out", str(tmp_path)]) == EXIT_OK
    for f in dataset.iterdir():
        if f.name != "run_config.json":
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()
    cfg = read_json(dataset / "run_config.json")
    assert cfg["command"] == "gen" and cfg["args"]["seed"] == 7


def test_plan_oracle_covers_every_row(dataset, tmp_path):
    assert main(["plan", "--mask", str(item(dataset, 0, "mask")), "--oracle",
                 str(item(dataset, 0, "truth")), "--out", str(tmp_path)]) == EXIT_OK
    cov = read_json(tmp_path / "coverage.json")
    assert cov["score"] == 1.0
    order = RouteOrder.from_json(read_json(tmp_path / "route.json"))
    plan = PathPlan.from_json(read_json(tmp_path / "path.json"))
    assert len(plan.legs) == len(order.sequence) - 1
    assert len(read_waypoints(tmp_path / "waypoints.json")) > 0
    with Image.open(tmp_path / "overlay.png") as im:
        assert im.mode == "RGB" and im.size == (256, 256)
    assert read_json(tmp_path / "run_config.json")["pipeline"]["w"] == 2.0


def test_plan_missing_weights_is_format_error(dataset, tmp_path, capsys):
    code = main(["plan", "--mask", str(item(dataset, 0, "mask")), "--weights",
                 str(tmp_path / "none.dway"), "--out", str(tmp_path / "o")])
    assert code == EXIT_FORMAT
    assert capsys.readouterr().out == ""


def test_eval_oracle(dataset, tmp_path):
    out = tmp_path / "rep.json"
    assert main(["eval", "--data", str(dataset), "--oracle", "--out", str(out),
                 "--csv", str(tmp_path / "pr.csv")]) == EXIT_OK
    rep = read_json(out)
    assert rep["ap"] == {"2": 1.0, "4": 1.0, "8": 1.0}
    assert rep["coverage"]["mean"] == 1.0 and len(rep["coverage"]["per_image"]) == 3
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "r_c,t_c,precision,recall" and len(lines) == 1 + 3 * 11


def test_eval_needs_a_source(dataset, tmp_path):
    assert main(["eval", "--data", str(dataset), "--out", str(tmp_path / "r.json")]) == EXIT_FORMAT
    assert main(["eval", "--mask", str(item(dataset, 0, "mask")),
                 "--out", str(tmp_path / "r.json")]) == EXIT_USAGE


def test_train_zero_epochs_and_predict(dataset, tmp_path):
    w = tmp_path / "w.dway"
    assert main(["train", "--data", str(dataset), "--epochs", "0", "--out", str(w)]) == EXIT_OK
    assert w.exists() and read_json(tmp_path / "w.loss.json")["epoch_loss"] == []
    assert read_json(tmp_path / "run_config.json")["train"]["learning_rate"] == 3e-4
    out = tmp_path / "wp.json"
    assert main(["predict", "--weights", str(w), "--mask", str(item(dataset, 0, "mask")),
                 "--tc", "0.5", "--out", str(out)]) == EXIT_OK
    wps = read_waypoints(out)
    assert all(p.confidence > 0.5 for p in wps)
    out = tmp_path / "all.json"
    assert main(["predict", "--weights", str(w), "--data", str(dataset), "--tc", "0.99",
                 "--out", str(out)]) == EXIT_OK
    assert len(read_json(out)["items"]) == 3


def test_predictions_file_feeds_eval(dataset, tmp_path):
    truth = [read_json(item(dataset, i, "truth")) for i in range(3)]
    items = [[{"x": x, "y": y, "confidence": 1.0} for x, y in t["waypoints_a"] + t["waypoints_b"]]
             for t in truth]
    (tmp_path / "p.json").write_text(json.dumps({"items": items}))
    out = tmp_path / "r.json"
    assert main(["eval", "--data", str(dataset), "--predictions", str(tmp_path / "p.json"),
                 "--no-coverage", "--rc", "4", "--out", str(out)]) == EXIT_OK
    assert read_json(out)["ap"] == {"4": 1.0}


def test_config_file_defaults_and_override(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("w = 1.5\nrc = 4 8\n", encoding="utf-8")
    assert read_config(cfg) == {"w": "1.5", "rc": "4 8"}
    out = tmp_path / "r.json"
    assert main(["eval", "--config", str(cfg), "--data", str(dataset), "--oracle",
                 "--no-coverage", "--out", str(out)]) == EXIT_OK
    assert set(read_json(out)["ap"]) == {"4", "8"}
    assert read_json(tmp_path / "run_config.json")["args"]["w"] == 1.5
    assert main(["eval", "--config", str(cfg), "--data", str(dataset), "--oracle", "--w", "3",
                 "--no-coverage", "--out", str(out)]) == EXIT_OK
    assert read_json(tmp_path / "run_config.json")["args"]["w"] == 3.0


def test_render_from_artifacts(dataset, tmp_path):
    main(["plan", "--mask", str(item(dataset, 1, "mask")), "--oracle", str(item(dataset, 1, "truth")),
          "--out", str(tmp_path)])
    png = tmp_path / "again.png"
    assert main(["render", "--mask", str(item(dataset, 1, "mask")), "--route", str(tmp_path / "route.json"),
                 "--path", str(tmp_path / "path.json"), "--out", str(png)]) == EXIT_OK
    a = np.asarray(Image.open(png))
    b = np.asarray(Image.open(tmp_path / "overlay.png"))
    assert np.array_equal(a, b)


def test_gray_mask_warns(tmp_path, caplog):
    p = tmp_path / "m.png"
    Image.fromarray(np.array([[0, 128], [255, 0]], np.uint8)).save(p)
    with caplog.at_level(logging.WARNING):
        g = read_mask(p)
    assert g.tolist() == [[0, 1], [1, 0]] and "neither 0 nor 255" in caplog.text


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["gen"]) == EXIT_USAGE
