import json

import numpy as np
import pytest

import advscope


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    work = tmp_path_factory.mktemp("pipeline")
    base = ["--workdir", str(work), "--threads", "1"]
    steps = [
        ["gen-data", "--per-class", "40", "--size", "16", "--out", "d.ds"],
        ["train", "--data", "d.ds", "--epochs", "4", "--out", "m.mnet"],
        ["attack", "--model", "m.mnet", "--data", "d.ds", "--split", "all", "--eps", "16/255", "--out", "run"],
    ]
    for step in steps:
        assert advscope.run_cli(base + step) == 0
    return work


def test_generate_shapes():
    images, labels, names = advscope.generate_shapes(seed=3, per_class=5, size=16)
    assert images.shape == (20, 3, 16, 16)
    assert images.dtype == np.float32
    assert 0.0 <= images.min() and images.max() <= 1.0
    assert sorted(set(labels)) == [0, 1, 2, 3]
    assert len(names) == 4
    again, _, _ = advscope.generate_shapes(seed=3, per_class=5, size=16)
    assert np.array_equal(images, again)


def test_cli_exit_codes(tmp_path):
    assert advscope.run_cli(["--workdir", str(tmp_path), "attack", "--model", "missing.mnet"]) == 3
    assert advscope.run_cli(["bogus"]) == 2


def test_model_forward_and_attack(run_dir):
    model = advscope.Model.load(str(run_dir / "m.mnet"))
    images, _, _ = advscope.generate_shapes(seed=1, per_class=1, size=16)
    trace = model.forward(images[0])
    assert abs(sum(trace["probabilities"]) - 1.0) < 1e-9
    assert trace["feature_maps"].shape[0] == model.neuron_count
    adv, success, label = model.attack(images[0], trace["label"], eps=8 / 255, seed=2)
    assert np.max(np.abs(adv - images[0])) <= 8 / 255 + 1e-6
    assert success == (label != trace["label"])
    with pytest.raises(ValueError):
        model.attack(images[0], 0, eps=2.0)


def test_workspace_and_api(run_dir):
    ws = advscope.Workspace(str(run_dir / "run"), threads=1)
    assert ws.pair_count > 0
    pair = ws.pair(0)
    assert pair["benign_label"] != pair["adversarial_label"]

    b_map, a_map = ws.vulnerability_map(0, k=2, s=4)
    assert b_map.shape == a_map.shape == (4, 4)
    tree = json.loads(ws.dendrogram(0))
    assert tree["leaves"] == ws.neuron_count

    api = advscope.Api(ws)
    matrix = advscope.get_json(api, "/matrix")
    assert matrix["total"] == ws.pair_count
    status, content_type, body = api.get("/pair/0/vulnmap", {"s": "4"})
    assert status == 200 and content_type == "application/json"
    forced = api.get("/pair/0/vulnmap", {"s": "4", "force": "1"})[2]
    assert body == forced
    status, _, body = api.get("/pair/0", {"t": "2"})
    assert status == 400 and json.loads(body)["field"] == "t"
    with pytest.raises(KeyError):
        ws.pair(ws.pair_count)
