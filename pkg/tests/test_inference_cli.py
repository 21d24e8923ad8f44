import json

import numpy as np
import pytest
import torch
from click.testing import CliRunner
from PIL import Image

from farseg.cli import cli, main
from farseg.config import make_config
from farseg.data.io import read_mask
from farseg.errors import ConfigError
from farseg.inference import (blend_heatmap, load_model, normalize_heatmap, predict, predict_probs,
                              relation_heatmaps, save_checkpoint)
from farseg.model import FarSeg


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    cfg = make_config(profile="tiny", overrides=["data.window=64", "data.stride=32"])
    model = FarSeg(cfg.model)
    path = tmp_path_factory.mktemp("ckpt") / "model.pt"
    save_checkpoint(path, model, None, 0, cfg)
    return path


@pytest.fixture
def image():
    return np.random.default_rng(0).integers(0, 255, (96, 128, 3), dtype=np.uint8)


class CountingModel(torch.nn.Module):
    def __init__(self, inner):
        super().__init__()
        self.inner = inner
        self.relation = inner.relation
        self.calls = 0
        self.batch_items = 0

    def forward(self, x, **kw):
        self.calls += 1
        self.batch_items += x.shape[0]
        return self.inner(x, **kw)


def test_predict_896_single_pass(checkpoint):
    model, _ = load_model(checkpoint)
    counting = CountingModel(model)
    img = np.random.default_rng(1).integers(0, 255, (896, 896, 3), dtype=np.uint8)
    mask, probs = predict(counting, img, 896, 512)
    assert counting.batch_items == 1
    assert mask.shape == (896, 896) and probs.shape == (4, 896, 896)


def test_predict_two_tiles_overlap_averaged(checkpoint):
    model, _ = load_model(checkpoint)
    counting = CountingModel(model)
    img = np.random.default_rng(2).integers(0, 255, (896, 1408, 3), dtype=np.uint8)
    probs = predict_probs(counting, img, 896, 512)
    assert counting.batch_items == 2 and probs.shape == (4, 896, 1408)
    from farseg.inference import to_tensor

    with torch.no_grad():
        left = torch.softmax(model(to_tensor(img[:, :896])), 1)[0].numpy()
        right = torch.softmax(model(to_tensor(img[:, 512:])), 1)[0].numpy()
    np.testing.assert_allclose(probs[:, :, :512], left[:, :, :512], atol=1e-6)
    np.testing.assert_allclose(probs[:, :, 512:896], (left[:, :, 512:] + right[:, :, :384]) / 2, atol=1e-6)
    np.testing.assert_allclose(probs[:, :, 896:], right[:, :, 384:], atol=1e-6)
    np.testing.assert_allclose(probs.sum(0), 1.0, atol=1e-5)


def test_predict_bitwise_deterministic(checkpoint, image):
    model, _ = load_model(checkpoint)
    a, pa = predict(model, image, 64, 32)
    b, pb = predict(model, image, 64, 32)
    assert np.array_equal(a, b) and np.array_equal(pa, pb)


def test_predict_small_image_is_padded(checkpoint):
    model, _ = load_model(checkpoint)
    img = np.random.default_rng(3).integers(0, 255, (40, 50, 3), dtype=np.uint8)
    mask, probs = predict(model, img, 64, 32)
    assert mask.shape == (40, 50) and probs.shape == (4, 40, 50)


def test_num_classes_mismatch(checkpoint):
    with pytest.raises(ConfigError, match="4 classes"):
        load_model(checkpoint, num_classes=16)


def test_normalize_heatmap():
    assert (normalize_heatmap(np.zeros((5, 5))) == 128).all()
    h = normalize_heatmap(np.array([[-1.0, 0.0], [1.0, 3.0]]))
    assert h.min() == 0 and h.max() == 255 and h[0, 1] == pytest.approx(255 / 4)


def test_relation_heatmaps_sizes(checkpoint, image):
    model, _ = load_model(checkpoint)
    maps = relation_heatmaps(model, image)
    assert sorted(maps) == [4, 8, 16, 32]
    for heat in maps.values():
        assert heat.shape == image.shape[:2] and heat.dtype == np.uint8
    odd = np.random.default_rng(4).integers(0, 255, (70, 45, 3), dtype=np.uint8)
    assert all(h.shape == (70, 45) for h in relation_heatmaps(model, odd).values())


def test_relation_heatmap_constant_map_is_mid_gray(checkpoint, image):
    model, _ = load_model(checkpoint)
    with torch.no_grad():
        model.relation.scene_embed.weight.zero_()
        model.relation.scene_embed.bias.zero_()
    for heat in relation_heatmaps(model, image).values():
        assert (heat == 128).all()


def test_blend_heatmap():
    img = np.zeros((4, 4, 3), np.uint8)
    out = blend_heatmap(img, np.full((4, 4), 255, np.uint8), alpha=1.0)
    assert out.shape == (4, 4, 3) and out[..., 0].min() > 100
    assert (blend_heatmap(img, np.zeros((4, 4), np.uint8), alpha=0.0) == 0).all()


# CLI

def _save(path, arr):
    Image.fromarray(arr).save(path)
    return str(path)


def test_cli_predict(checkpoint, image, tmp_path):
    src = _save(tmp_path / "img.png", image)
    res = CliRunner().invoke(cli, ["predict", "--checkpoint", str(checkpoint), src, "--out",
                                   str(tmp_path / "mask.png"), "--probs", str(tmp_path / "p.npy")])
    assert res.exit_code == 0, res.output
    assert read_mask(tmp_path / "mask.png").shape == (96, 128)
    assert np.load(tmp_path / "p.npy").shape == (4, 96, 128)


def test_cli_visualize(checkpoint, image, tmp_path):
    src = _save(tmp_path / "scene.png", image)
    for blend in ("--no-blend", "--blend"):
        out = tmp_path / blend.strip("-")
        res = CliRunner().invoke(cli, ["visualize-relation", "--checkpoint", str(checkpoint), src,
                                       "--out-dir", str(out), blend])
        assert res.exit_code == 0, res.output
        names = sorted(p.name for p in out.iterdir())
        assert names == [f"scene_relation_os{s}.png" for s in (16, 32, 4, 8)]
        assert all(Image.open(out / n).size == (128, 96) for n in names)


def test_cli_prepare_synth_twice_identical(tmp_path):
    runner = CliRunner()
    for name in ("a", "b"):
        res = runner.invoke(cli, ["prepare-data", "synth", "--out", str(tmp_path / name), "--num-images", "8",
                                  "--seed", "7"])
        assert res.exit_code == 0, res.output
    a = (tmp_path / "a" / "manifest.json").read_text()
    assert a == (tmp_path / "b" / "manifest.json").read_text()
    manifest = json.loads(a)
    assert manifest["config"]["seed"] == 7 and len(manifest["files"]) == 8
    assert 0.016 <= manifest["realized_foreground_ratio"] <= 0.024


def test_cli_tile_single(tmp_path):
    src = tmp_path / "src"
    (src / "images").mkdir(parents=True)
    (src / "masks").mkdir()
    _save(src / "images" / "big.png", np.zeros((896, 896, 3), np.uint8))
    Image.fromarray(np.zeros((896, 896), np.uint8), mode="L").save(src / "masks" / "big.png")
    res = CliRunner().invoke(cli, ["prepare-data", "tile", str(src), str(tmp_path / "dst")])
    assert res.exit_code == 0, res.output
    assert [p.name for p in (tmp_path / "dst" / "images").iterdir()] == ["big_y0_x0.png"]


def test_cli_isaid_unknown_color_exit_code(tmp_path, capsys):
    src = tmp_path / "src"
    (src / "images").mkdir(parents=True)
    (src / "masks").mkdir()
    _save(src / "images" / "P1.png", np.zeros((4, 4, 3), np.uint8))
    color = np.zeros((4, 4, 3), np.uint8)
    color[0, 0] = (12, 34, 56)
    _save(src / "masks" / "P1_instance_color_RGB.png", color)
    assert main(["prepare-data", "isaid-convert", str(src), str(tmp_path / "dst")]) == 3
    assert "RGB(12, 34, 56)" in capsys.readouterr().err


def test_cli_config_error_exit_code(tmp_path):
    assert main(["train", "--set", "loss.gamma=-1", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("loss: {nonsense: 1}\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_cli_train_then_eval(tmp_path):
    out = tmp_path / "run"
    args = ["train", "--out", str(out), "--set", "optim.max_step=4", "--set", "data.synth.num_images=8",
            "--set", "data.val_images=2", "--set", "log_every=1"]
    assert main(args) == 0
    assert (out / "best.pt").exists() and (out / "config.yaml").exists()
    data = tmp_path / "data"
    assert main(["prepare-data", "synth", "--out", str(data), "--num-images", "3", "--seed", "1"]) == 0
    report = tmp_path / "r.json"
    assert main(["eval", "--checkpoint", str(out / "last.pt"), "--data", str(data), "--report", str(report),
                 "--csv", str(tmp_path / "per_image.csv")]) == 0
    rep = json.loads(report.read_text())
    assert {"miou", "miou_foreground", "iou", "images_per_second"} <= set(rep)
    assert len((tmp_path / "per_image.csv").read_text().strip().splitlines()) == 4


def test_cli_resume_continues(tmp_path):
    out = tmp_path / "run"
    base = ["--set", "optim.max_step=6", "--set", "data.synth.num_images=8", "--set", "data.val_images=0",
            "--set", "log_every=1", "--set", "checkpoint_every=3"]
    assert main(["train", "--out", str(out), "--max-steps", "3"] + base) == 0
    assert main(["train", "--resume", str(out / "last.pt")]) == 0
    lines = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert [l["step"] for l in lines] == list(range(6))


def test_cli_numeric_error_exit_code(tmp_path, monkeypatch):
    from farseg import train as train_mod

    original = train_mod.fa_loss

    def broken(*args, **kwargs):
        out = original(*args, **kwargs)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr(train_mod, "fa_loss", broken)
    args = ["train", "--out", str(tmp_path / "run"), "--set", "data.synth.num_images=8", "--set", "data.val_images=0"]
    assert main(args) == 4
    assert list((tmp_path / "run").glob("nonfinite_step*.json"))
