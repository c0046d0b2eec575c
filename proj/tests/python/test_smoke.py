import math

import numpy as np
import pytest

import rfnet


def test_variants_and_full_counts():
    assert set(rfnet.variants()) == {"rfnet", "single_rgb", "rgbd_stack", "rgbd_concat", "rgb_rgb"}
    assert abs(rfnet.parameter_count("rfnet") - 23.69e6) / 23.69e6 <= 0.02
    assert abs(rfnet.parameter_count("single_rgb") - 12.17e6) / 12.17e6 <= 0.02
    with pytest.raises(rfnet.ConfigError):
        rfnet.parameter_count("rgbd")


def test_cosine_endpoints():
    assert rfnet.cosine_lr(0, 50) == 4e-4
    assert rfnet.cosine_lr(49, 50) == 1e-6
    assert rfnet.cosine_lr(0, 1) == 4e-4


def test_loss_matches_numpy_expansion():
    rng = np.random.default_rng(0)
    k = 5
    logits = rng.uniform(-3, 3, size=(2, k, 3, 4))
    labels = [rng.integers(0, k, size=(3, 4)).astype(np.int32) for _ in range(2)]
    labels[1][0, 0] = 255
    sources = ["cityscapes_like", "lostfound_like"]
    loss, grad = rfnet.multisource_loss(logits, labels, sources)

    def ce(n, y, x):
        z = logits[n, :, y, x]
        return -(z[labels[n][y, x]] - z.max() - math.log(np.exp(z - z.max()).sum()))

    total = 0.0
    for n in range(2):
        num = den = 0.0
        for y in range(3):
            for x in range(4):
                c = labels[n][y, x]
                if c == 255:
                    continue
                w = 1.0 if c in (0, k - 1) or n == 0 else 0.0
                num += w * ce(n, y, x)
                den += w
        total += num / den if den > 0 else 0.0
    assert abs(loss - total / 2) <= 1e-12
    assert grad.shape == logits.shape


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(1)
    logits = rng.uniform(-2, 2, size=(1, 5, 2, 2))
    labels = [rng.integers(0, 5, size=(2, 2)).astype(np.int32)]
    _, grad = rfnet.multisource_loss(logits, labels, ["cityscapes_like"])
    h = 1e-6
    for idx in [(0, 0, 0, 0), (0, 3, 1, 1), (0, 4, 0, 1)]:
        up = logits.copy()
        up[idx] += h
        down = logits.copy()
        down[idx] -= h
        fd = (rfnet.multisource_loss(up, labels, ["cityscapes_like"])[0]
              - rfnet.multisource_loss(down, labels, ["cityscapes_like"])[0]) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-6


def test_iou_counting():
    cm = np.ones((2, 2), dtype=np.uint64)
    r = rfnet.iou(cm)
    assert r["per_class"] == [1 / 3, 1 / 3]
    rng = np.random.default_rng(2)
    gt = rng.integers(0, 3, size=(6, 7)).astype(np.int32)
    pred = rng.integers(0, 3, size=(6, 7)).astype(np.int32)
    m = rfnet.confusion(pred, gt, 3)
    assert m.sum() == gt.size
    r = rfnet.iou(m)
    for c in range(3):
        inter = np.sum((gt == c) & (pred == c))
        union = np.sum((gt == c) | (pred == c))
        assert r["per_class"][c] == inter / union


def test_depth_and_bins():
    d = np.array([[[0.0, 1.0, 0.25, 5.0]]])
    z = rfnet.depth_from_disparity(d, 50.0)
    assert z.tolist() == [[[100.0, 50.0, 100.0, 10.0]]]
    gt = np.zeros((1, 4), dtype=np.int32)
    bins = rfnet.binned_iou(gt, gt, z, num_classes=1)
    assert [int(b["confusion"].sum()) for b in bins] == [1, 0, 1, 0, 2]
    with pytest.raises(rfnet.ConfigError):
        rfnet.binned_iou(gt, gt, z, edges=[10, 50], num_classes=1)


def test_scene_and_remap():
    s = rfnet.generate_scene(3, "lostfound_like", num_obstacles=2)
    assert s["rgb"].shape == (3, 64, 64)
    assert s["disparity"].min() >= 0
    assert set(np.unique(s["labels"])) <= {0, 1, 2}
    unified = rfnet.remap_labels(s["labels"], s["source"])
    assert set(np.unique(unified)) <= {0, 4, 255}


def test_train_and_evaluate(tmp_path):
    data = tmp_path / "data"
    rfnet.generate_dataset(data, train=4, val=2, height=32, width=32)
    cfg = {"data_root": str(data), "out": str(tmp_path / "run"), "epochs": 2, "batch": 2,
           "height": 32, "width": 32, "spp_grids": [1]}
    log = rfnet.train(cfg)
    assert [e for e, _, _ in log] == [0, 1]
    assert log[0][1] == 4e-4 and log[1][1] == 1e-6
    r = rfnet.evaluate(cfg, tmp_path / "run" / "checkpoint.rfc")
    assert 0.0 <= r["miou"] <= 1.0
    assert r["class_names"][-1] == "small_obstacle"
    with pytest.raises(rfnet.ConfigError):
        rfnet.train({**cfg, "bogus": 1})


def test_grad_check():
    r = rfnet.grad_check(samples=10)
    assert r["checked"] == 10
    assert r["max_relative_error"] <= 1e-4
