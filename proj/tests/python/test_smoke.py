import math
import os
import sys
import tempfile

import numpy as np
import pytest

sys.path.insert(0, os.environ["TDSEG_MODULE_DIR"])

import _tdseg  # noqa: E402

CONFIG_DIR = os.environ.get("TDSEG_CONFIG_DIR", "configs")


def test_conv2d_matches_numpy():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    y = _tdseg.conv2d(x, w, 1, 1, 1)
    assert y.shape == (2, 4, 8, 8)
    # nested-loop reference on one output cell
    n, oc, oy, ox = 1, 2, 4, 5
    acc = 0.0
    for ic in range(3):
        for kh in range(3):
            for kw in range(3):
                iy, ix = oy - 1 + kh, ox - 1 + kw
                if 0 <= iy < 8 and 0 <= ix < 8:
                    acc += w[oc, ic, kh, kw] * x[n, ic, iy, ix]
    assert abs(y[n, oc, oy, ox] - acc) < 1e-10


def test_elementwise_ops():
    x = np.array([[[[-1.0, 2.0]]]])
    assert (_tdseg.relu(x) == [[[[0.0, 2.0]]]]).all()

    s = _tdseg.softmax_channel(np.zeros((1, 2, 1, 1)))
    assert abs(s[0, 0, 0, 0] - 0.5) < 1e-12

    up = _tdseg.upsample2x(np.full((1, 1, 2, 2), 3.0))
    assert up.shape == (1, 1, 4, 4)
    assert np.allclose(up, 3.0)

    y, idx = _tdseg.maxpool2d(np.arange(16.0).reshape(1, 1, 4, 4), 2, 2)
    assert y.reshape(-1).tolist() == [5.0, 7.0, 13.0, 15.0]


def test_iou_and_targets():
    assert _tdseg.iou(0, 0, 10, 10, 0, 0, 10, 10) == 1.0
    assert abs(_tdseg.iou(0, 0, 100, 100, 50, 50, 150, 150) - 2500 / 17500) < 1e-15

    t = _tdseg.assign_targets([(0, 0, 10, 10), (40, 40, 50, 50)], [(0, 0, 10, 10)], [2])
    assert t == [2, 0]


def test_metrics():
    assert _tdseg.mean_iou([0, 1, 1, 0], [0, 1, 1, 0], 2) == 1.0
    assert _tdseg.mean_pixel_accuracy([1, 0], [0, 1], 2) == 0.0
    # don't-care pixels are excluded
    assert _tdseg.mean_iou([0, 1], [0, 255], 2) == 1.0


def test_receptive_field():
    cfg = "input c=1\nconv out=1 k=3 s=1 p=0 d=1\ntap name=a\n"
    size, jump, offset = _tdseg.receptive_field(cfg, "a")
    assert (size, jump) == (3.0, 1.0)
    assert offset == 1.0


def test_dataset_and_forward():
    with tempfile.TemporaryDirectory() as d:
        _tdseg.synth_dataset(d, seed=5, n=6, n_val=2, canvas=64, classes=4)
        assert os.path.exists(os.path.join(d, "train", "img_00000.ppm"))
        assert os.path.exists(os.path.join(d, "mean.txt"))
        mask = _tdseg.forward_predict(os.path.join(CONFIG_DIR, "desk64.cfg"), d, 0)
        assert mask.shape == (64, 64)
        assert mask.min() >= 0 and mask.max() <= 3


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
