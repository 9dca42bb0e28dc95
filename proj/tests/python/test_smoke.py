# Copyright 2026 The attnseg Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json

import numpy as np
import pytest

import attnseg


def test_zero_gates_scale_by_quarter():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(2, 8, 5, 6))
    for kind in ("coord", "cbam"):
        y = attnseg.attention(x, kind, zero=True)
        assert np.array_equal(y, 0.25 * x)


def test_attention_preserves_shape():
    x = np.random.default_rng(1).uniform(size=(1, 8, 4, 4))
    for kind in ("none", "coord", "cbam", "mhsa", "dual"):
        assert attnseg.attention(x, kind, seed=3, heads=2).shape == x.shape


def test_bad_shape_raises_shape_error():
    with pytest.raises(attnseg.ShapeError):
        attnseg.attention(np.zeros((8, 4, 4)), "coord")


def test_bad_config_raises_config_error():
    with pytest.raises(attnseg.ConfigError):
        attnseg.attention(np.zeros((1, 6, 4, 4)), "mhsa", heads=4)
    assert issubclass(attnseg.ConfigError, attnseg.Error)


def test_metric_helpers():
    assert attnseg.iou_box((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    a = np.zeros((4, 4), bool)
    a[:2] = True
    b = np.zeros((4, 4), bool)
    b[1:3] = True
    assert attnseg.iou_mask(a, b) == pytest.approx(4 / 12)
    assert attnseg.fbeta(0.5, 0.5) == pytest.approx(0.5)
    assert attnseg.dataset_iou(2, 1, 1) == pytest.approx(0.5)
    assert attnseg.average_precision([(0.9, True), (0.8, False), (0.7, True)], 2) == (
        pytest.approx(0.5 + 0.5 * 2 / 3))


def test_rasterize_square():
    m = attnseg.rasterize_polygon([(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)], 8, 8)
    assert m.shape == (8, 8)
    assert m.sum() == 16
    assert m[2:6, 2:6].all()


def test_gradcheck_blocks_pass():
    for block in attnseg.gradcheck_blocks():
        err, checked, _ = attnseg.gradcheck(block, seed=0)
        assert checked > 0
        assert err <= (1e-4 if block == "model" else 1e-5), block


def test_model_train_eval_roundtrip(tmp_path):
    data = tmp_path / "data"
    train, test = attnseg.generate_dataset(data, count=8, image_size=16, seed=4, min_blobs=1,
                                           max_blobs=2)
    assert len(train) + len(test) == 8
    model = attnseg.Model({"attention": "cbam", "input_size": 16, "depth": 2, "base_width": 4},
                          seed=1)
    assert model.variant == "cbam"
    assert model.parameter_count > 0
    x = np.random.default_rng(2).uniform(size=(2, 3, 16, 16))
    prob = model.forward(x)
    assert prob.shape == (2, 1, 16, 16)
    assert ((prob > 0) & (prob < 1)).all()
    assert len(model.predict(x)) == 2

    log = model.train(data, epochs=2, batch_size=4)
    assert [row["epoch"] for row in log] == [1, 2]
    report = model.evaluate(data, split="train")
    for block in ("box", "mask"):
        assert 0.0 <= report[block]["f1"] <= 1.0

    path = tmp_path / "m.ckpt"
    model.save(path)
    again = attnseg.Model.load(path)
    assert again.epoch == 2
    assert again.config == model.config
    assert np.array_equal(again.forward(x), model.forward(x))


def test_corrupt_checkpoint_raises(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"nope")
    with pytest.raises(attnseg.CheckpointError):
        attnseg.Model.load(path)
