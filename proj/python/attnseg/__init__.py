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

"""Attention-augmented instance segmentation: models, data, metrics."""

import json

from ._attnseg import (
    CheckpointError,
    ConfigError,
    DegeneratePolygonError,
    Error,
    IoError,
    NumericError,
    ParseError,
    ShapeError,
    attention,
    average_precision,
    dataset_iou,
    fbeta,
    gradcheck,
    gradcheck_blocks,
    iou_box,
    iou_mask,
    rasterize_polygon,
)
from . import _attnseg

__all__ = [
    "CheckpointError", "ConfigError", "DegeneratePolygonError", "Error", "IoError",
    "NumericError", "ParseError", "ShapeError", "Model", "attention", "average_precision",
    "dataset_iou", "fbeta", "generate_dataset", "gradcheck", "gradcheck_blocks", "iou_box",
    "iou_mask", "rasterize_polygon",
]


class Model:
    """Segmentation model plus its training state. Configs are plain dicts."""

    def __init__(self, config=None, seed=0, _state=None):
        self._state = _state or _attnseg.Model(json.dumps(config or {}), seed)

    @classmethod
    def load(cls, path):
        return cls(_state=_attnseg.Model.load(str(path)))

    def save(self, path):
        self._state.save(str(path))

    @property
    def config(self):
        return json.loads(self._state.config_json)

    @property
    def parameter_count(self):
        return self._state.parameter_count

    @property
    def variant(self):
        return self._state.variant

    @property
    def epoch(self):
        return self._state.epoch

    def forward(self, x):
        """(N,3,S,S) images in [0,1] to (N,1,S,S) foreground probabilities."""
        return self._state.forward(x)

    def predict(self, x, tau=None):
        """Per image, a list of {confidence, box, mask} instances."""
        return self._state.predict(x, tau)

    def train(self, data_dir, epochs, **train_config):
        """Trains `epochs` more epochs on the train split; returns the log rows."""
        log = self._state.train(str(data_dir), json.dumps(train_config), epochs)
        lines = log.strip().splitlines()
        header = lines[0].split(",")
        return [dict(zip(header, map(float, line.split(",")))) for line in lines[1:]]

    def evaluate(self, data_dir, split="test", iou=0.5, tau=None):
        return json.loads(self._state.evaluate(str(data_dir), split, iou, tau))


def generate_dataset(out_dir, **gen_config):
    """Writes a synthetic dataset; returns (train ids, test ids)."""
    return _attnseg.generate_dataset(str(out_dir), json.dumps(gen_config))
