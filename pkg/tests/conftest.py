"""Shared fixtures: bundled descriptor loading and small hand-built specs."""

import json
from importlib import resources

import pytest

from beeprune.arch import parse_architecture


def load_bundled(name):
    """Parse one of the descriptors shipped inside the package."""
    text = resources.files("beeprune.descriptors").joinpath(name + ".json").read_text()
    return parse_architecture(json.loads(text))


@pytest.fixture
def bundled():
    return load_bundled


def conv(name, out_channels, kernel=3, stride=1, preds=None, tie=None, prunable=True):
    layer = {
        "name": name,
        "kind": "conv",
        "kernel": [kernel, kernel],
        "out_channels": out_channels,
        "prunable": prunable,
    }
    if stride != 1:
        layer["stride"] = stride
    if preds is not None:
        layer["predecessors"] = preds
    if tie is not None:
        layer["tie_group"] = tie
    return layer


def fc(name, out_channels, preds=None, prunable=False):
    layer = {
        "name": name,
        "kind": "fully-connected",
        "out_channels": out_channels,
        "prunable": prunable,
    }
    if preds is not None:
        layer["predecessors"] = preds
    return layer


def doc(layers, h=4, w=4, c=3, num_classes=10, name="net"):
    return {
        "name": name,
        "input": {"h": h, "w": w, "c": c},
        "num_classes": num_classes,
        "layers": layers,
    }
