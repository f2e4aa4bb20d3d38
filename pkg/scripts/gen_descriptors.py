#!/usr/bin/env python3
"""Regenerate the bundled architecture descriptors.

Run from the repository root:

    python scripts/gen_descriptors.py

Rewrites ``src/beeprune/descriptors/*.json`` and prints each descriptor's
baseline cost next to the reference totals the cost model is calibrated to
(exact channel counts, FLOPs/params within 1%).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "src" / "beeprune" / "descriptors"

# name -> (channels exact, flops ref, params ref); refs checked at 1%.
REFERENCE = {
    "vgg16-cifar": (4224, 314.59e6, 14.73e6),
    "googlenet-cifar": (7904, 1534.55e6, 6.17e6),
    "resnet56-cifar": (2032, 127.62e6, 0.85e6),
    "resnet110-cifar": (4048, 257.09e6, 1.73e6),
    "resnet18-imagenet": (4800, 1824.52e6, 11.69e6),
    "resnet34-imagenet": (8512, 3679.23e6, 21.90e6),
    "resnet50-imagenet": (26560, 4135.70e6, 25.56e6),
    "resnet101-imagenet": (52672, 7868.40e6, 44.55e6),
    "resnet152-imagenet": (75712, 11605.91e6, 60.19e6),
}


def conv(name, out_channels, kernel=3, stride=1, preds=None, tie=None, prunable=True):
    d = {
        "name": name,
        "kind": "conv",
        "kernel": [kernel, kernel],
        "out_channels": out_channels,
    }
    if stride != 1:
        d["stride"] = stride
    if preds is not None:
        d["predecessors"] = list(preds)
    if tie is not None:
        d["tie_group"] = tie
    if not prunable:
        d["prunable"] = False
    return d


def fc(name, out_features, preds=None, prunable=False):
    d = {"name": name, "kind": "fully-connected", "out_channels": out_features}
    if preds is not None:
        d["predecessors"] = list(preds)
    if prunable:
        d["prunable"] = True
    return d


def pool(name, kernel=2, stride=2, preds=None):
    d = {"name": name, "kind": "pool", "kernel": [kernel, kernel], "stride": stride}
    if preds is not None:
        d["predecessors"] = list(preds)
    return d


def gpool(name, preds=None):
    d = {"name": name, "kind": "global-pool"}
    if preds is not None:
        d["predecessors"] = list(preds)
    return d


def add(name, preds):
    return {"name": name, "kind": "elementwise-add", "predecessors": list(preds)}


def concat(name, preds):
    return {"name": name, "kind": "concat", "predecessors": list(preds)}


def wrap(name, h, w, c, classes, layers):
    return {
        "name": name,
        "input": {"h": h, "w": w, "c": c},
        "num_classes": classes,
        "layers": layers,
    }


def vgg16_cifar():
    plan = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
            512, 512, 512, "M", 512, 512, 512, "M"]
    layers = []
    stage, idx = 1, 1
    for item in plan:
        if item == "M":
            layers.append(pool(f"pool{stage}"))
            stage, idx = stage + 1, 1
        else:
            layers.append(conv(f"conv{stage}_{idx}", item))
            idx += 1
    layers.append(fc("fc", 10))
    return wrap("vgg16-cifar", 32, 32, 3, 10, layers)


def resnet_cifar(depth):
    n = (depth - 2) // 6
    layers = [conv("conv1", 16, tie="stage1")]
    prev = "conv1"
    for s, w in enumerate([16, 32, 64], start=1):
        tie = f"stage{s}"
        for b in range(1, n + 1):
            a_name, b_name = f"s{s}b{b}a", f"s{s}b{b}b"
            stride = 2 if (s > 1 and b == 1) else 1
            layers.append(conv(a_name, w, stride=stride, preds=[prev]))
            layers.append(conv(b_name, w, preds=[a_name], tie=tie))
            if s > 1 and b == 1:
                # Widening block: the parameter-free shortcut is not modelled,
                # the block output is just the residual branch.
                prev = b_name
            else:
                add_name = f"s{s}b{b}add"
                layers.append(add(add_name, [prev, b_name]))
                prev = add_name
    layers.append(gpool("avgpool", preds=[prev]))
    layers.append(fc("fc", 10, preds=["avgpool"]))
    return wrap(f"resnet{depth}-cifar", 32, 32, 3, 10, layers)


def resnet_imagenet_basic(depth, blocks):
    layers = [
        conv("conv1", 64, kernel=7, stride=2, tie="stage1"),
        pool("maxpool", kernel=3, stride=2, preds=["conv1"]),
    ]
    prev = "maxpool"
    for s, (w, nb) in enumerate(zip([64, 128, 256, 512], blocks), start=1):
        tie = f"stage{s}"
        for b in range(1, nb + 1):
            base = f"s{s}b{b}"
            stride = 2 if (s > 1 and b == 1) else 1
            layers.append(conv(base + "a", w, stride=stride, preds=[prev]))
            layers.append(conv(base + "b", w, preds=[base + "a"], tie=tie))
            if b == 1 and s > 1:
                layers.append(
                    conv(base + "down", w, kernel=1, stride=2, preds=[prev], tie=tie)
                )
                shortcut = base + "down"
            else:
                shortcut = prev
            layers.append(add(base + "add", [shortcut, base + "b"]))
            prev = base + "add"
    layers.append(gpool("avgpool", preds=[prev]))
    layers.append(fc("fc", 1000, preds=["avgpool"]))
    return wrap(f"resnet{depth}-imagenet", 224, 224, 3, 1000, layers)


def resnet_imagenet_bottleneck(depth, blocks):
    layers = [
        conv("conv1", 64, kernel=7, stride=2),
        pool("maxpool", kernel=3, stride=2, preds=["conv1"]),
    ]
    prev = "maxpool"
    for s, (w, nb) in enumerate(zip([64, 128, 256, 512], blocks), start=1):
        tie = f"stage{s}"
        out_w = 4 * w
        for b in range(1, nb + 1):
            base = f"s{s}b{b}"
            stride = 2 if (s > 1 and b == 1) else 1
            layers.append(conv(base + "a", w, kernel=1, preds=[prev]))
            layers.append(conv(base + "b", w, stride=stride, preds=[base + "a"]))
            layers.append(conv(base + "c", out_w, kernel=1, preds=[base + "b"], tie=tie))
            if b == 1:
                layers.append(
                    conv(base + "down", out_w, kernel=1, stride=stride,
                         preds=[prev], tie=tie)
                )
                shortcut = base + "down"
            else:
                shortcut = prev
            layers.append(add(base + "add", [shortcut, base + "c"]))
            prev = base + "add"
    layers.append(gpool("avgpool", preds=[prev]))
    layers.append(fc("fc", 1000, preds=["avgpool"]))
    return wrap(f"resnet{depth}-imagenet", 224, 224, 3, 1000, layers)


def googlenet_cifar():
    layers = [conv("pre", 192, kernel=3)]
    prev = "pre"
    cfgs = [
        ("a3", 64, 96, 128, 16, 32, 32),
        ("b3", 128, 128, 192, 32, 96, 64),
        ("maxpool3",),
        ("a4", 192, 96, 208, 16, 48, 64),
        ("b4", 160, 112, 224, 24, 64, 64),
        ("c4", 128, 128, 256, 24, 64, 64),
        ("d4", 112, 144, 288, 32, 64, 64),
        ("e4", 256, 160, 320, 32, 128, 128),
        ("maxpool4",),
        ("a5", 256, 160, 320, 32, 128, 128),
        ("b5", 384, 192, 384, 48, 128, 128),
    ]
    for cfg in cfgs:
        if len(cfg) == 1:
            layers.append(pool(cfg[0], kernel=3, stride=2, preds=[prev]))
            prev = cfg[0]
            continue
        nm, n1, n3r, n3, n5r, n5, pp = cfg
        layers.append(conv(f"{nm}_1x1", n1, kernel=1, preds=[prev]))
        layers.append(conv(f"{nm}_3x3r", n3r, kernel=1, preds=[prev]))
        layers.append(conv(f"{nm}_3x3", n3, preds=[f"{nm}_3x3r"]))
        layers.append(conv(f"{nm}_d3x3r", n5r, kernel=1, preds=[prev]))
        layers.append(conv(f"{nm}_d3x3a", n5, preds=[f"{nm}_d3x3r"]))
        layers.append(conv(f"{nm}_d3x3b", n5, preds=[f"{nm}_d3x3a"]))
        layers.append(pool(f"{nm}_pool", kernel=3, stride=1, preds=[prev]))
        layers.append(conv(f"{nm}_proj", pp, kernel=1, preds=[f"{nm}_pool"]))
        layers.append(concat(f"{nm}_cat",
                             [f"{nm}_1x1", f"{nm}_3x3", f"{nm}_d3x3b", f"{nm}_proj"]))
        prev = f"{nm}_cat"
    layers.append(gpool("avgpool", preds=[prev]))
    layers.append(fc("fc", 10, preds=["avgpool"]))
    return wrap("googlenet-cifar", 32, 32, 3, 10, layers)


def mlp_blobs():
    layers = [
        fc("fc1", 64, prunable=True),
        fc("fc2", 64, prunable=True),
        fc("fc3", 64, prunable=True),
        fc("head", 4),
    ]
    return wrap("mlp-blobs", 1, 1, 8, 4, layers)


def conv3_tiny():
    layers = [
        conv("conv1", 8),
        pool("pool1"),
        conv("conv2", 16),
        pool("pool2"),
        conv("conv3", 32),
        gpool("avgpool"),
        fc("fc", 4),
    ]
    return wrap("conv3-tiny", 16, 16, 1, 4, layers)


def main() -> int:
    docs = [
        vgg16_cifar(),
        googlenet_cifar(),
        resnet_cifar(56),
        resnet_cifar(110),
        resnet_imagenet_basic(18, [2, 2, 2, 2]),
        resnet_imagenet_basic(34, [3, 4, 6, 3]),
        resnet_imagenet_bottleneck(50, [3, 4, 6, 3]),
        resnet_imagenet_bottleneck(101, [3, 4, 23, 3]),
        resnet_imagenet_bottleneck(152, [3, 8, 36, 3]),
        mlp_blobs(),
        conv3_tiny(),
    ]
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {path.relative_to(ROOT)}")

    sys.path.insert(0, str(ROOT / "src"))
    from beeprune import arch

    ok = True
    print(f"\n{'descriptor':<20} {'channels':>9} {'flops':>15} {'params':>12}  check")
    for doc in docs:
        spec = arch.load_architecture(OUT / f"{doc['name']}.json")
        rep = arch.cost_report(spec)
        line = f"{spec.name:<20} {rep.channels:>9} {rep.flops:>15} {rep.params:>12}"
        ref = REFERENCE.get(spec.name)
        if ref is None:
            print(f"{line}  (no reference)")
            continue
        ch_ref, fl_ref, pa_ref = ref
        checks = [
            rep.channels == ch_ref,
            abs(rep.flops - fl_ref) / fl_ref <= 0.01,
            abs(rep.params - pa_ref) / pa_ref <= 0.01,
        ]
        fl_dev = 100 * (rep.flops - fl_ref) / fl_ref
        pa_dev = 100 * (rep.params - pa_ref) / pa_ref
        verdict = "ok" if all(checks) else "MISMATCH"
        ok = ok and all(checks)
        print(f"{line}  {verdict} (flops {fl_dev:+.3f}%, params {pa_dev:+.3f}%)")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
