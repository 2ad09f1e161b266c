"""Precompute ResNet-101 conv4 features for the pretrained-adapter backbone.

Writes <root>/<type>/features/<chart_id>.f32: raw little-endian float32,
1024 x 14 x 14, channel-major, for every chart in the manifest.

    python3 tools/extract_features.py --root data --type pie [--weights resnet101.pth]

Without --weights the torchvision ImageNet weights are used (downloaded by
torchvision if not cached). --random-init skips pretrained weights entirely,
which is only useful for smoke-testing the pipeline.
"""

import argparse
import json
import pathlib

import numpy as np
import torch
import torchvision
from PIL import Image

MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def conv4(weights, random_init):
    if random_init:
        net = torchvision.models.resnet101(weights=None)
    elif weights:
        net = torchvision.models.resnet101(weights=None)
        net.load_state_dict(torch.load(weights, map_location="cpu"))
    else:
        net = torchvision.models.resnet101(weights=torchvision.models.ResNet101_Weights.IMAGENET1K_V1)
    body = torch.nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3)
    return body.eval()


def load(path, resolution):
    image = Image.open(path).convert("RGB").resize((resolution, resolution), Image.BOX)
    x = (np.asarray(image, dtype=np.float32) / 255.0 - MEAN) / STD
    return torch.from_numpy(x.transpose(2, 0, 1).copy())


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--root", required=True, help="dataset root (dataset.root)")
    p.add_argument("--type", required=True, choices=["bar", "pie"])
    p.add_argument("--weights", help="state dict for torchvision resnet101")
    p.add_argument("--random-init", action="store_true")
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--batch", type=int, default=16)
    args = p.parse_args()

    root = pathlib.Path(args.root)
    type_dir = root / args.type
    out_dir = type_dir / "features"
    out_dir.mkdir(exist_ok=True)
    records = []
    with open(type_dir / "manifest.jsonl") as f:
        next(f)  # header line
        for line in f:
            r = json.loads(line)
            records.append((r["chart_id"], root / r["image_path"]))

    body = conv4(args.weights, args.random_init)
    torch.set_grad_enabled(False)
    for i in range(0, len(records), args.batch):
        chunk = records[i : i + args.batch]
        batch = torch.stack([load(path, args.resolution) for _, path in chunk])
        feats = body(batch).numpy().astype("<f4")
        for (chart_id, _), feat in zip(chunk, feats):
            feat.tofile(out_dir / f"{chart_id}.f32")
        print(f"{min(i + args.batch, len(records))}/{len(records)}", flush=True)


if __name__ == "__main__":
    main()
