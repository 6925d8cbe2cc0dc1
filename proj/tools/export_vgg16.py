#!/usr/bin/env python3
"""Convert torchvision VGG16 weights into an mmfuse tensor archive.

The archive holds conv1_1 ... conv4_3 as float64 tensors named
"<conv>.weight" (cout, cin, 3, 3) and "<conv>.bias" (1, cout, 1, 1), which is
what PerceptualExtractor::load reads. Point loss.extractor_weights at the
output file to train with the pretrained extractor.

Usage:
  export_vgg16.py OUT.mmf                   # torchvision ImageNet weights
  export_vgg16.py OUT.mmf --state-dict W.pth
"""

import argparse
import json
import os
import struct

import numpy as np

MAGIC = b"MMFARCH1"
STAGE_DEPTHS = (2, 2, 3, 3)
# Positions of the convolutions inside torchvision's vgg16().features.
FEATURE_INDICES = (0, 2, 5, 7, 10, 12, 14, 17, 19, 21)


def conv_names():
    return [f"conv{s + 1}_{i + 1}" for s, depth in enumerate(STAGE_DEPTHS) for i in range(depth)]


def collect(state_dict):
    tensors = []
    for name, index in zip(conv_names(), FEATURE_INDICES):
        weight = np.asarray(state_dict[f"features.{index}.weight"], dtype="<f8")
        bias = np.asarray(state_dict[f"features.{index}.bias"], dtype="<f8")
        tensors.append((f"{name}.weight", weight))
        tensors.append((f"{name}.bias", bias.reshape(1, -1, 1, 1)))
    return tensors


def write_archive(path, tensors, meta):
    entries = []
    offset = 0
    for name, array in tensors:
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size * 8
    header = json.dumps({"meta": meta, "tensors": entries}).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<Q", len(header)))
        out.write(header)
        for _, array in tensors:
            out.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_state_dict(path):
    import torch

    if path:
        return {k: v.numpy() for k, v in torch.load(path, map_location="cpu").items()}
    from torchvision.models import VGG16_Weights, vgg16

    return {k: v.numpy() for k, v in vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict().items()}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("out", help="output archive path")
    parser.add_argument("--state-dict", help="torch state dict of a torchvision vgg16 (default: download)")
    args = parser.parse_args()
    tensors = collect(load_state_dict(args.state_dict))
    write_archive(args.out, tensors, {"kind": "vgg16-extractor", "source": args.state_dict or "torchvision"})
    print(f"wrote {len(tensors) // 2} convolutions to {args.out}")


if __name__ == "__main__":
    main()
