#!/usr/bin/env python3
"""Writes torchvision's ImageNet ResNet-50 weights as a GMATENS1 archive.

Usage: export_resnet50.py OUT.gmat
Then pass --backbone resnet50 --backbone-weights OUT.gmat to the gma CLI.
Needs torch and torchvision.
"""

import json
import struct
import sys

import numpy as np
import torchvision


def main() -> None:
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V1
    state = torchvision.models.resnet50(weights=weights).state_dict()
    tensors = []
    for name, value in state.items():
        if name.startswith("fc.") or name.endswith("num_batches_tracked"):
            continue
        tensors.append((name, value.detach().cpu().numpy().astype("<f8")))
    header = {
        "metadata": {"source": "torchvision resnet50 " + str(weights)},
        "tensors": [
            {"name": n, "shape": list(a.shape), "trainable": "running_" not in n}
            for n, a in tensors
        ],
    }
    text = json.dumps(header).encode()
    with open(sys.argv[1], "wb") as out:
        out.write(b"GMATENS1")
        out.write(struct.pack("<Q", len(text)))
        out.write(text)
        for _, a in tensors:
            out.write(np.ascontiguousarray(a).tobytes())


if __name__ == "__main__":
    main()
