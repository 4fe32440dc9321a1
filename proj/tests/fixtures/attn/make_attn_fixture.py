"""Writes sample.attn (two 4x4 layers) and expected.json with region masses
computed here with numpy, independently of the C++ reader. Also writes a
one-record analysis set: image, manifest, detections, and normal/ masked/
grid directories (masked swaps the two layers' weights).

Geometry: image_side 56, patch_side 14, so patch centres in a 112x112 original
sit at 14, 42, 70, 98 on each axis.
"""
import json
import os
import struct

import cv2
import numpy as np

header = {
    "model_ref": "llava-1.5-7b-hf",
    "prompt_text": "Describe the emotion.",
    "image_side": 56,
    "patch_side": 14,
    "grid_side": 4,
    "layer_indices": [10, 20],
    "dtype": "f32",
    "note": "kept verbatim",
}
grids = [np.arange(1, 17, dtype=np.float32).reshape(4, 4), np.ones((4, 4), dtype=np.float32)]



def write_attn(path, gs):
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode())
        for g in gs:
            f.write(struct.pack("<16f", *g.flatten()))


write_attn("sample.attn", grids)
os.makedirs("normal", exist_ok=True)
os.makedirs("masked", exist_ok=True)
write_attn("normal/s1.attn", grids)
write_attn("masked/s1.attn", grids[::-1])

W = H = 112
face = (0, 0, 56, 56)    # x, y, w, h
body = (0, 0, 112, 84)
centres = (np.arange(4) + 0.5) * 14 * W / 56


def inside(r, cx, cy):
    x, y, w, h = r
    return x <= cx < x + w and y <= cy < y + h


cv2.imwrite("s1.png", np.full((H, W, 3), 128, np.uint8))
with open("manifest.jsonl", "w") as f:
    f.write(json.dumps({"record_id": "s1", "image_ref": "s1.png", "gold_labels": ["Fear"],
                        "person_box": dict(zip("xywh", body))}) + "\n")
with open("detections.jsonl", "w") as f:
    f.write(json.dumps({"image_id": "s1", "faces": [dict(zip("xywh", face), confidence=0.9)]}) + "\n")

expected = []
for layer, g in zip(header["layer_indices"], grids):
    tot = float(g.sum())
    acc = {"face": 0.0, "body": 0.0, "background": 0.0}
    for row in range(4):
        for col in range(4):
            cx, cy = centres[col], centres[row]
            key = "face" if inside(face, cx, cy) else "body" if inside(body, cx, cy) else "background"
            acc[key] += float(g[row, col])
    expected.append({"layer": layer, **{k: v / tot for k, v in acc.items()}})

with open("expected.json", "w") as f:
    json.dump({"image_w": W, "image_h": H, "face": face, "body": body, "layers": expected}, f, indent=1)
print(expected)
