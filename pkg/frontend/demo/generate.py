"""Regenerate the bundled demo image.

Writes three consistent artifacts next to this script: demo.png (what
the browser uploads), demo.rgba (the same pixels as raw RGBA bytes so
node tests can composite without a PNG decoder), and demo.json (dims).

Run from the repo root after `pip install -e .`:

    python3 frontend/demo/generate.py
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from tokenforge.trainer import SyntheticCorpusSpec, generate_synthetic_corpus

HERE = Path(__file__).resolve().parent

spec = SyntheticCorpusSpec(image_side=64, glyphs_per_image=3, n_records=1, seed=7)
record = generate_synthetic_corpus(spec)[0]
rgb = np.asarray(record.image, dtype=np.uint8)

Image.fromarray(rgb).save(HERE / "demo.png", format="PNG")

h, w = rgb.shape[:2]
rgba = np.concatenate([rgb, np.full((h, w, 1), 255, dtype=np.uint8)], axis=2)
(HERE / "demo.rgba").write_bytes(rgba.tobytes())
(HERE / "demo.json").write_text(json.dumps({"width": w, "height": h}) + "\n")

print(HERE / "demo.png", f"{w}x{h}")
