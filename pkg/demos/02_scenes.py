"""Generate a few road scenes and print their label maps as text.

    python demos/02_scenes.py
"""

import numpy as np

from auxseg.data import CLASS_NAMES, gen_scene, make_splits

glyph = ".=#C"  # sky, road, building, car
scene = gen_scene(seed=2026, height=16, width=32)
for row in scene.labels:
    print("".join(glyph[c] for c in row))
print("legend:", ", ".join(f"{g}={n}" for g, n in zip(glyph, CLASS_NAMES)))

print("\ndepth by class (mean nearness, 0 = horizon):")
for c, name in enumerate(CLASS_NAMES):
    mask = scene.labels == c
    if mask.any():
        print(f"  {name:9s} {scene.depth[mask].mean():.3f}")

train, val = make_splits(7, 64, 16, 32, 48)
freq = np.bincount(train.labels.ravel(), minlength=4) / train.labels.size
print("\npixel share over 64 training scenes:",
      ", ".join(f"{n} {f:.1%}" for n, f in zip(CLASS_NAMES, freq)))
