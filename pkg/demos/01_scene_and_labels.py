"""
Synthetic road scenes and patch importance labels
=================================================

Render one scene, label its objects with the rule annotator and project the
labels onto the 8x8 patch grid. Writes the scene and a level map to ./out.
"""
from pathlib import Path

import numpy as np

from saoosc.importance import importance_weights, object_to_patch, rule_annotate
from saoosc.scene import SceneSpec, generate_scene, tokenize, write_pgm, write_ppm

out = Path("out")
out.mkdir(exist_ok=True)

spec = SceneSpec()
image, objects = generate_scene(seed=3, spec=spec)
print("image", image.shape, image.dtype)
for o in objects:
    print(f"  object {o.object_id}: {o.class_tag:6s} box={o.box} dist={o.ego_distance:.1f} in_path={o.in_path}")

# object-level labels from the rules, then max-overlap onto patches
labels = rule_annotate(objects, spec)
print("object levels", {lab.object_id: lab.level for lab in labels})
grid = tokenize(image, 8)
levels = object_to_patch(objects, labels, grid)
print("patch levels (row-major):")
print(levels.reshape(grid.rows, grid.cols))

# loss weights double per level and sum to one
w = importance_weights(levels)
print("weight sum", w.sum(), " level-3 / background weight", w[levels == 3][:1] / w[levels == 0][:1])

write_ppm(out / "scene.ppm", image)
level_map = np.kron(levels.reshape(grid.rows, grid.cols), np.ones((8, 8))) * 85
write_pgm(out / "levels.pgm", level_map.astype(np.uint8))
print("wrote", out / "scene.ppm", "and", out / "levels.pgm")
