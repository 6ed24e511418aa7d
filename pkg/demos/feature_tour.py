"""
The 200 handcrafted descriptors
===============================

Walks through the feature families on two shapes: a round blob and a
lopsided one.
"""

import numpy as np

from lesionforge.features import REGISTRY, extract_all
from lesionforge.synthetic import blob_image

families = {}
for f in REGISTRY:
    families.setdefault(f.family, []).append(f.name)
for fam, names in families.items():
    print("%-10s %3d  e.g. %s" % (fam, len(names), names[0]))

rng = np.random.default_rng(1)
image, mask = blob_image(rng, "NV", size=(160, 160))

# a lopsided copy: glue a square tab onto one side
tabbed = mask.copy()
ys, xs = np.nonzero(mask)
tabbed[ys.mean().astype(int) - 6:ys.mean().astype(int) + 6, xs.max():xs.max() + 14] = 1

round_f = extract_all(image, mask).as_dict()
tab_f = extract_all(image, tabbed).as_dict()

for name in ("shape_area", "shape_compactness", "shape_solidity",
             "asymmetry_shape_major", "asymmetry_shape_minor", "asymmetry_convexity"):
    print("%-24s round %9.4f   tabbed %9.4f" % (name, round_f[name], tab_f[name]))

# colour statistics inside the lesion vs the skin ring around it
for c in "rgb":
    print("mean %s  lesion %.3f  ring %.3f" % (c, round_f["lesion_%s_mean" % c], round_f["ring_%s_mean" % c]))
