"""
Segmenting a synthetic lesion
=============================

A dark blob on noisy skin goes through both segmenters. The random UNet
predicts almost nothing, so the area switch hands the image to the
colour mixture model.
"""

import numpy as np

from lesionforge import unet
from lesionforge.fusion import lesion_area, select_mask
from lesionforge.gmm import fit_tissue_model, morph_cleanup, segment_pixels
from lesionforge.metrics import jaccard
from lesionforge.synthetic import blob_image

rng = np.random.default_rng(0)
image, truth = blob_image(rng, "MEL", size=(224, 224))
print("lesion pixels in the truth mask:", truth.sum())

# UNet with random weights; the head bias encodes a 1% lesion prior
schedule = unet.build_unet_schedule(32)
net = unet.bind_weights(schedule, unet.init_random_weights(schedule, seed=0))
res = unet.forward_segment(image, net)
print("UNet layers run:", len(res.trace), " predicted area:", lesion_area(res.mask))

# Otsu split on luma seeds a lesion model and a skin model, 3 components each
model = fit_tissue_model(image, n_components=3, seed=0)
print("prior P(lesion) from the Otsu seed: %.3f" % model.p_lesion)
print("lesion component means:\n", np.round(model.lesion.means, 3))

raw = segment_pixels(image, model)
clean = morph_cleanup(raw)
print("raw GMM mask %d px, after hole filling + largest blob %d px" % (raw.sum(), clean.sum()))

mask, tag = select_mask(res.mask, clean)
print("fusion picked:", tag)
print("Jaccard against truth: %.3f" % jaccard(mask, truth))
