"""Hybrid deep/classical skin-lesion segmentation and classification.

Segmentation fuses a UNet with a colour Gaussian-mixture segmenter through a
lesion-area switch; classification concatenates CNN embeddings with 200
handcrafted features and feeds them to a one-vs-one SVM.
"""
from .features import REGISTRY, FeatureVector, border_ring, extract_all, glcm_matrix
from .fusion import FusionConfig, lesion_area, select_mask
from .gmm import GmmParams, TissueModel, fit_em, fit_tissue_model, log_density, morph_cleanup, segment_pixels
from .metrics import CLASS_LABELS, balanced_accuracy, confusion_matrix, jaccard
from .svm import MulticlassSvm, Standardizer, concat_hybrid, fit_multiclass, smo_train
from .unet import build_unet_schedule, extract_cnn_features, forward_segment, load_weights

__version__ = "0.1.0"
