"""Distortion-sensitivity-weighted cut-and-mix augmentation toolkit.

Submodules: core (types, raster and manifest I/O), distortions (the
synthetic degradation bank), sensitivity (DSM generation), mixing (the
augmentation itself), losses, metrics, training (tiny encoder, probe),
synth (procedural references), pipeline (on-disk runs), cli.
"""

from .core import (
    ClassSpace,
    ImageRgb,
    SampleManifest,
    SoftLabel,
    crop_to_multiple,
    load_image,
    quantize8,
    read_manifest,
    save_image,
    write_manifest,
)
from .distortions import (
    apply_distortion,
    count_degradation_space,
    default_class_space,
    list_distortions,
)
from .losses import FeatureStack, LossWeights, loss_ds, loss_kd, loss_qc, loss_quality, loss_score
from .metrics import plcc, srcc
from .mixing import RegionMap, assign_lambdas, dsmix_sample, mix_images, sample_patch_rect
from .sensitivity import (
    DsmProvider,
    fit_tiny_predictor,
    gradient_dsm,
    gt_dsm,
    load_dsm,
    predict_dsm,
    save_dsm,
    upsample_bilinear,
)
from .seeds import derive_rng, derive_seed
from .training import (
    ProbeHead,
    TinyNet,
    five_patch_predict,
    linear_probe,
    load_weight_bundle,
    qep_train,
    save_weight_bundle,
)

__version__ = "0.1.0"
