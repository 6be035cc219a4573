"""Band-cropped segmentation laboratory.

Generates synthetic scans whose target disc lives inside a known horizontal
band, trains a small U-Net under BCE or Tversky losses at several input
croppings, and reports pooled PR/ROC metrics plus centroid localization per
crop so the effect of restricting the input to the band can be measured.
"""

__version__ = "0.1.0"

from .autodiff import Tensor
from .losses import ConfusionCounts, LossSpec, bce_loss, dsc, tversky_index, tversky_loss
from .unet import Model, UNetConfig, build_unet, desk_config, forward, full_scale_config
from .optim import Adam, TrainConfig, TrainResult, TrainingError, train
from .synthdata import (CropSpec, GenParams, SegSample, crop_band, generate_corpus,
                        generate_sample, load_dataset, preprocess, save_dataset,
                        split_by_patient)
from .evaluation import (EvalSummary, PrCurve, average_precision, centroid_distance,
                         evaluate, evaluate_model, hard_confusion, largest_component,
                         optimal_cutoff, pr_curve, render_overlay, roc_auc)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .experiment import (ConfigError, ExperimentConfig, ExperimentReport,
                         build_experiment_config, run_ablation)
