"""Confidence-guided VAE data augmentation for semi-supervised image classification.

Pipeline: train a supervised reference model, score a held-out reference split
with softmax confidences, select the samples at or below the lower outlier
boundary Q1 - 1.5*IQR, fine-tune a VAE on them (padded with labeled samples,
optionally from a pretrained encoder), emit labeled reconstructions and
unlabeled prior samples, and retrain with a MixMatch-style SSL loop,
optionally iterating with the SSL model as the new reference.
"""

__version__ = "0.1.0"

from .confidence import compute_threshold, filter_low_confidence, select_low_confidence, softmax, true_class_confidences
from .datasets import (
    ImageSample,
    LabeledSet,
    SplitSpec,
    UnlabeledSet,
    augment_stochastic,
    generate_toy_dataset,
    load_benchmark,
    split_dataset,
)
from .mixmatch import MixMatchConfig, guess_labels, mixmatch_batch, mixmatch_loss, mixup, sharpen, train_mixmatch
from .models import (
    ClassifierSpec,
    VAESpec,
    build_classifier,
    build_vae,
    decode,
    encode,
    forward_logits,
    load_classifier,
    load_vae,
    save_checkpoint,
)
from .pipeline import run_ablation, run_iteration, run_pipeline
from .supervised import TrainConfig, evaluate, train_supervised
from .vae_augment import (
    VAETrainConfig,
    assemble_vae_train_set,
    elbo_loss,
    generate_reconstructions,
    generate_synthetic,
    pretrain_encoder,
    train_vae,
)

__all__ = [name for name in dir() if not name.startswith("_")]
