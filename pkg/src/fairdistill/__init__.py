"""Fairness-aware matching-based dataset distillation at desk scale."""

from .autodiff import (Tensor, backward, finite_diff_check, forward_op, grad,
                       sgd_update)
from .datasets import (BiasSpec, GroupPartition, LabeledDataset, apply_color_bias,
                       apply_grayscale_bias, build_balanced_test, corrupt_group_labels,
                       default_palette, generate_glyph_dataset, measured_bias_ratio,
                       partition_groups)
from .distill import DistillConfig, distill, init_synthetic
from .fairness import (ConditionalAccuracy, EvalConfig, FairnessReport,
                       conditional_accuracy, deo, evaluate, train_classifier)
from .matching import (MatchSpec, SyntheticSet, distance, dm_loss, gm_loss,
                       gradient_signal)
from .models import (Arch, NetworkParams, build_arch, embed, init_network, logits)
from .oracle import (FixedPointInstance, jensen_check, numerical_optimum,
                     predicted_optimum, run_verification)

__version__ = "0.1.0"
