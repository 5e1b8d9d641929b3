"""Variational Bayesian neural networks via fine-tuning of point estimates.

The package trains a deterministic network, wraps its weights in a
variational posterior (mean-field Gaussian or parameter-sharing ensemble),
and fine-tunes the posterior with low-variance per-exemplar weight sampling.
Predictions average Monte Carlo forward passes; mutual-information
uncertainty supports out-of-distribution detection and can be calibrated
during training with a margin regularizer on perturbed data.
"""

from .tensor import (
    Graph,
    GraphError,
    NonFiniteError,
    Tensor,
    backward,
    mac_count,
    reset_mac_count,
)
from .variational import (
    InitSpec,
    IsotropicPrior,
    MFGPosterior,
    PSEPosterior,
    edit_gradients_mfg,
    edit_gradients_pse,
    init_mfg_from_map,
    init_pse_from_map,
    kl_mfg,
    sample_mfg,
    sample_mfg_exemplar,
    sample_pse,
    sample_pse_exemplar,
)
from .model import BayesModel, Layer, build_convnet, build_mlp, build_model
from .objectives import (
    PredictionSamples,
    RegularizerConfig,
    combined_objective,
    ell_exemplar,
    ell_standard,
    margin_uncertainty_loss,
    mutual_information,
    nll_loss,
    posterior_predictive,
    predictive_entropy,
)
from .datasets import DatasetSplit, OODSpec, gen_ood, make_blobs, make_pattern_images, make_two_moons
from .checkpoint import Checkpoint
from .training import (
    NumericalError,
    SGD,
    TrainConfig,
    bayes_finetune,
    deep_ensemble,
    ensemble_predict,
    init_checkpoint,
    laplace_diag,
    mc_dropout_predict,
    pretrain_map,
)
from .evaluation import (
    EvalReport,
    ToyConvSpec,
    average_precision,
    ece,
    ensemble_size_curve,
    evaluate_model,
    gradient_variance_study,
    posterior_stats_export,
    rejection_buckets,
    top1_accuracy,
)
from .config import ConfigError, RunConfig, load_config, save_config
from .estimators import (
    DeepEnsembleClassifier,
    LaplaceClassifier,
    MCDropoutClassifier,
    MapClassifier,
    VariationalClassifier,
)

__version__ = "0.1.0"
