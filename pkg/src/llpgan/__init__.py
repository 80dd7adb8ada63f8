"""Learning from label proportions: adversarial training, a proportion-loss
baseline, and an exact tabular oracle for the underlying minimax theory."""

from .bags import (
    Bag,
    BagDataset,
    LabeledDataset,
    ProportionVector,
    compute_proportions,
    load_manifest,
    partition_into_bags,
    persist_manifest,
    select_binary_subset,
)
from .equilibria import (
    EquilibriumValue,
    TabularDiscriminator,
    TabularWorld,
    classifier_posterior_and_weights,
    equilibrium_value,
    load_world,
    numeric_best_response,
    numeric_generator_minimizer,
    objective_value,
    optimal_discriminator_closed_form,
    optimal_generator,
    random_world,
    save_world,
)
from .estimators import DLLPClassifier, LLPGanClassifier
from .harness import ExperimentReport, error_rate, run_experiment, sweep, timing_profile
from .losses import (
    LossValue,
    bag_posterior_mean,
    dllp_total,
    exact_proportion_term,
    feature_matching_loss,
    instance_entropy,
    llp_gan_disc_loss,
    normalize_posterior,
    proportion_ce,
)
from .networks import (
    ArchitectureSpec,
    DiscriminatorOutput,
    LayerSpec,
    build_discriminator,
    build_generator,
    discriminator_forward,
    load_architecture,
    overparam_softmax,
)
from .training import (
    TrainConfig,
    TrainState,
    checkpoint_restore,
    checkpoint_save,
    predict_labels,
    predict_posteriors,
    train_dllp,
    train_llp_gan,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
