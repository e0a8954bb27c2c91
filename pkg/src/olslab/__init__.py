"""olslab: a desk-scale lab for online (class-level) label smoothing.

Train small classifiers under hard labels, uniform label smoothing,
hand-designed soft targets, bootstrap blends, or online soft labels
accumulated from correct predictions; then probe noisy-label robustness,
calibration, adversarial robustness, and epoch ensembling.
"""

from .attacks import AttackConfig, fgsm_attack, pgd_attack, robust_error
from .data import (Dataset, NoiseSpec, batches, inject_symmetric_noise,
                   load_cifar10, make_synthetic)
from .errors import (CheckpointFormatError, CheckpointVersionError, ConfigError,
                     DataFormatError, DivergenceError, ShapeMismatchError)
from .evaluation import (ensemble_error, ensemble_predict,
                         expected_calibration_error, kl_to_reference,
                         load_reference_distributions)
from .labels import (PredictionPool, SoftLabelBank, StrategySpec, TargetEngine,
                     bank_init, bootstrap_target, combined_loss, hard_target,
                     ols_single_target, soft_ce_loss, tfkd_target,
                     uniform_ls_target)
from .models import (Checkpoint, ModelSpec, build_model, checkpoint_from,
                     load_checkpoint, network_from_checkpoint, save_checkpoint)
from .nn import (Network, Parameter, forward_backward, input_gradient, matmul,
                 one_hot, softmax)
from .optim import SgdConfig, learning_rate_at, sgd_step
from .trainer import (MetricsRecord, Seeds, TrainConfig, TrainResult, evaluate,
                      fit, metrics_csv_text, write_metrics_csv)

__version__ = "0.1.0"
