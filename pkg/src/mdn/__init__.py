"""Deep-encoder / mini-decoder transformer toolkit.

A desk-scale system for studying decoder-side inference cost: tunable BPE
segmentation, a transformer whose decoder shrinks knob by knob (depth,
heads, FFN, output-projection rank), weight-distillation training, beam
search with incremental caches, and a profiling harness that attributes
wall time to the components those knobs control.
"""

from .bleu import bleu, bleu_components
from .bpe import (MergeTable, apply_bpe, encode_corpus, learn_bpe,
                  sweep_merge_ops)
from .checkpoint import (Checkpoint, checkpoint_average, load_checkpoint,
                         load_model, save_checkpoint, save_model)
from .distill import (DistillConfig, init_student_from_teacher, kd_loss,
                      round_robin_mapping, select_head_init,
                      svd_factorize_output)
from .infer import CompiledModel, Hypothesis, length_normalize, translate_batch
from .model import (FactorizedProjection, Model, ModelConfig, ParamCounts,
                    attention, count_params, match_encoder_depth, output_logits)
from .optim import Adam, AdamConfig, AdamState, adam_step
from .tensor import Tensor, no_grad
from .train import TrainConfig, TrainResult, label_smoothed_ce, train_loop
from .bench import (ProfileReport, SpeedupTable, ablation_report,
                    profile_translation, sensitivity_sweep)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdamConfig", "AdamState", "adam_step",
    "Checkpoint", "checkpoint_average", "load_checkpoint", "load_model",
    "save_checkpoint", "save_model",
    "CompiledModel", "Hypothesis", "length_normalize", "translate_batch",
    "DistillConfig", "init_student_from_teacher", "kd_loss",
    "round_robin_mapping", "select_head_init", "svd_factorize_output",
    "FactorizedProjection", "Model", "ModelConfig", "ParamCounts",
    "attention", "count_params", "match_encoder_depth", "output_logits",
    "MergeTable", "apply_bpe", "encode_corpus", "learn_bpe", "sweep_merge_ops",
    "ProfileReport", "SpeedupTable", "ablation_report", "profile_translation",
    "sensitivity_sweep",
    "Tensor", "no_grad",
    "TrainConfig", "TrainResult", "label_smoothed_ce", "train_loop",
    "bleu", "bleu_components",
    "__version__",
]
