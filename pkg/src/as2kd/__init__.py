"""Cross-lingual knowledge distillation tooling for answer sentence selection."""

from .core import (
    AS2Dataset,
    AS2Example,
    Candidate,
    EvalReport,
    PairRecord,
    Question,
    average_precision,
    evaluate_dataset,
    flatten_pairs,
    pair_id_for,
    precision_at_1,
    reciprocal_rank,
    select_answer,
)
from .errors import AS2KDError, ConfigError, DataError, NumericError, ProviderError, SchemaError
from .estimators import CLKDRanker, FinetuneRanker
from .losses import KDConfig, cross_entropy, kd_loss, kd_loss_grad, kl_divergence, softmax_temp
from .student import StudentConfig, StudentParams, featurize, forward, lr_at, adamw_step
from .teacher import TeacherScore, TeacherStore, load_scores, save_scores, teacher_logits
from .training import (
    RunReport,
    TrainConfig,
    load_checkpoint,
    multilingual_mix,
    save_checkpoint,
    seeded_runs,
    select_temperature,
    sweep_temperature,
    train_clkd,
    train_finetune,
)
from .translate import (
    IdentityProvider,
    DictionaryProvider,
    MTProvider,
    ParallelPair,
    PermutationProvider,
    build_parallel_dataset,
    mt_teacher_baseline,
    translate_batch,
)

__version__ = "0.1.0"
