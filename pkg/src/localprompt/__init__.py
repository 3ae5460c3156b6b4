"""Few-shot out-of-distribution detection over precomputed vision-language
embeddings: frozen global prompts guide crop selection, learnable local and
negative prompts are trained with top-k contrastive losses, and the
MCM / GL-MCM / Regional-MCM score family drives detection and evaluation.
"""

__version__ = "0.1.0"

from .augment import AugmentedBatchItem, select_augmented
from .bank import (
    GradientBank,
    PromptBank,
    init_bank,
    load_bank,
    save_bank,
    swap_global_prompts,
)
from .errors import LocalPromptError
from .estimator import LocalPromptDetector
from .evaluation import (
    EvalReport,
    auroc,
    density_hist,
    evaluate_scores,
    fpr_at_tpr,
    id_accuracy,
    sweep,
)
from .losses import (
    LossBreakdown,
    class_evidence,
    grad_total,
    loss_and_grad,
    loss_neg,
    loss_pos,
    loss_reg,
    loss_total,
)
from .numerics import cosine_sim, softmax_T, topk_mean, topk_sum, topk_support
from .scoring import (
    ScoreKind,
    ScoredSample,
    classify_id,
    discriminate,
    score_glmcm,
    score_mcm,
    score_rmcm,
    score_store,
)
from .store import (
    CropCandidateSet,
    DatasetSplit,
    FeatureRecord,
    FeatureStore,
    few_shot_subsample,
    read_store,
    write_store,
)
from .synthgen import SynthSpec, generate
from .trainer import TrainConfig, TrainLog, cosine_lr, run_training, train
