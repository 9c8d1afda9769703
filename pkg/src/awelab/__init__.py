"""Acoustic word embeddings with joint audio-text contrastive training.

The package is organized as a small processing chain:

frontend    log-mel features, manifests, binary feature files
synthdata   deterministic synthetic word corpus (stands in for real speech)
encoders    audio/text encoders with exact hand-derived gradients
losses      joint contrastive objective plus classic baseline losses
training    AdamW, one-cycle schedule, the epoch loop
evaluation  word-discrimination AP, EER, windowed spoken-term search
gradcheck   finite-difference verification of every gradient
cli         command-line drivers tying everything together
"""

from awelab.frontend import (
    FeatureSequence,
    ManifestRecord,
    MelConfig,
    WaveForm,
    compute_logmel,
    duration_filter,
    read_features,
    read_manifest,
    read_wav,
    write_features,
    write_manifest,
)
from awelab.synthdata import SynthConfig, class_separability, gen_corpus, phonemes_for_word
from awelab.encoders import (
    EmbeddingBatch,
    EncoderConfig,
    encode_audio,
    encode_text,
    encoder_backward,
    init_params,
    load_params,
    save_params,
)
from awelab.losses import (
    DwdBatch,
    LossWeights,
    SimilarityMatrix,
    cae_recon,
    clap_loss,
    clap_loss_multi,
    dwd_centroids,
    dwd_loss,
    dwd_similarities,
    multiview_hinge,
    ntxent,
    siamese_hinge,
    similarity_matrix,
    total_loss,
)
from awelab.training import (
    OptState,
    TrainConfig,
    adamw_step,
    clip_global_norm,
    onecycle_lr,
    sample_batch,
    train,
)
from awelab.evaluation import (
    EvalReport,
    Trial,
    TrialSet,
    average_precision,
    build_cross_trials,
    build_wd_trials,
    equal_error_rate,
    eval_kws,
    eval_std,
    eval_wd,
    iv_oov_split,
    load_embeddings,
    save_embeddings,
    score_histogram,
    score_trials,
    segment_windows,
    std_score,
)
from awelab.gradcheck import run_gradient_suite

__version__ = "0.1.0"
