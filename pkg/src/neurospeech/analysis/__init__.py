"""Error metrics, alignment analysis and representation analysis."""

from .alignment import (
    NULL,
    AlignmentTrace,
    ConfusionMatrix,
    align_sequences,
    confusion_matrix,
    corpus_wer,
    levenshtein,
    normalize_text,
    wer,
)
from .interpret import (
    PCAResult,
    lda_axis,
    pca_project,
    rdm,
    rsa_score,
    segment_sizes,
    segmented_pool,
    word_distance,
    word_embeddings,
)
from .report import scatter_svg, write_confusion_csv, write_matrix_csv, write_metrics_csv, write_projection_csv

__all__ = [
    "NULL",
    "AlignmentTrace",
    "ConfusionMatrix",
    "align_sequences",
    "confusion_matrix",
    "corpus_wer",
    "levenshtein",
    "normalize_text",
    "wer",
    "PCAResult",
    "lda_axis",
    "pca_project",
    "rdm",
    "rsa_score",
    "segment_sizes",
    "segmented_pool",
    "word_distance",
    "word_embeddings",
    "scatter_svg",
    "write_confusion_csv",
    "write_matrix_csv",
    "write_metrics_csv",
    "write_projection_csv",
]
