"""Comparing CTC training objectives on synthetic sequence recognition.

Four objectives over one residual self-attention encoder: a single
final-layer CTC loss, self-conditioned interior losses sharing one
vocabulary, hierarchical interior losses over nested subword
vocabularies, and parallel per-level losses read off the final layer.
"""

from .ctc import best_path_decode, brute_force_ctc, collapse, ctc_loss
from .encoder import EncoderConfig, EncoderOutput, encode, init_params, tap_positions
from .evaluate import edit_distance, edit_distance_wer, evaluate_split
from .objectives import (ObjectiveReport, ctc_objective, hc_ctc_objective,
                         para_ctc_objective, sc_ctc_objective)
from .subword import (HierTargets, SubwordVocab, build_hierarchy, detokenize,
                      segment, train_bpe)
from .synthetic import SyntheticTask, generate_synthetic_corpus
from .tensor import Graph, Tensor, backward, finite_diff_check, using_dtype
from .train import TrainingConfig, train

__all__ = [
    "best_path_decode", "brute_force_ctc", "collapse", "ctc_loss",
    "EncoderConfig", "EncoderOutput", "encode", "init_params", "tap_positions",
    "edit_distance", "edit_distance_wer", "evaluate_split",
    "ObjectiveReport", "ctc_objective", "hc_ctc_objective",
    "para_ctc_objective", "sc_ctc_objective",
    "HierTargets", "SubwordVocab", "build_hierarchy", "detokenize",
    "segment", "train_bpe",
    "SyntheticTask", "generate_synthetic_corpus",
    "Graph", "Tensor", "backward", "finite_diff_check", "using_dtype",
    "TrainingConfig", "train",
]

__version__ = "0.1.0"
