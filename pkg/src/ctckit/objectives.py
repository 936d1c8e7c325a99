"""Training objectives built from per-level CTC losses.

Four variants share one reporting shape:

  ctc       one loss on the final head
  sc-ctc    the same target at every level, interior levels tapped
  hc-ctc    one target per level from nested vocabularies, tapped
  para-ctc  every level read off the final states through per-level
            adapters, no taps, no conditioning

Multi-loss objectives weight levels equally: the total is the mean of
the per-level losses.  A level whose target is infeasible for the frame
count contributes +inf to the report but is excluded from the mean; the
same rule removes infeasible utterances from batch-level means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .ctc import ctc_loss_node
from .encoder import EncoderOutput
from .errors import ConfigurationError, ContractError
from .subword import HierTargets
from .tensor import Tensor, add, log_softmax, matmul, scale

OBJECTIVES = ("ctc", "sc-ctc", "hc-ctc", "para-ctc")


@dataclass
class ObjectiveReport:
    """Loss values for one utterance or one combined batch."""

    per_level: list[float]            # +inf where infeasible
    infeasible: list[int]             # count per level
    level_nodes: list[Tensor | None]  # graph nodes, None where infeasible
    total: Tensor | None              # mean over feasible levels

    @property
    def total_value(self) -> float:
        return self.total.item() if self.total is not None else float("inf")

    @property
    def n_levels(self) -> int:
        return len(self.per_level)


def _mean_node(nodes: list[Tensor]) -> Tensor | None:
    if not nodes:
        return None
    acc = nodes[0]
    for node in nodes[1:]:
        acc = add(acc, node)
    return scale(acc, 1.0 / len(nodes))


def _report_from_levels(level_nodes: list[Tensor | None]) -> ObjectiveReport:
    per_level = [n.item() if n is not None else float("inf") for n in level_nodes]
    feasible = [n for n in level_nodes if n is not None]
    return ObjectiveReport(per_level=per_level,
                           infeasible=[0 if n is not None else 1 for n in level_nodes],
                           level_nodes=level_nodes,
                           total=_mean_node(feasible))


def _level_loss(logits: Tensor, target: Sequence[int]) -> Tensor | None:
    node = ctc_loss_node(log_softmax(logits), target)
    return None if node.meta["infeasible"] else node


def ctc_objective(enc: EncoderOutput, target: Sequence[int]) -> ObjectiveReport:
    """Single loss on the final head; any interior taps are ignored."""
    return _report_from_levels([_level_loss(enc.final_logits, target)])


def _tapped_objective(enc: EncoderOutput,
                      level_targets: Sequence[Sequence[int]]) -> ObjectiveReport:
    levels = enc.config.levels
    if len(level_targets) != levels:
        raise ConfigurationError(
            f"{levels} levels need {levels} targets, got {len(level_targets)}")
    if len(enc.tap_logits) != levels - 1:
        raise ContractError(
            f"encoder output carries {len(enc.tap_logits)} interior taps, "
            f"expected {levels - 1}; was encode() run with interior_taps?")
    nodes = [_level_loss(enc.tap_logits[k], level_targets[k - 1])
             for k in range(1, levels)]
    nodes.append(_level_loss(enc.final_logits, level_targets[-1]))
    return _report_from_levels(nodes)


def sc_ctc_objective(enc: EncoderOutput, target: Sequence[int]) -> ObjectiveReport:
    """Self-conditioned variant: one vocabulary, one target, every level."""
    return _tapped_objective(enc, [list(target)] * enc.config.levels)


def hc_ctc_objective(enc: EncoderOutput,
                     targets: HierTargets | Sequence[Sequence[int]]) -> ObjectiveReport:
    """Hierarchical variant: level k supervises with its own vocabulary."""
    levels = targets.levels if isinstance(targets, HierTargets) else list(targets)
    return _tapped_objective(enc, levels)


def para_ctc_objective(enc: EncoderOutput,
                       targets: HierTargets | Sequence[Sequence[int]]) -> ObjectiveReport:
    """Parallel variant: all levels read the final states.

    Levels below the last pass through their own identity-initialized
    adapter before projecting; the last level uses the final head
    directly, so with one level this degenerates to plain CTC.
    """
    levels = targets.levels if isinstance(targets, HierTargets) else list(targets)
    config, params = enc.config, enc.params
    if len(levels) != config.levels:
        raise ConfigurationError(
            f"{config.levels} levels need {config.levels} targets, got {len(levels)}")
    nodes: list[Tensor | None] = []
    for k in range(1, config.levels):
        adapted = add(matmul(enc.final_states, params[f"adapter{k}.w"]),
                      params[f"adapter{k}.b"])
        logits = add(matmul(adapted, params[f"head{k}.w"]), params[f"head{k}.b"])
        nodes.append(_level_loss(logits, levels[k - 1]))
    nodes.append(_level_loss(enc.final_logits, levels[-1]))
    return _report_from_levels(nodes)


def run_objective(name: str, enc: EncoderOutput,
                  level_targets: Sequence[Sequence[int]]) -> ObjectiveReport:
    """Dispatch by objective name on uniform per-level target lists."""
    if name == "ctc":
        return ctc_objective(enc, level_targets[-1])
    if name == "sc-ctc":
        return sc_ctc_objective(enc, level_targets[-1])
    if name == "hc-ctc":
        return hc_ctc_objective(enc, level_targets)
    if name == "para-ctc":
        return para_ctc_objective(enc, level_targets)
    raise ConfigurationError(f"unknown objective {name!r}; choose from {OBJECTIVES}")


def combine_reports(reports: Sequence[ObjectiveReport]) -> ObjectiveReport:
    """Average per-utterance reports into one batch report.

    Per level, the batch loss is the mean over utterances whose target
    was feasible at that level; a level with no feasible utterance is
    excluded from the total, mirroring the per-utterance rule.
    """
    if not reports:
        raise ContractError("cannot combine an empty batch")
    n_levels = reports[0].n_levels
    if any(r.n_levels != n_levels for r in reports):
        raise ContractError("reports in a batch must share the level count")
    level_nodes: list[Tensor | None] = []
    infeasible: list[int] = []
    for k in range(n_levels):
        nodes = [r.level_nodes[k] for r in reports if r.level_nodes[k] is not None]
        level_nodes.append(_mean_node(nodes))
        infeasible.append(sum(r.infeasible[k] for r in reports))
    return ObjectiveReport(
        per_level=[n.item() if n is not None else float("inf") for n in level_nodes],
        infeasible=infeasible,
        level_nodes=level_nodes,
        total=_mean_node([n for n in level_nodes if n is not None]))
