"""Run matrix: XAI input method x explanation type, plus multi-explanation and surrogate runs."""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from ..core.config import ExperimentConfig

SURROGATE_PREFIX = "surrogate"


@dataclass(frozen=True)
class RunSpec:
    """One evaluated attack.

    Attributes:
        run_id: Directory-safe identifier.
        family: single, multi or surrogate.
        method: Inversion input method.
        explanation_kind: Explanation consumed (None for prediction_only).
        surrogate_mode: rs_cam or s_cam for surrogate runs.
    """

    run_id: str
    family: str
    method: str
    explanation_kind: Optional[str] = None
    surrogate_mode: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "family": self.family,
            "method": self.method,
            "explanation_kind": self.explanation_kind,
            "surrogate_mode": self.surrogate_mode,
        }


def run_id_for(method: str, explanation_kind: Optional[str]) -> str:
    return method if explanation_kind is None else f"{method}__{explanation_kind}"


def build_run_matrix(config: ExperimentConfig) -> List[RunSpec]:
    """Every run a configuration asks for, in a stable order.

    prediction_only appears once regardless of the explanation kinds; each
    other method is paired with every single-map kind. Explanation stacks
    use ``inversion.multi_method``. When the surrogate attack is enabled, the
    configured mode comes first, followed by the other mode.
    """
    runs: List[RunSpec] = []
    for method in config.inversion.methods:
        if method == "prediction_only":
            runs.append(RunSpec(method, "single", method))
            continue
        for kind in config.inversion.explanations:
            runs.append(RunSpec(run_id_for(method, kind), "single", method, kind))
    for kind in config.inversion.multi_explanations:
        method = config.inversion.multi_method
        runs.append(RunSpec(run_id_for(method, kind), "multi", method, kind))
    if config.surrogate.enabled:
        modes = [config.surrogate.mode] + [m for m in ("rs_cam", "s_cam") if m != config.surrogate.mode]
        for mode in modes:
            runs.append(RunSpec(f"{SURROGATE_PREFIX}__{mode}", "surrogate", config.surrogate.method, "grad_cam", mode))
    return runs


def breach_kinds(config: ExperimentConfig) -> Tuple[str, ...]:
    """Explanation kinds the breach stage must record."""
    kinds = []
    for run in build_run_matrix(config):
        if run.family != "surrogate" and run.explanation_kind and run.explanation_kind not in kinds:
            kinds.append(run.explanation_kind)
    return tuple(kinds)
