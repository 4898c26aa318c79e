"""Model variant flags and the ten preset ablation configurations."""

from __future__ import annotations

from dataclasses import dataclass

IA_MODES = ("attention", "max", "mean")
LM_VARIANTS = ("full", "no_concat", "no_local_match")
CM_METRICS = ("mlp", "euclidean")
TYING = ("shared", "untied")


class VariantError(ValueError):
    """An ablation id or flag combination is invalid."""


@dataclass(frozen=True)
class AblationSpec:
    """Forward-path and objective flags for one model variant."""
    lam: float = 1.0
    tying: str = "shared"
    ia_mode: str = "attention"
    lm_variant: str = "full"
    cm_metric: str = "mlp"

    def __post_init__(self):
        if self.tying not in TYING:
            raise VariantError(f"tying must be one of {TYING}, got {self.tying!r}")
        if self.ia_mode not in IA_MODES:
            raise VariantError(f"ia_mode must be one of {IA_MODES}, got {self.ia_mode!r}")
        if self.lm_variant not in LM_VARIANTS:
            raise VariantError(
                f"lm_variant must be one of {LM_VARIANTS}, got {self.lm_variant!r}")
        if self.cm_metric not in CM_METRICS:
            raise VariantError(
                f"cm_metric must be one of {CM_METRICS}, got {self.cm_metric!r}")


# Preset ids: 1 is the complete model, 2-10 remove or replace one piece at
# a time (regularizer, weight tying, instance aggregation, local matching,
# class matching metric).
PRESETS = {
    1: AblationSpec(1.0, "shared", "attention", "full", "mlp"),
    2: AblationSpec(0.0, "shared", "attention", "full", "mlp"),
    3: AblationSpec(1.0, "untied", "attention", "full", "mlp"),
    4: AblationSpec(1.0, "shared", "max", "full", "mlp"),
    5: AblationSpec(1.0, "shared", "mean", "full", "mlp"),
    6: AblationSpec(0.0, "shared", "mean", "full", "mlp"),
    7: AblationSpec(0.0, "shared", "mean", "no_concat", "mlp"),
    8: AblationSpec(0.0, "shared", "mean", "full", "euclidean"),
    9: AblationSpec(0.0, "shared", "mean", "no_local_match", "mlp"),
    10: AblationSpec(0.0, "shared", "mean", "no_local_match", "euclidean"),
}


def from_id(ablation_id: int) -> AblationSpec:
    try:
        return PRESETS[int(ablation_id)]
    except (KeyError, ValueError):
        raise VariantError(f"ablation id must be 1..10, got {ablation_id!r}") from None
