"""
臨界閾値の判定結果と実行結果の型

ThresholdVerdict は3つの条件（発散、スペクトルギャップ、初期速度変動）の余裕を保持し、
判定は常に次の規則で導出されます:
- SubCritical: 3条件すべてが非負の余裕で成立
- Indeterminate: 発散とギャップは成立するが V0 の上限が破れる（定理は何も言わない）
- SuperCritical: それ以外（違反位置を記録）
"""

import math
from dataclasses import asdict, dataclass, field
from enum import StrEnum

from flocking_lab.kernels import FlockGeometry, Model


class Verdict(StrEnum):
    SUB_CRITICAL = "SubCritical"
    SUPER_CRITICAL = "SuperCritical"
    INDETERMINATE = "Indeterminate"


class OutcomeKind(StrEnum):
    COMPLETED = "Completed"
    BLEW_UP = "BlewUp"


@dataclass(frozen=True)
class RunOutcome:
    kind: OutcomeKind
    t_blow: float | None = None
    reason: str = ""

    @classmethod
    def completed(cls) -> "RunOutcome":
        return cls(OutcomeKind.COMPLETED)

    @classmethod
    def blew_up(cls, t: float, reason: str) -> "RunOutcome":
        return cls(OutcomeKind.BLEW_UP, float(t), reason)

    @property
    def is_blowup(self) -> bool:
        return self.kind is OutcomeKind.BLEW_UP

    def __str__(self) -> str:
        if self.is_blowup:
            return f"BlewUp(t={self.t_blow:.6g}, {self.reason})"
        return "Completed"


@dataclass(frozen=True)
class ThresholdVerdict:
    model: Model
    verdict: Verdict
    divergence_margin: float
    gap_max: float
    gap_bound: float
    variation_slack: float
    location: tuple[float, ...] | None = None
    divergence_margin_global: float | None = None
    geometry: FlockGeometry | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def gap_margin(self) -> float:
        return self.gap_bound - self.gap_max

    @classmethod
    def classify(
        cls,
        model: Model,
        divergence_margin: float,
        gap_max: float,
        gap_bound: float,
        variation_slack: float,
        variation_holds: bool,
        location: tuple[float, ...] | None = None,
        **extra,
    ) -> "ThresholdVerdict":
        """余裕から判定を導出（variation_holds は厳密不等号の変種を扱うため別に渡す）"""
        divergence_ok = divergence_margin >= 0
        gap_ok = gap_max <= gap_bound
        if divergence_ok and gap_ok and variation_holds:
            verdict = Verdict.SUB_CRITICAL
        elif divergence_ok and gap_ok:
            verdict = Verdict.INDETERMINATE
        else:
            verdict = Verdict.SUPER_CRITICAL
        return cls(
            Model(model),
            verdict,
            float(divergence_margin),
            float(gap_max),
            float(gap_bound),
            float(variation_slack),
            location if verdict is Verdict.SUPER_CRITICAL else None,
            **extra,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["model"] = self.model.value
        data["verdict"] = self.verdict.value
        data["notes"] = list(self.notes)
        data["location"] = None if self.location is None else list(self.location)
        # JSON は inf を扱えないので null にする
        for key in ("gap_bound", "variation_slack", "divergence_margin_global"):
            value = data[key]
            if value is not None and not math.isfinite(value):
                data[key] = None
        return data
