"""フロッキングラボの例外階層"""


class FlockingLabError(Exception):
    """全てのラボ固有エラーの基底クラス"""


class DomainError(FlockingLabError, ValueError):
    """引数が定義域の外（負の半径、a > b など）"""


class NumericError(FlockingLabError, ArithmeticError):
    """非有限値（NaN / inf）が入力に含まれる"""


class NoFiniteFlockDiameter(FlockingLabError):
    """大域条件 V0 < m0 ∫_{D0}^∞ φ が破れており D∞ が存在しない"""


class VacuumDivision(FlockingLabError, ArithmeticError):
    """MT モデルで φ*ρ が下限値を下回る点での除算"""


class BracketError(FlockingLabError, ValueError):
    """二分法のブラケットが (Completed, BlewUp) になっていない"""


class StepSizeError(FlockingLabError, ValueError):
    """CFL 条件に違反するステップ幅"""


class EnvelopeInvalid(FlockingLabError):
    """比較エンベロープの仮定（変動上限、c_min > 0）が満たされない"""


class EmptySupport(FlockingLabError, ValueError):
    """密度の台が空"""


class ShapeError(FlockingLabError, ValueError):
    """格子やスナップショットの形状が一致しない"""


class ConfigError(FlockingLabError, ValueError):
    """実行設定ファイルが不正"""


class CheckpointError(FlockingLabError, ValueError):
    """チェックポイントファイルの形式が不正"""
