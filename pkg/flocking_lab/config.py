"""
フロッキング流体力学ラボの設定

このモジュールには全ての数値既定値とファイル形式の定数が含まれており、
ソルバー本体から分離してクリーンなコード構造を維持するためのものです。
"""

# 影響関数 φ の根探索（D∞ の二分法）の相対許容誤差
ROOT_RTOL = 1e-10
ROOT_XTOL = 1e-14
ROOT_MAXITER = 500

# ブローアップ判定（1D 粒子と 2D の特性線マーカーで共通）
EPS_BLOW = 1e-4          # min d < -1/EPS_BLOW でブローアップ
DT_MIN = 1e-10           # これを下回るステップ幅は崩壊とみなす
STEP_THETA = 0.1         # dt = θ / 特性レート
DT_MAX_1D = 0.25

# 2D オイラーソルバー
DEFAULT_CFL = 0.4
DEFAULT_GRID_N = 256
GRAD_CAP = 1e3
RHO_TOL_FACTOR = 1e-8    # 台の閾値 rho_tol = 係数 · m0 / L²
RHO_FLOOR_FACTOR = 1e-12  # MT の除算下限 rho_floor = 係数 · m0 / L²
VELOCITY_EPS = 1e-12

# 比較モジュール: C·Δ の許容幅（最も細かい格子で一度だけ校正して固定）
ENVELOPE_SLACK_C = 2.0

# チェックポイントファイル
CHECKPOINT_MAGIC = b"FLCK"
CHECKPOINT_VERSION = 1

# CLI の終了コード
EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_BRACKET_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3

# ログ設定
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
