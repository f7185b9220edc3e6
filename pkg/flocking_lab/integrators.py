"""
時間積分のワンステップ関数

状態は numpy 配列（またはその加算・スカラー倍ができるもの）で、rhs(t, state) が時間微分を返します。
"""

from typing import Callable, TypeVar

State = TypeVar("State")
Rhs = Callable[[float, State], State]


def rk4_step(state: State, t: float, dt: float, rhs: Rhs) -> State:
    """古典的4次 Runge-Kutta で1ステップ進める"""
    k1 = rhs(t, state)
    k2 = rhs(t + dt / 2, state + dt / 2 * k1)
    k3 = rhs(t + dt / 2, state + dt / 2 * k2)
    k4 = rhs(t + dt, state + dt * k3)
    return state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def ssprk2_step(state: State, t: float, dt: float, rhs: Rhs, limiter: Callable[[State], State] | None = None) -> State:
    """
    2段2次の強安定性保存 Runge-Kutta（Heun 型の凸結合）

    limiter は各段の後に適用され、遠方境界の再固定などに使います。
    """
    apply = limiter or (lambda y: y)
    y1 = apply(state + dt * rhs(t, state))
    return apply(0.5 * state + 0.5 * (y1 + dt * rhs(t + dt, y1)))
