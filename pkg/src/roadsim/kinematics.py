"""Car-following and lane-changing primitives.

The car-following model is the Krauss-style safe-speed closed form

    v_safe = -b*tau + sqrt((b*tau)^2 + v_leader^2 + 2*b*gap)

with the driver-imperfection term fixed at zero, so every function here is
pure and deterministic.  A follower that never exceeds v_safe can always stop
without touching a leader that brakes at up to b.

Lane changes are strategic only: a vehicle changes lanes when its route
requires it and the move is safe with respect to both the new leader and the
new follower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class CfmParams:
    accel: float = 2.6          # m/s^2
    decel: float = 4.5          # m/s^2
    tau: float = 0.5            # s, reaction time; equals the simulation step
    min_gap: float = 2.5        # m, standstill gap kept to the leader
    vehicle_length: float = 5.0  # m
    sigma: float = 0.0          # driver imperfection, fixed at 0 for determinism

    def __post_init__(self):
        if self.accel <= 0 or self.decel <= 0 or self.tau <= 0:
            raise ValueError("accel, decel and tau must be positive")
        if self.min_gap < 0 or self.vehicle_length <= 0:
            raise ValueError("bad min_gap or vehicle_length")
        if self.sigma != 0.0:
            raise ValueError("sigma must be 0 (randomness is disabled)")


def safe_speed(v_leader: float, gap: float, params: CfmParams) -> float:
    """Largest speed that cannot lead to a collision when the leader, moving
    at v_leader with net gap `gap` ahead of us, brakes at params.decel."""
    bt = params.decel * params.tau
    v = math.sqrt(bt * bt + v_leader * v_leader + 2.0 * params.decel * gap) - bt
    return v if v > 0.0 else 0.0


def next_speed(speed: float, v_limit: float, v_safe: float,
               params: CfmParams, dt: float) -> float:
    """min(speed + a*dt, v_limit, v_safe), floored at zero."""
    v = speed + params.accel * dt
    if v > v_limit:
        v = v_limit
    if v > v_safe:
        v = v_safe
    return v if v > 0.0 else 0.0


@dataclass(frozen=True)
class LaneContext:
    """What a vehicle sees in one lane: net gaps (bumper to bumper, metres)
    and speeds of the nearest leader and follower; None means nobody there."""
    leader_gap: float | None = None
    leader_speed: float = 0.0
    follower_gap: float | None = None
    follower_speed: float = 0.0


def _safe_to_enter(speed: float, ctx: LaneContext, params: CfmParams) -> bool:
    if ctx.leader_gap is not None:
        if ctx.leader_gap < params.min_gap:
            return False
        if speed > safe_speed(ctx.leader_speed, ctx.leader_gap - params.min_gap, params):
            return False
    if ctx.follower_gap is not None:
        if ctx.follower_gap < params.min_gap:
            return False
        if ctx.follower_speed > safe_speed(speed, ctx.follower_gap - params.min_gap, params):
            return False
    return True


def lane_change_decision(
    vehicle_speed: float,
    current_ctx: LaneContext,
    target_ctx: LaneContext,
    route_need: str,
    params: CfmParams,
) -> str:
    """Return "left", "right" or "stay".

    route_need is "left", "right" or "none"; only route-required changes are
    made.  The move is taken iff both target-lane gaps are at least min_gap
    and the Krauss safety inequalities hold for the mover against the new
    leader and for the new follower against the mover.  current_ctx is part
    of the decision interface but the strategic policy never blocks on it.
    """
    del current_ctx
    if route_need not in ("left", "right"):
        return "stay"
    if _safe_to_enter(vehicle_speed, target_ctx, params):
        return route_need
    return "stay"
