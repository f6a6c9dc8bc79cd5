"""Congestion-time virtual grouping.

Each lane gets an exit zone at its downstream end (min(exit_fraction * L,
exit_cap) metres) where vehicles are never grouped, so they regain full
simulation before the junction.  The rest of the lane is split into
`zone_count` equal body zones.  A body zone whose vehicles satisfy the
congestion test forms one group: the foremost vehicle is the leader and keeps
the full update pipeline, the rest become followers that copy the leader's
updated speed and advance by speed*dt, skipping planning, junction handling
and movement execution.

Groups are recomputed from scratch at the start of every timestep and
additionally disbanded at the end of a step when the leader leaves the
congestion regime or steps into the exit zone.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GroupingConfig:
    alpha: float = 0.0          # congestion threshold as a fraction of the speed limit
    zone_count: int = 3         # body zones per lane
    exit_fraction: float = 0.10
    exit_cap: float = 50.0      # metres

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")
        if self.zone_count < 1:
            raise ValueError("zone_count must be >= 1")
        if not (0.0 < self.exit_fraction < 1.0):
            raise ValueError("exit_fraction must be in (0, 1)")
        if self.exit_cap <= 0:
            raise ValueError("exit_cap must be positive")


@dataclass(frozen=True)
class LaneZones:
    lane_length: float
    exit_start: float   # exit zone is [exit_start, lane_length]
    body_zone_len: float
    zone_count: int

    def zone_of(self, pos: float) -> int:
        """Body zone index for a front-bumper position, or -1 in the exit zone.

        A vehicle exactly on a body-zone boundary belongs to the upstream-er
        zone boundary's right side, i.e. zone i covers [i*z, (i+1)*z).
        """
        if pos >= self.exit_start:
            return -1
        if self.body_zone_len <= 0.0:
            return -1
        z = int(pos / self.body_zone_len)
        return min(z, self.zone_count - 1)


def lane_zones(lane_length: float, cfg: GroupingConfig) -> LaneZones:
    if lane_length <= 0:
        raise ValueError("lane_length must be positive")
    exit_len = min(cfg.exit_fraction * lane_length, cfg.exit_cap)
    exit_start = lane_length - exit_len
    return LaneZones(lane_length, exit_start, exit_start / cfg.zone_count, cfg.zone_count)


@dataclass
class Group:
    leader: object            # engine Vehicle (leader of the group)
    followers: list           # vehicles behind the leader, front to back
    zone_index: int


def detect_groups(occupants, speed_limit: float, zones: LaneZones,
                  cfg: GroupingConfig) -> list[Group]:
    """Recompute groups for one lane.

    occupants is the lane's vehicle list sorted front first; each vehicle
    exposes .pos and .speed.  Vehicles whose front is inside the exit zone
    are never grouped.  With alpha == 0 the congestion test requires every
    vehicle in the zone to be exactly stationary ("mean below zero" would be
    vacuous); with alpha > 0 the zone's mean speed must be below
    alpha * speed_limit.  Zones with fewer than two vehicles form no group.

    This runs once per occupied lane per timestep, so the scan is kept to
    plain arithmetic on locals.
    """
    groups: list[Group] = []
    n = len(occupants)
    if n < 2 or zones.body_zone_len <= 0.0:
        return groups
    alpha = cfg.alpha
    if alpha == 0.0:
        stopped = 0
        for v in occupants:
            if v.speed == 0.0:
                stopped += 1
        if stopped < 2:
            return groups
    threshold = alpha * speed_limit
    exit_start = zones.exit_start
    inv_zone = 1.0 / zones.body_zone_len
    top = zones.zone_count - 1
    i = 0
    while i < n:
        pos = occupants[i].pos
        if pos >= exit_start:
            i += 1
            continue
        z = int(pos * inv_zone)
        if z > top:
            z = top
        j = i
        speed_sum = 0.0
        all_zero = True
        while j < n:
            vj = occupants[j]
            if vj.pos >= exit_start:
                break
            zj = int(vj.pos * inv_zone)
            if (zj if zj <= top else top) != z:
                break
            speed_sum += vj.speed
            if vj.speed != 0.0:
                all_zero = False
            j += 1
        count = j - i
        if count >= 2:
            congested = all_zero if alpha == 0.0 else (speed_sum / count < threshold)
            if congested:
                groups.append(Group(occupants[i], list(occupants[i + 1 : j]), z))
        i = j
    return groups


def follower_update(group: Group, leader_new_speed: float, dt: float) -> None:
    """Copy the leader's updated speed to every follower and advance them by
    speed*dt; intra-group gaps are preserved exactly."""
    for v in group.followers:
        v.speed = leader_new_speed
        v.pos += leader_new_speed * dt


def disband_check(group: Group, zones: LaneZones, speed_limit: float,
                  cfg: GroupingConfig) -> bool:
    """True when the group must disband at end of step: the leader no longer
    satisfies the congestion test, or its front entered the exit zone."""
    leader = group.leader
    if leader.pos >= zones.exit_start:
        return True
    if cfg.alpha == 0.0:
        return leader.speed != 0.0
    return leader.speed >= cfg.alpha * speed_limit
