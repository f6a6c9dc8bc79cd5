import pytest

from roadsim.grouping import (
    Group,
    GroupingConfig,
    detect_groups,
    disband_check,
    follower_update,
    lane_zones,
)
from roadsim.rng import Xorshift64Star

CFG = GroupingConfig()  # alpha 0, 3 zones, 10% exit capped at 50 m


class Car:
    def __init__(self, pos, speed):
        self.pos = pos
        self.speed = speed


def lane(*cars):
    """Occupancy list sorted front (highest pos) first."""
    return sorted((Car(p, s) for p, s in cars), key=lambda c: -c.pos)


def test_zones_200m_default():
    z = lane_zones(200.0, CFG)
    assert z.exit_start == pytest.approx(180.0)  # E = min(0.1*200, 50) = 20
    assert z.body_zone_len == pytest.approx(60.0)


def test_zones_1000m_cap_binds():
    z = lane_zones(1000.0, CFG)
    assert 1000.0 - z.exit_start == pytest.approx(50.0)


def test_zones_short_lane_no_lower_bound():
    z = lane_zones(30.0, CFG)
    assert 30.0 - z.exit_start == pytest.approx(3.0)
    assert z.body_zone_len == pytest.approx(9.0)


def test_no_group_when_moving_at_limit():
    z = lane_zones(200.0, CFG)
    occ = lane((10, 13.9), (30, 13.9), (50, 13.9))
    assert detect_groups(occ, 13.9, z, CFG) == []


def test_five_stationary_one_group():
    z = lane_zones(200.0, CFG)
    occ = lane((5, 0.0), (12, 0.0), (19, 0.0), (26, 0.0), (33, 0.0))
    groups = detect_groups(occ, 13.9, z, CFG)
    assert len(groups) == 1
    g = groups[0]
    assert g.leader.pos == 33
    assert [f.pos for f in g.followers] == [26, 19, 12, 5]


def test_queue_straddling_zone_boundary_splits():
    z = lane_zones(200.0, CFG)
    boundary = z.body_zone_len  # 60.0: zone 0 is [0, 60), zone 1 is [60, 120)
    occ = lane((boundary - 15, 0.0), (boundary - 8, 0.0),
               (boundary + 2, 0.0), (boundary + 9, 0.0))
    groups = detect_groups(occ, 13.9, z, CFG)
    assert len(groups) == 2
    by_zone = {g.zone_index: g for g in groups}
    assert {f.pos for f in by_zone[0].followers} | {by_zone[0].leader.pos} == {45.0, 52.0}
    assert {f.pos for f in by_zone[1].followers} | {by_zone[1].leader.pos} == {62.0, 69.0}


def test_exit_zone_vehicles_never_grouped():
    z = lane_zones(200.0, CFG)
    occ = lane((185, 0.0), (192, 0.0), (170, 0.0), (175, 0.0))
    groups = detect_groups(occ, 13.9, z, CFG)
    assert len(groups) == 1
    assert {c.pos for c in [groups[0].leader, *groups[0].followers]} == {170.0, 175.0}


def test_single_vehicle_zone_forms_no_group():
    z = lane_zones(200.0, CFG)
    assert detect_groups(lane((30, 0.0)), 13.9, z, CFG) == []


def test_moving_vehicle_blocks_alpha0_group():
    z = lane_zones(200.0, CFG)
    occ = lane((10, 0.0), (20, 0.1), (30, 0.0))
    assert detect_groups(occ, 13.9, z, CFG) == []


def test_alpha_positive_uses_zone_mean():
    cfg = GroupingConfig(alpha=0.5)
    z = lane_zones(200.0, cfg)
    occ = lane((10, 2.0), (20, 3.0), (30, 4.0))  # mean 3.0 < 0.5 * 13.9
    groups = detect_groups(occ, 13.9, z, cfg)
    assert len(groups) == 1 and len(groups[0].followers) == 2


def test_follower_update_stationary():
    g = Group(Car(30, 0.0), [Car(23, 0.0), Car(16, 0.0)], 0)
    follower_update(g, 0.0, 0.5)
    assert [f.pos for f in g.followers] == [23, 16]
    assert all(f.speed == 0.0 for f in g.followers)


def test_follower_update_advances_065():
    g = Group(Car(30, 1.3), [Car(23, 0.0), Car(16, 0.0)], 0)
    follower_update(g, 1.3, 0.5)
    assert [f.pos for f in g.followers] == [pytest.approx(23.65), pytest.approx(16.65)]
    assert all(f.speed == 1.3 for f in g.followers)


def test_follower_update_preserves_gaps():
    rng = Xorshift64Star(99)
    for _ in range(50):
        n = 2 + rng.randrange(8)
        pos = 0.0
        cars = []
        for _ in range(n):
            pos += 5.0 + rng.uniform(2.5, 10.0)
            cars.append(Car(pos, 0.0))
        cars.reverse()
        g = Group(cars[0], cars[1:], 0)
        before = [a.pos - b.pos for a, b in zip(cars, cars[1:])]
        follower_update(g, rng.uniform(0.0, 13.9), 0.5)
        g.leader.pos += g.followers[0].speed * 0.5  # leader moved by the same speed
        after = [a.pos - b.pos for a, b in zip(cars, cars[1:])]
        assert after == pytest.approx(before)


def test_disband_keep_while_stationary():
    z = lane_zones(200.0, CFG)
    g = Group(Car(100, 0.0), [Car(93, 0.0)], 1)
    assert disband_check(g, z, 13.9, CFG) is False


def test_disband_when_leader_enters_exit_zone():
    z = lane_zones(200.0, CFG)
    g = Group(Car(z.exit_start, 0.0), [Car(150, 0.0)], 2)
    assert disband_check(g, z, 13.9, CFG) is True


def test_disband_when_leader_moves():
    z = lane_zones(200.0, CFG)
    g = Group(Car(100, 0.0), [Car(93, 0.0)], 1)
    assert disband_check(g, z, 13.9, CFG) is False
    g.leader.speed = 1.3  # engine updated the leader this step
    assert disband_check(g, z, 13.9, CFG) is True


def test_config_validation():
    with pytest.raises(ValueError):
        GroupingConfig(alpha=1.5)
    with pytest.raises(ValueError):
        GroupingConfig(zone_count=0)
    with pytest.raises(ValueError):
        GroupingConfig(exit_fraction=1.0)
