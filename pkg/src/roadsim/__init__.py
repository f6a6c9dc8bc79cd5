"""roadsim: a microscopic road-traffic simulator with lockstep
partition-parallel execution and congestion-time vehicle grouping."""

__version__ = "0.1.0"

from . import demand, engine, grouping, kinematics, metrics, netmodel, partition, sync  # noqa: F401
