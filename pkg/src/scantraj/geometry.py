"""Planar geometry between pedestrians: headings, encounters, angular bins.

Conventions (used everywhere in the package):

* angles are degrees in [0, 360), with 0 along +x and counterclockwise
  positive;
* an agent's heading is estimated from its latest displacement, falling
  back to the last valid heading (default 0 with ``heading_valid=False``)
  when the agent is stationary;
* the relative bearing of B seen from A is the world angle of (B - A)
  measured in A's body frame; the relative heading is B's heading minus
  A's, both wrapped into [0, 360).

All functions here are pure and operate on plain floats; nothing touches
the autodiff tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

STATIONARY_EPS = 1e-6  # m; displacements at or below this carry no heading


def normalize_deg(angle: float) -> float:
    """Wrap an angle in degrees into [0, 360)."""
    wrapped = math.fmod(angle, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    return wrapped if wrapped < 360.0 else 0.0


@dataclass(frozen=True)
class AgentKinematics:
    """Position plus an estimated heading for one agent at one time step."""
    position: tuple[float, float]
    heading_deg: float = 0.0
    heading_valid: bool = False


@dataclass(frozen=True)
class EncounterGeometry:
    """How one agent sees another: range, bearing, and relative heading."""
    distance: float          # m
    bearing_deg: float       # [0, 360), 0 = straight along own heading
    rel_heading_deg: float   # [0, 360), 0 = moving the same way


@dataclass(frozen=True)
class BinSpec:
    """Uniform discretization of bearing x relative heading."""
    bearing_step_deg: float = 30.0
    heading_step_deg: float = 30.0

    def __post_init__(self):
        for step in (self.bearing_step_deg, self.heading_step_deg):
            if not (0.0 < step <= 360.0):
                raise ValueError(f"bin width must be in (0, 360], got {step}")
            if abs(360.0 / step - round(360.0 / step)) > 1e-9:
                raise ValueError(f"bin width {step} does not divide 360")

    @property
    def n_bearing(self) -> int:
        return round(360.0 / self.bearing_step_deg)

    @property
    def n_heading(self) -> int:
        return round(360.0 / self.heading_step_deg)


def estimate_heading(prev_pos, cur_pos,
                     fallback: AgentKinematics | None = None) -> AgentKinematics:
    """Kinematics at ``cur_pos`` given the displacement from ``prev_pos``.

    A displacement longer than ``STATIONARY_EPS`` defines the heading;
    otherwise the fallback's heading (and validity) is carried, defaulting
    to 0 degrees marked invalid.
    """
    dx = float(cur_pos[0]) - float(prev_pos[0])
    dy = float(cur_pos[1]) - float(prev_pos[1])
    pos = (float(cur_pos[0]), float(cur_pos[1]))
    if math.hypot(dx, dy) > STATIONARY_EPS:
        return AgentKinematics(pos, normalize_deg(math.degrees(math.atan2(dy, dx))), True)
    if fallback is not None:
        return AgentKinematics(pos, fallback.heading_deg, fallback.heading_valid)
    return AgentKinematics(pos, 0.0, False)


def compute_encounter(observer: AgentKinematics,
                      other: AgentKinematics) -> EncounterGeometry:
    """Geometry of ``other`` as seen by ``observer``.

    Coincident positions degrade to distance 0 with bearing 0.
    """
    dx = other.position[0] - observer.position[0]
    dy = other.position[1] - observer.position[1]
    distance = math.hypot(dx, dy)
    if distance == 0.0:
        bearing = 0.0
    else:
        world = math.degrees(math.atan2(dy, dx))
        bearing = normalize_deg(world - observer.heading_deg)
    rel_heading = normalize_deg(other.heading_deg - observer.heading_deg)
    return EncounterGeometry(distance, bearing, rel_heading)


def bin_index(geom: EncounterGeometry, spec: BinSpec) -> tuple[int, int]:
    """1-based (bearing, heading) bin of an encounter.

    Intervals are closed on the left: bin i covers [(i-1)*step, i*step).
    """
    i = int(math.floor(geom.bearing_deg / spec.bearing_step_deg)) + 1
    j = int(math.floor(geom.rel_heading_deg / spec.heading_step_deg)) + 1
    # Guard against bearing == 360 - ulp rounding up under division.
    return min(i, spec.n_bearing), min(j, spec.n_heading)
