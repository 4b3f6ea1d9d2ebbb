"""Range-based relative localization between aerial agents.

Library plus CLI simulator covering: heading-aware and heading-independent
EKFs over the relative-motion model, nonlinear observability tests, Monte
Carlo noise studies, a delayed-trajectory leader-follower controller, and
a message-level UWB ranging simulation.
"""

from .geometry import (
    AttitudeSample,
    InputVector,
    MeasurementA,
    MeasurementB,
    RelativeState,
    Vec2,
    body_rates_to_heading_rate,
    observe_a,
    observe_b,
    rotation_2d,
    skew_2d,
    specific_force_to_horizontal_accel,
    state_derivative,
    wrap_angle,
)

__all__ = [
    "AttitudeSample",
    "InputVector",
    "MeasurementA",
    "MeasurementB",
    "RelativeState",
    "Vec2",
    "body_rates_to_heading_rate",
    "observe_a",
    "observe_b",
    "rotation_2d",
    "skew_2d",
    "specific_force_to_horizontal_accel",
    "state_derivative",
    "wrap_angle",
]
