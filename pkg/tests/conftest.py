import math

import numpy as np
import pytest

from advscen import scene, synthetic


def make_track(vid, xs, ys, headings, speeds, ts, length=4.8, width=2.0):
    points = tuple(
        scene.TrajectoryPoint(x=x, y=y, heading=h, speed=v, t=t)
        for x, y, h, v, t in zip(xs, ys, headings, speeds, ts)
    )
    return scene.Track(vehicle_id=vid, length=length, width=width, points=points)


def straight_track(vid, x0, y0, heading, speed, n, dt=0.1, t0=0.0):
    ts = [t0 + k * dt for k in range(n)]
    xs = [x0 + speed * math.cos(heading) * k * dt for k in range(n)]
    ys = [y0 + speed * math.sin(heading) * k * dt for k in range(n)]
    return make_track(vid, xs, ys, [scene.norm_angle(heading)] * n, [speed] * n, ts)


def random_future(rng, n=80, dt=0.1):
    """A smooth-ish random trajectory future for oracle tests."""
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(0.0, 20.0)
    x = rng.uniform(-30.0, 30.0)
    y = rng.uniform(-30.0, 30.0)
    points = []
    for k in range(n):
        heading = scene.norm_angle(heading + rng.normal(0.0, 0.02))
        speed = max(0.0, speed + rng.normal(0.0, 0.2))
        x += speed * math.cos(heading) * dt
        y += speed * math.sin(heading) * dt
        points.append(
            scene.TrajectoryPoint(x=x, y=y, heading=heading, speed=speed, t=k * dt)
        )
    return points


# 14-case labeled set: two seeds per behavior configuration.
LABELED_CASES = [
    ("lead", 1, "Emergency Braking"),
    ("lead", 2, "Emergency Braking"),
    ("follow", 1, "Close Car-following"),
    ("follow", 2, "Close Car-following"),
    ("adjacent", 1, "Aggressive Cut-in"),
    ("adjacent", 2, "Aggressive Cut-in"),
    ("opposite", 1, "Opposite Direction Intrusion"),
    ("opposite", 2, "Opposite Direction Intrusion"),
    ("laneshift", 1, "Straight Lane Shift"),
    ("laneshift", 2, "Straight Lane Shift"),
    ("gostraight", 1, "Intersection Rush-through Go-straight"),
    ("gostraight", 2, "Intersection Rush-through Go-straight"),
    ("turnleft", 1, "Intersection Rush-through Turn Left"),
    ("turnleft", 2, "Intersection Rush-through Turn Left"),
]


def campaign_scenarios():
    pairs = [
        (f"straight-{s:03d}", synthetic.synth_scenario("straight", s))
        for s in range(1, 21)
    ]
    pairs += [
        (f"intersection-{s:03d}", synthetic.synth_scenario("intersection", s))
        for s in range(1, 13)
    ]
    return pairs


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
