"""The three model problems: coefficients, sources, boundary data.

All data functions are vectorized over numpy coordinate arrays. Geometry that
the write-up fixes only pictorially (isolator frame, ring layers, channel
placement) is exposed as keyword overrides with documented defaults; the
chosen values are echoed in ProblemSpec.params.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

EPSILON = 0.05


@dataclass
class ProblemSpec:
    name: str
    coefficient: callable          # (x, y) -> array
    source: callable               # f
    dirichlet: callable            # g on the Dirichlet boundary
    neumann: callable              # q on the Neumann boundary, or None
    neumann_segments: tuple        # closed axis-aligned segments on the boundary
    epsilon: float
    params: dict = field(default_factory=dict)

    def key(self):
        items = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.name}({items})"


def mp1():
    """Oscillating Dirichlet data over a rapidly varying layered coefficient."""
    eps = EPSILON

    def coefficient(x, y):
        return 1.1 + 0.5 * np.sin(np.floor(x / eps)) + 0.5 * np.cos(2.0 * np.pi * x / eps)

    def source(x, y):
        return np.ones_like(np.asarray(x, dtype=float))

    def dirichlet(x, y):
        return (
            np.sin(2.0 * np.pi * x / eps)
            + np.cos(2.0 * np.pi * y / eps)
            + 0.5 * np.exp(x + y)
        )

    return ProblemSpec(
        name="mp1",
        coefficient=coefficient,
        source=source,
        dirichlet=dirichlet,
        neumann=None,
        neumann_segments=(),
        epsilon=eps,
        params={"epsilon": eps},
    )


def mp2(
    frame_offset=EPSILON,
    frame_thickness=EPSILON,
    ring_width=EPSILON,
    ring_radius=0.25,
    ring_high_first=True,
):
    """Isolating frame near the boundary plus concentric conductivity rings.

    Defaults (all read off the picture, hence configurable): the frame is
    closed on all four sides, `frame_offset` away from the boundary and
    `frame_thickness` thick, conductivity 0.01; inside radius `ring_radius`
    around the center the coefficient alternates between 1 and 0.1 in rings
    of width `ring_width`, starting with 1 at the center.
    """
    eps = EPSILON

    def coefficient(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        a = 0.1 * (2.0 + np.cos(2.0 * np.pi * x / eps))
        d = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
        ring = np.floor(d / ring_width).astype(np.int64)
        hi = (ring % 2 == 0) if ring_high_first else (ring % 2 == 1)
        a = np.where(d <= ring_radius, np.where(hi, 1.0, 0.1), a)
        edge = np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))
        frame = (edge >= frame_offset) & (edge <= frame_offset + frame_thickness)
        return np.where(frame, 0.01, a)

    def source(x, y):
        x = np.asarray(x, dtype=float)
        inside = (x - 0.5) ** 2 + (np.asarray(y, dtype=float) - 0.5) ** 2 <= 0.05 ** 2
        return np.where(inside, 20.0, 0.0)

    def dirichlet(x, y):
        return np.asarray(x, dtype=float)

    return ProblemSpec(
        name="mp2",
        coefficient=coefficient,
        source=source,
        dirichlet=dirichlet,
        neumann=None,
        neumann_segments=(),
        epsilon=eps,
        params={
            "epsilon": eps,
            "frame_offset": frame_offset,
            "frame_thickness": frame_thickness,
            "ring_width": ring_width,
            "ring_radius": ring_radius,
            "ring_high_first": ring_high_first,
        },
    )


def mp3(
    channel_length=0.8,
    channel_value=20.0,
    isolator_x=0.5,
    isolator_y0=0.35,
    isolator_length=0.3,
    isolator_value=0.01,
):
    """Neumann inflow into two conductor channels blocked by an isolator.

    The two horizontal conductors (thickness epsilon, default length 0.8,
    conductivity 20) start at the inflow boundary x=0 and are aligned with the
    two inflow stripes. The vertical isolator (thickness epsilon, default
    length 0.3, conductivity 0.01) is centered by default; its placement is
    configurable because it is fixed only pictorially.
    """
    eps = EPSILON

    def coefficient(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = np.floor(x / eps) + np.floor(y / eps)
        a = (
            1.2
            + 0.5 * np.sin(np.floor(x + y) + s)
            + 0.5 * np.cos(np.floor(x - y) + s)
        )
        in_channel = (x <= channel_length) & (
            ((y >= 0.2) & (y <= 0.2 + eps)) | ((y >= 0.8 - eps) & (y <= 0.8))
        )
        a = np.where(in_channel, channel_value, a)
        in_isolator = (
            (np.abs(x - isolator_x) <= eps / 2.0)
            & (y >= isolator_y0)
            & (y <= isolator_y0 + isolator_length)
        )
        return np.where(in_isolator, isolator_value, a)

    def source(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    def dirichlet(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    def neumann(x, y):
        y = np.asarray(y, dtype=float)
        stripe = ((y >= 0.2) & (y <= 0.2 + eps)) | ((y >= 0.8 - eps) & (y <= 0.8))
        return np.where(stripe, 2.0, 0.0)

    return ProblemSpec(
        name="mp3",
        coefficient=coefficient,
        source=source,
        dirichlet=dirichlet,
        neumann=neumann,
        neumann_segments=(((0.0, 0.0), (0.0, 1.0)),),
        epsilon=eps,
        params={
            "epsilon": eps,
            "channel_length": channel_length,
            "channel_value": channel_value,
            "isolator_x": isolator_x,
            "isolator_y0": isolator_y0,
            "isolator_length": isolator_length,
            "isolator_value": isolator_value,
        },
    )


_BUILDERS = {"mp1": mp1, "mp2": mp2, "mp3": mp3}


def by_name(name, **overrides):
    if name not in _BUILDERS:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(_BUILDERS)}")
    return _BUILDERS[name](**overrides)
