"""Skin light-reflection model for infrared-absorbing ink.

Reflected radiance under a single NIR source is modeled as a Lambertian term
plus a Beckmann microfacet specular lobe:

    f = diffuse + D(theta_h) * F(theta_d) * G(theta_l, theta_v)
                  / (4 * cos(theta_l) * cos(theta_v))

with D the Beckmann normal distribution, F the Schlick Fresnel approximation
and G the Smith separable shadowing-masking term (rational Beckmann fit).
The planar-geometry convention treats light and view directions as polar
angles off the surface normal: theta_h = |theta_l - theta_v| / 2 and
theta_d = (theta_l + theta_v) / 2.

Ink application darkens only the masked region: each covered pixel becomes
clamp(intensity * f * (1 - ink_absorption) * original, 0, 1). With the
defaults this multiplies covered skin by roughly 0.094, matching how strongly
the ink soaks up NIR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, GrazingSingularity, InvalidAngle
from .image import BinaryMask, NirImage

HALF_PI = math.pi / 2.0
GRAZING_EPS = 1e-6

# crossover of the rational Smith-Beckmann fit; above this the term is 1
_SMITH_A_CUTOFF = 1.6


@dataclass(frozen=True)
class ReflectanceParams:
    """Material and rig parameters; defaults approximate skin under a
    head-on 850 nm source."""

    intensity: float = 1.0
    roughness: float = 0.35
    f0: float = 0.04
    diffuse: float = 0.6
    light_angle: float = 0.1
    view_angle: float = 0.1
    ink_absorption: float = 0.85

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError(f"intensity must be >= 0, got {self.intensity}")
        if self.roughness <= 0:
            raise ValueError(f"roughness must be > 0, got {self.roughness}")
        if not 0.0 <= self.f0 <= 1.0:
            raise ValueError(f"f0 must be in [0, 1], got {self.f0}")
        if self.diffuse < 0:
            raise ValueError(f"diffuse must be >= 0, got {self.diffuse}")
        if not 0.0 <= self.ink_absorption <= 1.0:
            raise ValueError(f"ink_absorption must be in [0, 1], got {self.ink_absorption}")
        for name in ("light_angle", "view_angle"):
            v = getattr(self, name)
            if not 0.0 <= v < HALF_PI:
                raise ValueError(f"{name} must be in [0, pi/2), got {v}")


def beckmann_d(half_angle: float, roughness: float) -> float:
    """Beckmann normal distribution; integrates to 1 against
    cos(theta) sin(theta) dtheta dphi over the hemisphere."""
    if not 0.0 <= half_angle < HALF_PI:
        raise InvalidAngle(f"half_angle must be in [0, pi/2), got {half_angle}")
    if roughness <= 0:
        raise InvalidAngle(f"roughness must be > 0, got {roughness}")
    c = math.cos(half_angle)
    t = math.tan(half_angle)
    a2 = roughness * roughness
    return math.exp(-(t * t) / a2) / (math.pi * a2 * c**4)


def fresnel_f(diff_angle: float, f0: float) -> float:
    """Schlick approximation: f0 + (1 - f0) * (1 - cos)^5."""
    if not 0.0 <= diff_angle <= HALF_PI:
        raise InvalidAngle(f"diff_angle must be in [0, pi/2], got {diff_angle}")
    if not 0.0 <= f0 <= 1.0:
        raise InvalidAngle(f"f0 must be in [0, 1], got {f0}")
    return f0 + (1.0 - f0) * (1.0 - math.cos(diff_angle)) ** 5


def _smith_g1(angle: float, roughness: float) -> float:
    # a = 1/(roughness * tan) >= cutoff, tested without dividing so that a
    # subnormal angle cannot underflow the denominator into a zero division
    denom = roughness * math.tan(angle)
    if denom * _SMITH_A_CUTOFF <= 1.0:
        return 1.0
    a = 1.0 / denom
    # the rational fit overshoots 1 by ~6e-5 just below the cutoff
    return min(1.0, a * (3.535 + 2.181 * a) / (1.0 + a * (2.276 + 2.577 * a)))


def geometry_g(light_angle: float, view_angle: float, roughness: float) -> float:
    """Smith separable shadowing-masking, rational Beckmann fit per direction."""
    for name, v in (("light_angle", light_angle), ("view_angle", view_angle)):
        if not 0.0 <= v < HALF_PI:
            raise InvalidAngle(f"{name} must be in [0, pi/2), got {v}")
    if roughness <= 0:
        raise InvalidAngle(f"roughness must be > 0, got {roughness}")
    return _smith_g1(light_angle, roughness) * _smith_g1(view_angle, roughness)


def brdf(params: ReflectanceParams) -> float:
    """Diffuse plus specular reflectance for the configured rig angles."""
    cos_l = math.cos(params.light_angle)
    cos_v = math.cos(params.view_angle)
    denom = 4.0 * cos_l * cos_v
    if cos_l * cos_v < GRAZING_EPS:
        raise GrazingSingularity(
            f"cos(light)*cos(view)={cos_l * cos_v:.2e} below {GRAZING_EPS}"
        )
    half_angle = abs(params.light_angle - params.view_angle) / 2.0
    diff_angle = (params.light_angle + params.view_angle) / 2.0
    spec = (
        beckmann_d(half_angle, params.roughness)
        * fresnel_f(diff_angle, params.f0)
        * geometry_g(params.light_angle, params.view_angle, params.roughness)
        / denom
    )
    return params.diffuse + spec


def ink_scale(params: ReflectanceParams) -> float:
    """Scalar multiplier applied to inked pixels."""
    return params.intensity * brdf(params) * (1.0 - params.ink_absorption)


def apply_ink(img: NirImage, mask: BinaryMask, params: ReflectanceParams) -> NirImage:
    """Darken masked pixels by the ink reflectance factor.

    Pixels outside the mask are copied bit-exactly; masked pixels become
    clamp(scale * original, 0, 1).
    """
    if (img.width, img.height) != (mask.width, mask.height):
        raise DimensionMismatch(
            f"image {img.width}x{img.height} vs mask {mask.width}x{mask.height}"
        )
    scale = ink_scale(params)
    out = img.data.copy()
    sel = mask.as_bool
    out[sel] = np.clip(out[sel] * scale, 0.0, 1.0)
    return NirImage(width=img.width, height=img.height, data=out)


def zero_ink(img: NirImage, mask: BinaryMask) -> NirImage:
    """Crude variant: masked pixels go straight to 0 (no reflection model)."""
    if (img.width, img.height) != (mask.width, mask.height):
        raise DimensionMismatch(
            f"image {img.width}x{img.height} vs mask {mask.width}x{mask.height}"
        )
    out = img.data.copy()
    out[mask.as_bool] = 0.0
    return NirImage(width=img.width, height=img.height, data=out)


def render_adversarial(
    img: NirImage, mask: BinaryMask, params: ReflectanceParams, ink_render: str = "lrm"
) -> NirImage:
    """Compose the adversarial image under the chosen ink model
    ('lrm' reflectance-based, 'zero' hard blackout)."""
    if ink_render == "lrm":
        return apply_ink(img, mask, params)
    if ink_render == "zero":
        return zero_ink(img, mask)
    raise ValueError(f"unknown ink_render mode {ink_render!r}")
