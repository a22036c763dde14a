"""Arithmetic on the unit Poincaré ball (curvature fixed at 1).

Every function takes tensors whose last axis holds the coordinates and
broadcasts over leading axes. Computation happens in float64; inputs of
any other floating dtype are upcast. All functions are built from
differentiable torch primitives, so partial derivatives come from
autograd.

Two guards keep values finite:

* ``EPS_BALL``: library outputs are rescaled onto the sphere of radius
  ``1 - EPS_BALL`` whenever they would land outside it. Derivatives
  through the rescale are those of the rescaled expression.
* ``EPS_ZERO``: below this norm a direction ``x / ||x||`` is undefined;
  the analytic limit of each formula at the origin is used instead.
"""

from __future__ import annotations

import torch

EPS_BALL = 1e-5
EPS_ZERO = 1e-12
MAX_NORM = 1.0 - EPS_BALL
# rescale target sits a few ulps inside MAX_NORM so rounding cannot overshoot
_TARGET_NORM = MAX_NORM - 4 * 2.0**-53

DTYPE = torch.float64


class DomainError(ValueError):
    """Input lies outside the domain of a ball operation."""


def as_tensor(x) -> torch.Tensor:
    """Return ``x`` as a float64 tensor, keeping autograd history."""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


def _norm(x: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(x, dim=-1, keepdim=True)


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not bool(torch.isfinite(x).all()):
        raise DomainError(f"{what}: non-finite input")


def project(x: torch.Tensor) -> torch.Tensor:
    """Rescale rows with norm above ``1 - EPS_BALL`` back onto that radius."""
    norm = _norm(x)
    scale = torch.where(norm > MAX_NORM, _TARGET_NORM / norm.clamp_min(MAX_NORM), torch.ones_like(norm))
    return x * scale


def exp_origin(v) -> torch.Tensor:
    """Exponential map at the origin: ``tanh(||v||) v / ||v||``."""
    v = as_tensor(v)
    _check_finite(v, "exp_origin")
    norm = _norm(v)
    safe = norm.clamp_min(EPS_ZERO)
    radius = torch.tanh(safe).clamp_max(MAX_NORM)
    # tanh(n)/n -> 1 at the origin, so the identity is the limit there
    scale = torch.where(norm > EPS_ZERO, radius / safe, torch.ones_like(norm))
    return project(v * scale)


def log_origin(p) -> torch.Tensor:
    """Logarithmic map at the origin: ``artanh(||p||) p / ||p||``.

    Raises:
        DomainError: if any row has norm >= 1 or non-finite entries.
    """
    p = as_tensor(p)
    _check_finite(p, "log_origin")
    norm = _norm(p)
    if bool((norm >= 1.0).any()):
        raise DomainError("log_origin: point on or outside the unit sphere")
    safe = norm.clamp_min(EPS_ZERO)
    scale = torch.where(norm > EPS_ZERO, torch.atanh(safe) / safe, torch.ones_like(norm))
    return p * scale


def mobius_add(x, y) -> torch.Tensor:
    """Möbius addition ``x ⊕ y``. Neither commutative nor associative."""
    x = as_tensor(x)
    y = as_tensor(y)
    xy = (x * y).sum(dim=-1, keepdim=True)
    xx = (x * x).sum(dim=-1, keepdim=True)
    yy = (y * y).sum(dim=-1, keepdim=True)
    num = (1.0 + 2.0 * xy + yy) * x + (1.0 - xx) * y
    den = 1.0 + 2.0 * xy + xx * yy
    return project(num / den)


def mobius_scalar(r, x) -> torch.Tensor:
    """Möbius scalar multiplication ``r ⊗ x = tanh(r artanh||x||) x / ||x||``.

    ``r`` broadcasts against ``x[..., :1]``; pass shape ``(..., 1)`` for
    per-row scalars. ``r == 1`` returns ``x`` bit-exactly while keeping the
    derivative of the general formula.
    """
    x = as_tensor(x)
    r = as_tensor(r)
    norm = _norm(x)
    if bool((norm >= 1.0).any()):
        raise DomainError("mobius_scalar: point on or outside the unit sphere")
    safe = norm.clamp_min(EPS_ZERO)
    general = torch.tanh(r * torch.atanh(safe)) / safe
    # limit at the origin is r
    scale = torch.where(norm > EPS_ZERO, general, r * torch.ones_like(norm))
    scale = torch.where(r == 1.0, 1.0 + (scale - scale.detach()), scale)
    return project(scale * x)


def hyperbolic_distance(x, y) -> torch.Tensor:
    """Geodesic distance ``arcosh(1 + 2||x-y||^2 / ((1-||x||^2)(1-||y||^2)))``.

    Evaluated through ``arcosh(1 + z) = 2 asinh(sqrt(z / 2))``, which is
    exact at coincident points and has a finite (sub)gradient there.
    Returns a tensor without the coordinate axis.
    """
    x = as_tensor(x)
    y = as_tensor(y)
    diff = torch.linalg.vector_norm(x - y, dim=-1)
    xx = (x * x).sum(dim=-1)
    yy = (y * y).sum(dim=-1)
    den = (1.0 - xx) * (1.0 - yy)
    if bool((den <= 0.0).any()):
        raise DomainError("hyperbolic_distance: point on or outside the unit sphere")
    return 2.0 * torch.asinh(diff / torch.sqrt(den))


def pairwise_distance(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Distances between every row of ``q`` (..., n_q, d) and ``k`` (..., n_k, d)."""
    return hyperbolic_distance(q.unsqueeze(-2), k.unsqueeze(-3))


def mobius_matvec(w: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Apply a Euclidean matrix through the tangent space: ``exp0(W log0(x))``."""
    return exp_origin(log_origin(x) @ as_tensor(w).transpose(-1, -2))
