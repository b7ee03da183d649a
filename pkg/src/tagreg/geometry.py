"""Rigid-body transforms: rotation exp/log, pose algebra, and the pose residual.

Conventions used everywhere in this package:

* A rotation is a plain ``(3, 3)`` float ndarray, orthonormal with det +1.
* A :class:`Pose` maps points from its own frame into the parent frame:
  ``x_parent = r @ x + t``.
* A :class:`Twist` is a 6-DOF tangent increment with the rotation coordinates
  first, then the translation.  The same ordering is used for stacked residual
  vectors and covariance matrices.
* ``pose_ominus(a, b)`` is the residual of ``a`` expressed in the local frame
  of ``b``: rotation-log and translation of ``inverse(b) @ a``.
* ``retract(p, delta)`` applies the increment on the right: ``p * Exp(delta)``
  with ``Exp(delta) = Pose(exp_rotation(delta.rot), delta.trans)``.  It is the
  exact inverse of ``pose_ominus`` (``retract(b, a ominus b) == a``).

The principal branch of the rotation logarithm requires the geodesic angle to
stay below pi; :class:`~tagreg.errors.AngleNearPi` is raised otherwise and the
caller is expected to re-anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi, FormatError

# Angles below this use the series limit of theta / (2 sin theta) -> 1/2.
SMALL_ANGLE = 1e-7
# Principal-branch guard for the rotation logarithm.
ANGLE_BRANCH_LIMIT = np.pi - 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ x == cross(v, x)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_rotation(xi: np.ndarray) -> np.ndarray:
    """Rodrigues formula mapping axis-angle coordinates to a rotation matrix."""
    xi = np.asarray(xi, dtype=float)
    theta = float(np.linalg.norm(xi))
    s = skew(xi)
    if theta < SMALL_ANGLE:
        # Second-order series; error O(theta^3) is far below 1e-9 here.
        return np.eye(3) + s + 0.5 * (s @ s)
    s_unit = s / theta
    return np.eye(3) + np.sin(theta) * s_unit + (1.0 - np.cos(theta)) * (s_unit @ s_unit)


def log_rotation(r: np.ndarray) -> np.ndarray:
    """Axis-angle coordinates of a rotation matrix (principal branch).

    Raises:
        AngleNearPi: if the geodesic angle reaches ``pi - 1e-6``, where the
            closed form ``theta / (2 sin theta) * (R - R^T)`` is singular.
    """
    r = np.asarray(r, dtype=float)
    cos_theta = 0.5 * (np.trace(r) - 1.0)
    theta = float(np.arccos(np.clip(cos_theta, -1.0, 1.0)))
    if theta >= ANGLE_BRANCH_LIMIT:
        raise AngleNearPi(f"rotation angle {theta:.9f} rad is too close to pi")
    anti = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < SMALL_ANGLE:
        return 0.5 * anti
    return (theta / (2.0 * np.sin(theta))) * anti


def rotation_is_valid(r: np.ndarray, tol: float = 1e-9) -> bool:
    """Orthonormality and det(+1) check at the given per-entry tolerance."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    if not np.all(np.abs(r @ r.T - np.eye(3)) < tol):
        return False
    return abs(float(np.linalg.det(r)) - 1.0) < tol


@dataclass(frozen=True)
class Pose:
    """Rigid transform with rotation ``r`` (3x3) and translation ``t`` (3,)."""

    r: np.ndarray
    t: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form."""
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m


@dataclass(frozen=True)
class Twist:
    """Tangent increment: rotation coordinates first, translation second."""

    rot: np.ndarray
    trans: np.ndarray

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float)
        return Twist(v[:3].copy(), v[3:6].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))


def apply(p: Pose, x: np.ndarray) -> np.ndarray:
    """Transform a point (3,) or point array (N, 3) by the pose."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return p.r @ x + p.t
    return x @ p.r.T + p.t


def compose(a: Pose, b: Pose) -> Pose:
    """Pose product: ``apply(compose(a, b), x) == apply(a, apply(b, x))``."""
    return Pose(a.r @ b.r, a.r @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return Pose(p.r.T, -(p.r.T @ p.t))


def pose_ominus(a: Pose, b: Pose) -> Twist:
    """Residual of ``a`` relative to ``b``: log/translation of ``b^-1 a``."""
    rel = compose(inverse(b), a)
    return Twist(log_rotation(rel.r), rel.t.copy())


def retract(p: Pose, delta) -> Pose:
    """Right-multiplicative update ``p * Exp(delta)``.

    ``delta`` may be a :class:`Twist` or a 6-vector (rotation first).
    """
    if not isinstance(delta, Twist):
        delta = Twist.from_vector(delta)
    inc = Pose(exp_rotation(delta.rot), np.asarray(delta.trans, dtype=float))
    return compose(p, inc)


def format_pose(p: Pose) -> str:
    """12 whitespace-separated decimals, row-major 3x4 ``(R | t)``."""
    m = np.hstack([p.r, p.t.reshape(3, 1)])
    return " ".join(f"{v:.17g}" for v in m.reshape(-1))


def parse_pose(text: str, tol: float = 1e-6) -> Pose:
    """Parse the 12-number pose line; accepts scientific notation."""
    tokens = text.split()
    if len(tokens) != 12:
        raise FormatError(f"pose line needs 12 numbers, got {len(tokens)}")
    try:
        vals = np.array([float(tok) for tok in tokens])
    except ValueError as exc:
        raise FormatError(f"bad number in pose line: {exc}") from exc
    m = vals.reshape(3, 4)
    r, t = m[:, :3], m[:, 3]
    if not rotation_is_valid(r, tol=tol):
        raise FormatError("pose line does not contain an orthonormal rotation")
    return Pose(r, t)
