"""Second-level factor graph and its damped least-squares (LM) solver.

Variables: scan poses, marker poses, and marker corner positions, all in the
anchor/global frame.  Factors are Gaussian measurement constraints whose
residuals are whitened by the inverse square root of their covariance, so the
objective is half the squared norm of the stacked residual.  Pose residuals
use the rotation-first pose difference operator from :mod:`tagreg.geometry`;
point residuals subtract componentwise.

Jacobians are numeric (central differences in the local parameterization:
twist increments for poses via ``retract``, plain offsets for points).  The
normal equations are damped additively with ``lambda * diag(J^T J)`` and a
step is accepted only when it strictly decreases the cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi, MissingInitial, NonFiniteCost, SingularNormalEquations
from .geometry import Pose, apply, compose, inverse, pose_ominus, retract
from .initgraph import InitialValues
from .pose_svd import canonical_corners
from .tagdetect import MarkerObservation

log = logging.getLogger(__name__)

FACTOR_KINDS = (
    "prior_anchor",
    "marker_pose_obs",
    "corner_in_marker",
    "corner_in_scan",
    "anchor_relative",
)


@dataclass(frozen=True)
class NoiseConfig:
    """Per-factor-kind isotropic standard deviations (meters / radians)."""

    sigma_corner_scan: float = 0.02
    sigma_corner_marker: float = 0.002
    sigma_marker_rot: float = 0.02
    sigma_marker_trans: float = 0.01
    sigma_rel_rot: float = 0.05
    sigma_rel_trans: float = 0.03
    sigma_prior: float = 1e-6

    def __post_init__(self):
        for name, value in vars(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def scaled(self, factor: float) -> "NoiseConfig":
        """All covariances multiplied by ``factor`` (sigmas by its sqrt)."""
        s = float(np.sqrt(factor))
        return NoiseConfig(**{k: v * s for k, v in vars(self).items()})


@dataclass(frozen=True)
class Factor:
    """Gaussian constraint: kind, connected variable keys, measurement, whitener."""

    kind: str
    keys: tuple
    z: object  # Pose for 6-dim factors, (3,) ndarray for point factors
    sqrt_info: np.ndarray

    @staticmethod
    def from_covariance(kind: str, keys: tuple, z, cov: np.ndarray) -> "Factor":
        cov = np.asarray(cov, dtype=float)
        sqrt_info = np.linalg.inv(np.linalg.cholesky(cov))
        return Factor(kind=kind, keys=keys, z=z, sqrt_info=sqrt_info)

    @property
    def dim(self) -> int:
        return self.sqrt_info.shape[0]


@dataclass
class VariableSet:
    """Current estimates for every variable block."""

    scan_poses: dict[int, Pose]
    marker_poses: dict[int, Pose]
    corners: dict[tuple[int, int], np.ndarray]

    def copy(self) -> "VariableSet":
        return VariableSet(
            scan_poses=dict(self.scan_poses),
            marker_poses=dict(self.marker_poses),
            corners=dict(self.corners),
        )


def _pose_cov(sigma_rot: float, sigma_trans: float) -> np.ndarray:
    return np.diag([sigma_rot**2] * 3 + [sigma_trans**2] * 3)


def build_graph(
    observations: list[MarkerObservation],
    init: InitialValues,
    noise: NoiseConfig,
    side: float,
    anchor: int | None = None,
    weight_rel_by_path: bool = False,
) -> tuple[VariableSet, list[Factor]]:
    """Assemble variables and factors from the observations and initial values.

    Per observation: one marker-pose factor and four corner-in-scan factors.
    Per marker: four corner-in-marker factors against the canonical corners.
    Plus the anchor prior and one anchor-relative factor per non-anchor scan.
    """
    if anchor is None:
        anchor = min(init.scan_poses)
    variables = VariableSet(
        scan_poses=dict(init.scan_poses),
        marker_poses=dict(init.marker_poses),
        corners={k: np.asarray(v, dtype=float) for k, v in init.corners.items()},
    )
    if anchor not in variables.scan_poses:
        raise MissingInitial(f"anchor scan {anchor} has no initial pose")
    factors: list[Factor] = [
        Factor.from_covariance(
            "prior_anchor",
            (("scan", anchor),),
            Pose.identity(),
            noise.sigma_prior**2 * np.eye(6),
        )
    ]
    mean_path = None
    if weight_rel_by_path and init.path_weights:
        weights = [w for i, w in init.path_weights.items() if i != anchor]
        mean_path = float(np.mean(weights)) if weights else None
    anchor_inv = inverse(variables.scan_poses[anchor])
    for scan_id in sorted(variables.scan_poses):
        if scan_id == anchor:
            continue
        z = compose(anchor_inv, variables.scan_poses[scan_id])
        cov = _pose_cov(noise.sigma_rel_rot, noise.sigma_rel_trans)
        if mean_path and mean_path > 0:
            cov = cov * (1.0 + init.path_weights.get(scan_id, 0.0) / mean_path)
        factors.append(
            Factor.from_covariance(
                "anchor_relative", (("scan", anchor), ("scan", scan_id)), z, cov
            )
        )
    for obs in sorted(observations, key=lambda o: (o.scan_id, o.marker_id)):
        if obs.scan_id not in variables.scan_poses:
            raise MissingInitial(f"scan {obs.scan_id} missing an initial pose")
        if obs.marker_id not in variables.marker_poses:
            raise MissingInitial(f"marker {obs.marker_id} missing an initial pose")
        factors.append(
            Factor.from_covariance(
                "marker_pose_obs",
                (("scan", obs.scan_id), ("marker", obs.marker_id)),
                obs.pose,
                _pose_cov(noise.sigma_marker_rot, noise.sigma_marker_trans),
            )
        )
        for s in range(4):
            key = ("corner", (obs.marker_id, s + 1))
            if (obs.marker_id, s + 1) not in variables.corners:
                raise MissingInitial(f"corner {key} missing an initial value")
            factors.append(
                Factor.from_covariance(
                    "corner_in_scan",
                    (("scan", obs.scan_id), key),
                    obs.corners3d[s].copy(),
                    noise.sigma_corner_scan**2 * np.eye(3),
                )
            )
    base = canonical_corners(side)
    for marker_id in sorted(variables.marker_poses):
        for s in range(4):
            factors.append(
                Factor.from_covariance(
                    "corner_in_marker",
                    (("marker", marker_id), ("corner", (marker_id, s + 1))),
                    base[s].copy(),
                    noise.sigma_corner_marker**2 * np.eye(3),
                )
            )
    return variables, factors


def _get(vars: VariableSet, key):
    kind, name = key
    if kind == "scan":
        return vars.scan_poses[name]
    if kind == "marker":
        return vars.marker_poses[name]
    return vars.corners[name]


def _with(vars: VariableSet, key, value) -> VariableSet:
    out = vars.copy()
    kind, name = key
    if kind == "scan":
        out.scan_poses[name] = value
    elif kind == "marker":
        out.marker_poses[name] = value
    else:
        out.corners[name] = value
    return out


def residual(f: Factor, vars: VariableSet) -> np.ndarray:
    """Whitened residual of one factor at the current variables."""
    if f.kind == "prior_anchor":
        pose = _get(vars, f.keys[0])
        raw = pose_ominus(pose, f.z).vector()
    elif f.kind == "marker_pose_obs":
        scan = _get(vars, f.keys[0])
        marker = _get(vars, f.keys[1])
        predicted = compose(inverse(scan), marker)
        raw = pose_ominus(predicted, f.z).vector()
    elif f.kind == "anchor_relative":
        anchor = _get(vars, f.keys[0])
        scan = _get(vars, f.keys[1])
        predicted = compose(inverse(anchor), scan)
        raw = pose_ominus(predicted, f.z).vector()
    elif f.kind == "corner_in_marker":
        marker = _get(vars, f.keys[0])
        corner = _get(vars, f.keys[1])
        raw = apply(inverse(marker), corner) - f.z
    elif f.kind == "corner_in_scan":
        scan = _get(vars, f.keys[0])
        corner = _get(vars, f.keys[1])
        raw = apply(inverse(scan), corner) - f.z
    else:
        raise ValueError(f"unknown factor kind {f.kind!r}")
    return f.sqrt_info @ raw


def _blocks(vars: VariableSet) -> list[tuple[tuple, int]]:
    out = [(("scan", i), 6) for i in sorted(vars.scan_poses)]
    out += [(("marker", j), 6) for j in sorted(vars.marker_poses)]
    out += [(("corner", key), 3) for key in sorted(vars.corners)]
    return out


def _perturbed(vars: VariableSet, key, dim: int, axis: int, step: float) -> VariableSet:
    value = _get(vars, key)
    if dim == 6:
        delta = np.zeros(6)
        delta[axis] = step
        return _with(vars, key, retract(value, delta))
    moved = value.copy()
    moved[axis] += step
    return _with(vars, key, moved)


def stack_residuals(factors: list[Factor], vars: VariableSet) -> np.ndarray:
    return np.concatenate([residual(f, vars) for f in factors])


def total_cost(factors: list[Factor], vars: VariableSet) -> float:
    r = stack_residuals(factors, vars)
    return 0.5 * float(r @ r)


def jacobian(
    vars: VariableSet,
    factors: list[Factor],
    method: str = "central",
    h: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference Jacobian of the stacked whitened residual.

    Columns follow the deterministic block ordering (scans, markers, corners);
    pose columns are with respect to right-multiplicative twist increments.
    Returns (J, r) at the current variables.
    """
    if method not in ("central", "forward"):
        raise ValueError(f"unknown method {method!r}")
    blocks = _blocks(vars)
    offsets = {}
    n = 0
    for key, dim in blocks:
        offsets[key] = (n, dim)
        n += dim
    rows = []
    m = 0
    for f in factors:
        rows.append(m)
        m += f.dim
    J = np.zeros((m, n))
    r0 = stack_residuals(factors, vars)
    for fi, f in enumerate(factors):
        row = rows[fi]
        base = r0[row : row + f.dim]
        for key in dict.fromkeys(f.keys):
            off, dim = offsets[key]
            for axis in range(dim):
                plus = residual(f, _perturbed(vars, key, dim, axis, h))
                if method == "central":
                    minus = residual(f, _perturbed(vars, key, dim, axis, -h))
                    col = (plus - minus) / (2.0 * h)
                else:
                    col = (plus - base) / h
                J[row : row + f.dim, off + axis] = col
    return J, r0


def retract_all(vars: VariableSet, delta: np.ndarray) -> VariableSet:
    """Apply a stacked tangent step using the block ordering of jacobian()."""
    out = vars.copy()
    offset = 0
    for key, dim in _blocks(vars):
        step = delta[offset : offset + dim]
        kind, name = key
        if dim == 6:
            if kind == "scan":
                out.scan_poses[name] = retract(out.scan_poses[name], step)
            else:
                out.marker_poses[name] = retract(out.marker_poses[name], step)
        else:
            out.corners[name] = out.corners[name] + step
        offset += dim
    return out


@dataclass(frozen=True)
class LMOptions:
    max_iters: int = 100
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    tol_cost: float = 1e-10
    tol_step: float = 1e-10
    lambda_max: float = 1e12
    fd_step: float = 1e-6
    grad_tol: float = 1e-12


@dataclass
class LMResult:
    variables: VariableSet
    cost: float
    n_iters: int
    converged: bool
    log: list[str] = field(default_factory=list)

    def log_text(self) -> str:
        return "\n".join(self.log) + "\n"


def solve_lm(
    vars: VariableSet, factors: list[Factor], opts: LMOptions = LMOptions()
) -> LMResult:
    """Levenberg-Marquardt over the stacked whitened residual.

    Accepted steps strictly decrease the cost; the solver stops on a small
    cost change, a small step, a vanishing gradient, or the iteration cap.
    The log holds one ``iter cost lambda step_norm accepted`` line per trial.
    """
    current = vars.copy()
    cost = total_cost(factors, current)
    if not np.isfinite(cost):
        raise NonFiniteCost(f"initial cost is {cost}")
    lam = opts.lambda0
    lines: list[str] = []
    converged = False
    it = 0
    while it < opts.max_iters and not converged:
        it += 1
        J, r = jacobian(current, factors, method="central", h=opts.fd_step)
        g = J.T @ r
        if float(np.max(np.abs(g))) < opts.grad_tol:
            converged = True
            break
        A0 = J.T @ J
        damp = np.clip(np.diag(A0), 1e-12, None)
        while True:
            A = A0 + lam * np.diag(damp)
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                delta = None
            step_norm = float(np.linalg.norm(delta)) if delta is not None else float("inf")
            accepted = False
            new_cost = cost
            if delta is not None and np.all(np.isfinite(delta)):
                if step_norm < opts.tol_step:
                    converged = True
                    lines.append(f"{it} {cost:.12e} {lam:.3e} {step_norm:.3e} 0")
                    break
                try:
                    candidate = retract_all(current, delta)
                    new_cost = total_cost(factors, candidate)
                    accepted = bool(np.isfinite(new_cost) and new_cost < cost)
                except AngleNearPi:
                    accepted = False
            lines.append(
                f"{it} {(new_cost if accepted else cost):.12e} {lam:.3e} {step_norm:.3e} "
                f"{int(accepted)}"
            )
            if accepted:
                improvement = cost - new_cost
                current = candidate
                cost = new_cost
                lam = max(lam * opts.lambda_down, 1e-15)
                if improvement < opts.tol_cost or step_norm < opts.tol_step:
                    converged = True
                break
            lam *= opts.lambda_up
            if lam > opts.lambda_max:
                raise SingularNormalEquations(
                    f"damping exhausted at iteration {it} (lambda > {opts.lambda_max:g})"
                )
    return LMResult(variables=current, cost=cost, n_iters=it, converged=converged, log=lines)
