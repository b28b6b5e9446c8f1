"""Rotations on SO(3) and the pinhole camera model.

Quaternions are plain numpy arrays of shape (4,) in (w, x, y, z) order,
Hamilton convention, normalized with w >= 0 (tie broken by the first
nonzero of x, y, z). Rotation matrices are 3x3 row-major arrays with
x_cam = R @ x_world + t. All constructors return canonical values; the
functions never mutate their inputs.
"""

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6

# Angle below which exp/log switch to their Taylor branches.
SMALL_ANGLE = 1e-6

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class BehindCameraError(ValueError):
    """Raised when a projected point has camera-frame depth z <= 0."""


def quat_normalize(q):
    """Normalize to unit length and the canonical hemisphere (w >= 0)."""
    q = np.asarray(q, dtype=float)
    assert q.shape == (4,), q.shape
    n = np.sqrt(np.dot(q, q))
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    q = q / n
    for c in q:
        if c > 0.0:
            break
        if c < 0.0:
            q = -q
            break
    return q


def quat_mul(p, q):
    """Hamilton product; composes rotations (apply q first, then p)."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return quat_normalize(np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ]))


def quat_conj(q):
    """Conjugate; equals the inverse for unit quaternions."""
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate a 3-vector by a unit quaternion."""
    u = np.asarray(q[1:], dtype=float)
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Convert a rotation matrix to the canonical unit quaternion.

    Rejects input whose orthonormality residual exceeds ORTHO_TOL. Uses
    the eigenvector-free Shepperd branch selection for stability near
    180-degree rotations.
    """
    R = np.asarray(R, dtype=float)
    assert R.shape == (3, 3), R.shape
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
        raise ValueError("matrix is not orthonormal within ORTHO_TOL")
    if np.linalg.det(R) < 0.0:
        raise ValueError("matrix has negative determinant (reflection)")
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > max(R[0, 0], R[1, 1], R[2, 2]):
        w = 0.5 * np.sqrt(1.0 + tr)
        s = 0.25 / w
        q = np.array([w,
                      s * (R[2, 1] - R[1, 2]),
                      s * (R[0, 2] - R[2, 0]),
                      s * (R[1, 0] - R[0, 1])])
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        u = 0.5 * np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        s = 0.25 / u
        q = np.empty(4)
        q[0] = s * (R[k, j] - R[j, k])
        q[1 + i] = u
        q[1 + j] = s * (R[j, i] + R[i, j])
        q[1 + k] = s * (R[k, i] + R[i, k])
    return quat_normalize(q)


def exp_map(v):
    """Axis-angle 3-vector (magnitude = angle, radians) to quaternion."""
    v = np.asarray(v, dtype=float)
    assert v.shape == (3,), v.shape
    angle = np.sqrt(np.dot(v, v))
    half = 0.5 * angle
    if angle < SMALL_ANGLE:
        # sin(a/2)/a = 1/2 - a^2/48 + O(a^4)
        k = 0.5 - angle * angle / 48.0
    else:
        k = np.sin(half) / angle
    return quat_normalize(np.array([np.cos(half), k * v[0], k * v[1], k * v[2]]))


def log_map(q):
    """Quaternion to axis-angle 3-vector with magnitude in [0, pi].

    At exactly pi the axis sign is ambiguous; the canonical-hemisphere
    input (w >= 0) plus the vector part as stored picks one
    deterministically. Non-continuous there, by construction.
    """
    q = quat_normalize(q)
    w = min(q[0], 1.0)
    vn = np.sqrt(max(1.0 - w * w, 0.0))
    angle = 2.0 * np.arctan2(vn, w)
    if vn < 0.5 * SMALL_ANGLE:
        # angle/sin(angle/2) = 2 + angle^2/12 + O(angle^4)
        k = 2.0 + angle * angle / 12.0
    else:
        k = angle / vn
    return k * q[1:]


def d_q(p, q):
    """Quaternion distance min(|p - q|, |p + q|); sign-invariant, in [0, sqrt(2)]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return min(np.linalg.norm(p - q), np.linalg.norm(p + q))


def geodesic_angle(p, q):
    """Rotation angle (radians) taking rotation q to rotation p."""
    return np.linalg.norm(log_map(quat_mul(p, quat_conj(q))))


def random_quat(rng):
    """Uniform random rotation as a canonical unit quaternion."""
    return quat_normalize(rng.normal(size=4))


def relative_rotation(R_i, R_j):
    """Relative rotation R_j R_i^T (camera j's orientation in camera i terms)."""
    return np.asarray(R_j) @ np.asarray(R_i).T


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera pose with pinhole intrinsics (pixels)."""

    rotation: np.ndarray       # 3x3, x_cam = R @ x_world + t
    translation: np.ndarray    # (3,)
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        assert R.shape == (3, 3) and t.shape == (3,)
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within ORTHO_TOL")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be strictly positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def center(self):
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation


def project(pose, X):
    """Pinhole projection of world point X to pixel (u, v).

    Raises BehindCameraError when the camera-frame depth is <= 0.
    """
    x_cam = pose.rotation @ np.asarray(X, dtype=float) + pose.translation
    z = x_cam[2]
    if z <= 0.0:
        raise BehindCameraError(f"point behind camera (z={z:.6g})")
    u = pose.fx * x_cam[0] / z + pose.cx
    v = pose.fy * x_cam[1] / z + pose.cy
    return u, v
