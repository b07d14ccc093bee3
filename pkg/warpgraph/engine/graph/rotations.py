import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMAL_DRIFT = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices [v]x for v of shape (..., 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """exp([omega]x) for omega of shape (3,) or (N, 3)."""
    omega = np.asarray(omega, dtype=np.float64)
    return Rotation.from_rotvec(omega).as_matrix()


def reorthonormalize(rot: np.ndarray) -> np.ndarray:
    """Projects rotations with drift above ORTHONORMAL_DRIFT back onto SO(3)."""
    rot = np.array(rot, dtype=np.float64, copy=True)
    gram = np.einsum("nji,njk->nik", rot, rot) - np.eye(3)
    drifted = np.abs(gram).max(axis=(1, 2)) > ORTHONORMAL_DRIFT
    if np.any(drifted):
        u, _, vt = np.linalg.svd(rot[drifted])
        flip = np.linalg.det(u @ vt) < 0
        u[flip, :, -1] *= -1
        rot[drifted] = u @ vt
    return rot


def rotations_from_covariance(cov: np.ndarray) -> np.ndarray:
    """Kabsch solution R = V diag(1, 1, s) U^T for H = U S V^T, H of shape (N, 3, 3)."""
    u, _, vt = np.linalg.svd(cov)
    v = np.swapaxes(vt, -1, -2)
    ut = np.swapaxes(u, -1, -2)
    sign = np.sign(np.linalg.det(v @ ut))
    sign[sign == 0] = 1.0
    correction = np.tile(np.eye(3), (cov.shape[0], 1, 1))
    correction[:, 2, 2] = sign
    return v @ correction @ ut
