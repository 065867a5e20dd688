"""
4D rotor algebra.

Rotors are handled as float64 arrays shaped (..., 8) with coefficient order
(s, b01, b02, b12, b03, b13, b23, p). Every entry of the 4x4 rotation matrix
is a quadratic form in these coefficients, so the matrix and its Jacobian are
both read off one table of symmetric 8x8 forms.
"""
from typing import Union

import numpy as np

from .errors import NonFiniteError, NotNormalizedError, NotUnitError, ShapeMismatchError, ZeroRotorError
from .models import BivectorPlane, Rotor4

S, B01, B02, B12, B03, B13, B23, P = range(8)

EPS_ZERO = 1e-12
NORM_TOL = 1e-9
MATRIX_TOL = 1e-6

RotorLike = Union[Rotor4, np.ndarray]


def _symmetric_form(terms) -> np.ndarray:
    form = np.zeros((8, 8))
    for coeff, a, b in terms:
        if a == b:
            form[a, a] += coeff
        else:
            form[a, b] += 0.5 * coeff
            form[b, a] += 0.5 * coeff
    return form


def _squares(signs) -> list:
    return [(sign, k, k) for k, sign in enumerate(signs)]


# Signs of (s, b01, b02, b12, b03, b13, b23, p) squared on the diagonal entries.
_MATRIX_TERMS = {
    (0, 0): _squares((1, -1, -1, 1, -1, 1, 1, -1)),
    (0, 1): [(2, B01, S), (-2, B02, B12), (-2, B03, B13), (2, B23, P)],
    (0, 2): [(2, B01, B12), (2, B02, S), (-2, B03, B23), (-2, B13, P)],
    (0, 3): [(2, B01, B13), (2, B02, B23), (2, B03, S), (2, B12, P)],
    (1, 0): [(-2, B01, S), (-2, B02, B12), (-2, B03, B13), (-2, B23, P)],
    (1, 1): _squares((1, -1, 1, -1, 1, -1, 1, -1)),
    (1, 2): [(-2, B01, B02), (2, B03, P), (2, B12, S), (-2, B13, B23)],
    (1, 3): [(-2, B01, B03), (-2, B02, P), (2, B12, B23), (2, B13, S)],
    (2, 0): [(2, B01, B12), (-2, B02, S), (-2, B03, B23), (2, B13, P)],
    (2, 1): [(-2, B01, B02), (-2, B03, P), (-2, B12, S), (-2, B13, B23)],
    (2, 2): _squares((1, 1, -1, -1, 1, 1, -1, -1)),
    (2, 3): [(2, B01, P), (-2, B02, B03), (-2, B12, B13), (2, B23, S)],
    (3, 0): [(2, B01, B13), (2, B02, B23), (-2, B03, S), (-2, B12, P)],
    (3, 1): [(-2, B01, B03), (2, B02, P), (2, B12, B23), (-2, B13, S)],
    (3, 2): [(-2, B01, P), (-2, B02, B03), (-2, B12, B13), (-2, B23, S)],
    (3, 3): _squares((1, 1, 1, 1, -1, -1, -1, -1)),
}

MATRIX_FORMS = np.zeros((4, 4, 8, 8))
for (_i, _j), _terms in _MATRIX_TERMS.items():
    MATRIX_FORMS[_i, _j] = _symmetric_form(_terms)
_FORMS_FLAT = MATRIX_FORMS.reshape(128, 8)

# Gradient of the bivector constraint is EPSILON_PERM @ r, and EPSILON_PERM @ EPSILON_PERM = I.
EPSILON_PERM = np.zeros((8, 8))
for _a, _b, _sign in ((S, P, 1.0), (B01, B23, -1.0), (B02, B13, 1.0), (B03, B12, -1.0)):
    EPSILON_PERM[_a, _b] = _sign
    EPSILON_PERM[_b, _a] = _sign


def _blade_masks() -> list:
    # basis vectors e0..e3 are bits 0..3
    return [0b0000, 0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100, 0b1111]


def _reorder_sign(a: int, b: int) -> float:
    swaps = 0
    a >>= 1
    while a:
        swaps += bin(a & b).count("1")
        a >>= 1
    return -1.0 if swaps & 1 else 1.0


def _product_table() -> np.ndarray:
    masks = _blade_masks()
    index = {m: k for k, m in enumerate(masks)}
    table = np.zeros((8, 8, 8))
    for i, mi in enumerate(masks):
        for j, mj in enumerate(masks):
            table[i, j, index[mi ^ mj]] = _reorder_sign(mi, mj)
    return table


PRODUCT_TABLE = _product_table()


def as_rotor_array(r: RotorLike) -> np.ndarray:
    """Coerce a Rotor4 or array to a float64 array shaped (..., 8)"""
    if isinstance(r, Rotor4):
        return r.as_array()
    arr = np.asarray(r, dtype=np.float64)
    if arr.shape[-1:] != (8,):
        raise ShapeMismatchError(f"Rotor arrays need a trailing axis of 8, got {arr.shape}")
    return arr


def identity_rotor(shape=()) -> np.ndarray:
    r = np.zeros(tuple(shape) + (8,))
    r[..., S] = 1.0
    return r


def epsilon(r: RotorLike) -> np.ndarray:
    """Bivector constraint ps - b01 b23 + b02 b13 - b03 b12; zero for proper rotors"""
    r = as_rotor_array(r)
    return 0.5 * np.einsum("...a,ab,...b->...", r, EPSILON_PERM, r)


def reverse(r: RotorLike) -> np.ndarray:
    """Reversion r†: bivectors flip sign, scalar and pseudoscalar are kept"""
    out = as_rotor_array(r).copy()
    out[..., 1:7] *= -1.0
    return out


def _delta(eps: np.ndarray, l2: np.ndarray):
    radicand = np.maximum(l2 * l2 - 4.0 * eps * eps, 0.0)
    root = np.sqrt(radicand)
    delta = np.where(np.abs(eps) < EPS_ZERO, 0.0, -2.0 * eps / (l2 + root))
    return delta, root


def normalize(r: RotorLike) -> np.ndarray:
    """
    Project a rotor onto r r† = 1.

    Step one moves r along the constraint gradient by the root of
    eps * delta^2 + l^2 * delta + eps = 0 that vanishes with eps; step two
    rescales to unit length.

    Raises:
        ZeroRotorError: if l^2 <= 1e-20
        NonFiniteError: if the input is not finite or the result misses an invariant
    """
    r = as_rotor_array(r)
    if not np.all(np.isfinite(r)):
        raise NonFiniteError("rotor has non-finite coefficients")
    l2 = np.sum(r * r, axis=-1)
    if np.any(l2 <= 1e-20):
        raise ZeroRotorError("cannot normalize the zero rotor")
    eps = epsilon(r)
    delta, _ = _delta(eps, l2)
    shifted = r + delta[..., None] * (r @ EPSILON_PERM)
    out = shifted / np.linalg.norm(shifted, axis=-1, keepdims=True)
    residual = np.maximum(
        np.abs(np.sum(out * out, axis=-1) - 1.0),
        np.abs(epsilon(out)),
    )
    if not np.all(np.isfinite(out)) or np.any(residual > NORM_TOL):
        raise NonFiniteError(f"normalization left a residual of {np.max(residual):.3e}")
    return out


def normalize_jacobian(r: RotorLike) -> np.ndarray:
    """
    Jacobian d normalize(r) / d r, shaped (..., 8, 8).

    The delta shift is differentiated on the branch it takes; below the
    |eps| threshold the shift is the identity and only the rescale remains.
    """
    r = as_rotor_array(r)
    l2 = np.sum(r * r, axis=-1)
    eps = epsilon(r)
    delta, root = _delta(eps, l2)
    pr = r @ EPSILON_PERM
    q = l2 + root
    safe_root = np.maximum(root, 1e-30)
    grad_q = (1.0 + l2 / safe_root)[..., None] * 2.0 * r - (4.0 * eps / safe_root)[..., None] * pr
    grad_delta = -2.0 * pr / q[..., None] + (2.0 * eps / (q * q))[..., None] * grad_q
    grad_delta = np.where((np.abs(eps) < EPS_ZERO)[..., None], 0.0, grad_delta)

    eye = np.eye(8)
    shift_jac = eye + delta[..., None, None] * EPSILON_PERM + pr[..., :, None] * grad_delta[..., None, :]
    shifted = r + delta[..., None] * pr
    norm = np.linalg.norm(shifted, axis=-1)
    out = shifted / norm[..., None]
    scale_jac = (eye - out[..., :, None] * out[..., None, :]) / norm[..., None, None]
    return scale_jac @ shift_jac


def check_normalized(r: RotorLike, tol: float = MATRIX_TOL) -> None:
    """Raise NotNormalizedError when either rotor invariant is violated beyond tol"""
    r = as_rotor_array(r)
    unit = np.abs(np.sum(r * r, axis=-1) - 1.0)
    eps = np.abs(epsilon(r))
    if np.any(unit > tol) or np.any(eps > tol):
        raise NotNormalizedError(
            f"rotor violates r r† = 1 (|l^2 - 1| = {np.max(unit):.3e}, |eps| = {np.max(eps):.3e})"
        )


def _half_forms(r: np.ndarray) -> np.ndarray:
    """F_ij r for every matrix entry, shaped (..., 16, 8)"""
    return (r @ _FORMS_FLAT.T).reshape(r.shape[:-1] + (16, 8))


def to_matrix(r: RotorLike, check: bool = True) -> np.ndarray:
    """4x4 rotation matrix of a normalized rotor, shaped (..., 4, 4)"""
    r = as_rotor_array(r)
    if check:
        check_normalized(r)
    entries = np.sum(_half_forms(r) * r[..., None, :], axis=-1)
    return entries.reshape(r.shape[:-1] + (4, 4))


def to_matrix_jacobian(r: RotorLike) -> np.ndarray:
    """Derivatives of the 16 matrix entries, shaped (..., 16, 8), entries row-major"""
    return 2.0 * _half_forms(as_rotor_array(r))


def from_quaternion(q) -> np.ndarray:
    """
    Embed unit quaternions (w, x, y, z) as spatial rotors.

    The embedding is s = w, b01 = -z, b02 = y, b12 = -x, which makes the
    spatial block of to_matrix equal the usual quaternion rotation matrix.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1:] != (4,):
        raise ShapeMismatchError(f"Quaternions need a trailing axis of 4, got {q.shape}")
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > NORM_TOL):
        raise NotUnitError("quaternion is not of unit length")
    r = np.zeros(q.shape[:-1] + (8,))
    r[..., S] = q[..., 0]
    r[..., B01] = -q[..., 3]
    r[..., B02] = q[..., 2]
    r[..., B12] = -q[..., 1]
    return r


def compose(a: RotorLike, b: RotorLike) -> np.ndarray:
    """Geometric product a b; to_matrix(a b) = to_matrix(a) @ to_matrix(b)"""
    a = as_rotor_array(a)
    b = as_rotor_array(b)
    return np.einsum("...i,ijk,...j->...k", a, PRODUCT_TABLE, b)


def rotor_from_plane_angle(plane: BivectorPlane, angle) -> np.ndarray:
    """Single-plane rotor (cos(angle/2), sin(angle/2) on the plane's bivector)"""
    angle = np.asarray(angle, dtype=np.float64)
    r = identity_rotor(angle.shape)
    r[..., S] = np.cos(0.5 * angle)
    r[..., plane.value] = np.sin(0.5 * angle)
    return r


def normalized_rotor(r: Rotor4) -> Rotor4:
    """Value-type convenience wrapper around normalize"""
    return Rotor4.from_array(normalize(r))
