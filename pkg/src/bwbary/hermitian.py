"""Hermitian matrix primitives.

Spectral decompositions with a deterministic sign convention, PSD square
roots and pseudo-inverse roots, the differential of the matrix square root,
and orthonormal bases / projections for subspaces of Hermitian matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    NotHermitianError,
    NotPsdError,
    SingularMatrixError,
    ValidationError,
)

logger = logging.getLogger(__name__)

REAL = "real"
COMPLEX = "complex"

# Relative tolerances (see module docs): eps_psd = PSD_REL_TOL * max(1, lam_max)
# gates PSD validation, eps_pd = PD_REL_TOL * lam_max gates strict positivity.
PSD_REL_TOL = 1e-10
PD_REL_TOL = 1e-12
HERMITIAN_REL_TOL = 1e-10
RANK_REL_TOL = 1e-12


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real Frobenius inner product <A, B> = Re tr(A* B)."""
    return float(np.real(np.sum(np.conjugate(a) * b)))


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return (a + np.conjugate(np.swapaxes(a, -1, -2))) / 2


def _as_square_array(value, name="matrix"):
    arr = np.asarray(value)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def _check_hermitian(arr: np.ndarray, name="matrix") -> np.ndarray:
    """Validate Hermitian symmetry and return the exactly symmetrized matrix."""
    herm = hermitian_part(arr)
    gap = np.linalg.norm(arr - herm)
    if gap > HERMITIAN_REL_TOL * np.linalg.norm(arr):
        raise NotHermitianError(
            f"{name} is not Hermitian: asymmetry {gap:.3e} exceeds tolerance"
        )
    return herm


class PsdMatrix:
    """A d x d Hermitian positive semi-definite matrix.

    The stored array is exactly Hermitian (inputs are symmetrized after a
    tolerance check) and the spectrum is certified to lie above -eps_psd with
    eps_psd = PSD_REL_TOL * max(1, lam_max).  Instances are immutable and safe
    to share between threads.
    """

    __slots__ = ("array", "mode")

    def __init__(self, array, mode=None, require_pd=False):
        arr = _as_square_array(array)
        inferred = COMPLEX if np.iscomplexobj(arr) else REAL
        if mode is None:
            mode = inferred
        if mode not in (REAL, COMPLEX):
            raise ValidationError(f"unknown mode {mode!r}")
        if mode == REAL and inferred == COMPLEX:
            scale = max(1.0, float(np.linalg.norm(arr)))
            if np.max(np.abs(arr.imag)) > HERMITIAN_REL_TOL * scale:
                raise ValidationError("complex entries in real-symmetric mode")
            arr = arr.real
        dtype = np.complex128 if mode == COMPLEX else np.float64
        arr = np.array(arr, dtype=dtype)
        herm = _check_hermitian(arr)
        w = np.linalg.eigvalsh(herm)
        lam_max = max(float(w[-1]), 0.0)
        eps_psd = PSD_REL_TOL * max(1.0, lam_max)
        if w[0] < -eps_psd:
            raise NotPsdError(
                f"matrix is not PSD: lambda_min = {w[0]:.6e} < -{eps_psd:.3e}"
            )
        if require_pd and not w[0] > PD_REL_TOL * lam_max:
            raise SingularMatrixError(
                f"matrix is not strictly positive: lambda_min = {w[0]:.6e}"
            )
        herm.setflags(write=False)
        self.array = herm
        self.mode = mode

    @property
    def dim(self) -> int:
        return self.array.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.array)))

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues sorted descending."""
        return np.linalg.eigvalsh(self.array)[::-1].copy()

    def is_strictly_positive(self) -> bool:
        w = np.linalg.eigvalsh(self.array)
        return bool(w[0] > PD_REL_TOL * max(float(w[-1]), 0.0))

    def __repr__(self):
        return f"PsdMatrix(dim={self.dim}, mode={self.mode!r})"


def as_psd(value, mode=None, require_pd=False) -> PsdMatrix:
    """Coerce an array or PsdMatrix to a validated PsdMatrix."""
    if isinstance(value, PsdMatrix):
        if mode is not None and value.mode != mode:
            raise DimensionMismatchError(
                f"expected mode {mode!r}, got {value.mode!r}"
            )
        if require_pd and not value.is_strictly_positive():
            raise SingularMatrixError("matrix is not strictly positive")
        return value
    return PsdMatrix(value, mode=mode, require_pd=require_pd)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition A = U* diag(lam) U with rows of U the eigenvectors.

    Eigenvalues are sorted descending; each eigenvector's first nonzero
    coordinate is made real-positive so the decomposition is reproducible.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return np.conjugate(u.T) @ (self.eigenvalues[:, None] * u)


def _fix_phases(u: np.ndarray) -> np.ndarray:
    """Make the first coordinate with modulus > 1e-12 of each row real-positive."""
    idx = (np.abs(u) > 1e-12).argmax(axis=1)
    pivots = u[np.arange(u.shape[0]), idx]
    phases = pivots / np.abs(pivots)
    return u * np.conjugate(phases)[:, None]


def eig_hermitian(a) -> SpectralDecomposition:
    """Sorted, sign-fixed eigendecomposition of a Hermitian matrix."""
    arr = a.array if isinstance(a, PsdMatrix) else _as_square_array(a)
    herm = _check_hermitian(arr)
    w, v = np.linalg.eigh(herm)
    u = np.conjugate(v.T)[::-1]
    return SpectralDecomposition(w[::-1].copy(), _fix_phases(u))


def _clamped_spectrum(a: PsdMatrix):
    """Ascending eigenvalues with [-eps_psd, 0) clamped to 0, plus eigenvectors."""
    w, v = np.linalg.eigh(a.array)
    clamped = np.count_nonzero(w < 0)
    if clamped:
        logger.debug("clamping %d negative eigenvalues (min %.3e)", clamped, w[0])
    return np.clip(w, 0.0, None), v


def sqrt_psd(a) -> PsdMatrix:
    """Principal square root of a PSD matrix."""
    mat = as_psd(a)
    w, v = _clamped_spectrum(mat)
    root = (v * np.sqrt(w)) @ np.conjugate(v.T)
    return PsdMatrix(hermitian_part(root), mode=mat.mode)


def pinv_sqrt_psd(a, rank_tol: float = RANK_REL_TOL) -> np.ndarray:
    """Pseudo-inverse square root (A^{1/2})^+ of a PSD matrix.

    Eigenvalues above rank_tol * lam_max map to lam^{-1/2}, the rest to 0.
    """
    mat = as_psd(a)
    w, v = _clamped_spectrum(mat)
    lam_max = float(w[-1])
    inv = np.zeros_like(w)
    if lam_max > 0.0:
        mask = w > rank_tol * lam_max
        inv[mask] = 1.0 / np.sqrt(w[mask])
    return hermitian_part((v * inv) @ np.conjugate(v.T))


def sqrt_differential(q, x) -> np.ndarray:
    """Differential of Q -> Q^{1/2} at a strictly positive Q, applied to X.

    In the eigenbasis of Q the result divides each entry of X by
    sqrt(q_i) + sqrt(q_j).
    """
    mat = as_psd(q, require_pd=True)
    arr = _check_hermitian(_as_square_array(x, name="X"))
    if arr.shape != mat.array.shape:
        raise DimensionMismatchError("X must match the dimension of Q")
    w, v = np.linalg.eigh(mat.array)
    roots = np.sqrt(w)
    inner = np.conjugate(v.T) @ arr @ v
    inner = inner / (roots[:, None] + roots[None, :])
    return hermitian_part(v @ inner @ np.conjugate(v.T))


class SubspaceBasis:
    """Orthonormal (Frobenius) basis of a linear subspace M of Hermitian matrices.

    The optional anchor Q0 places an affine constraint set A = Q0 + M.
    """

    __slots__ = ("basis", "mode", "anchor")

    def __init__(self, basis, mode=None, anchor=None):
        stack = np.asarray(basis)
        if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
            raise DimensionMismatchError(
                f"basis must be a stack of square matrices, got {stack.shape}"
            )
        inferred = COMPLEX if np.iscomplexobj(stack) else REAL
        if mode is None:
            mode = inferred
        dtype = np.complex128 if mode == COMPLEX else np.float64
        stack = np.array(stack, dtype=dtype)
        m, d = stack.shape[0], stack.shape[1]
        limit = d * d if mode == COMPLEX else d * (d + 1) // 2
        if not 1 <= m <= limit:
            raise ValidationError(f"basis size {m} outside [1, {limit}] for mode {mode}")
        herm_gap = np.max(np.abs(stack - hermitian_part(stack)))
        if herm_gap > 1e-12:
            raise NotHermitianError(f"basis elements not Hermitian (gap {herm_gap:.3e})")
        gram = np.real(np.einsum("kab,lab->kl", np.conjugate(stack), stack))
        if np.max(np.abs(gram - np.eye(m))) > 1e-12:
            raise ValidationError("basis is not orthonormal under the Frobenius product")
        if anchor is not None:
            anchor = as_psd(anchor, mode=mode)
            if anchor.dim != d:
                raise DimensionMismatchError("anchor dimension does not match basis")
        stack.setflags(write=False)
        self.basis = stack
        self.mode = mode
        self.anchor = anchor

    @property
    def dim_ambient(self) -> int:
        return self.basis.shape[1]

    @property
    def dim_m(self) -> int:
        return self.basis.shape[0]

    def __repr__(self):
        return (
            f"SubspaceBasis(d={self.dim_ambient}, m={self.dim_m}, mode={self.mode!r},"
            f" anchored={self.anchor is not None})"
        )


def _check_ambient(basis: SubspaceBasis, x: np.ndarray):
    if x.shape != (basis.dim_ambient, basis.dim_ambient):
        raise DimensionMismatchError(
            f"matrix shape {x.shape} does not match ambient dimension {basis.dim_ambient}"
        )


def vectorize(basis: SubspaceBasis, x) -> np.ndarray:
    """Coordinates v_k = <B_k, X> of (the projection of) X in the basis."""
    arr = x.array if isinstance(x, PsdMatrix) else np.asarray(x)
    _check_ambient(basis, arr)
    return np.real(np.einsum("kab,ab->k", np.conjugate(basis.basis), arr))


def devectorize(basis: SubspaceBasis, coords) -> np.ndarray:
    """Inverse of vectorize: sum_k v_k B_k, a Hermitian matrix in M."""
    v = np.asarray(coords, dtype=np.float64)
    if v.shape != (basis.dim_m,):
        raise DimensionMismatchError(
            f"coordinate length {v.shape} does not match basis size {basis.dim_m}"
        )
    return np.einsum("k,kab->ab", v, basis.basis)


def project_subspace(basis: SubspaceBasis, x) -> np.ndarray:
    """Frobenius-orthogonal projection of X onto the subspace."""
    return devectorize(basis, vectorize(basis, x))


def _diag_embed(vecs: np.ndarray, d: int, dtype) -> np.ndarray:
    out = np.zeros((vecs.shape[0], d, d), dtype=dtype)
    idx = np.arange(d)
    out[:, idx, idx] = vecs
    return out


def _offdiag_elements(d: int, mode: str):
    dtype = np.complex128 if mode == COMPLEX else np.float64
    sym = []
    for i in range(d):
        for j in range(i + 1, d):
            b = np.zeros((d, d), dtype=dtype)
            b[i, j] = b[j, i] = 1.0 / np.sqrt(2.0)
            sym.append(b)
    if mode == REAL:
        return sym
    anti = []
    for i in range(d):
        for j in range(i + 1, d):
            b = np.zeros((d, d), dtype=dtype)
            b[i, j] = 1.0j / np.sqrt(2.0)
            b[j, i] = -1.0j / np.sqrt(2.0)
            anti.append(b)
    return sym + anti


def _helmert_rows(d: int) -> np.ndarray:
    """Orthonormal basis of {v in R^d : sum v = 0}, d-1 rows."""
    rows = np.zeros((d - 1, d))
    for k in range(1, d):
        rows[k - 1, :k] = 1.0
        rows[k - 1, k] = -k
        rows[k - 1] /= np.sqrt(k * (k + 1))
    return rows


def standard_basis(d: int, mode: str = REAL, kind: str = "full") -> SubspaceBasis:
    """Canonical orthonormal bases of Hermitian matrix subspaces.

    kind="full" spans all Hermitian matrices (m = d^2 complex,
    d(d+1)/2 real); kind="traceless" replaces the diagonal block by a basis
    of zero-sum diagonals and anchors the affine set at I/d.
    """
    if d < 1:
        raise ValidationError("d must be >= 1")
    if mode not in (REAL, COMPLEX):
        raise ValidationError(f"unknown mode {mode!r}")
    dtype = np.complex128 if mode == COMPLEX else np.float64
    if kind == "full":
        diag = _diag_embed(np.eye(d), d, dtype)
        elements = list(diag) + _offdiag_elements(d, mode)
        return SubspaceBasis(np.stack(elements), mode=mode)
    if kind == "traceless":
        if d < 2:
            raise ValidationError("traceless basis requires d >= 2")
        diag = _diag_embed(_helmert_rows(d), d, dtype)
        elements = list(diag) + _offdiag_elements(d, mode)
        anchor = PsdMatrix(np.eye(d, dtype=dtype) / d, mode=mode)
        return SubspaceBasis(np.stack(elements), mode=mode, anchor=anchor)
    raise ValidationError(f"unknown basis kind {kind!r}")


def whitened_basis(basis: SubspaceBasis, q) -> SubspaceBasis:
    """Orthonormal basis of Q^{-1/2} M Q^{-1/2} for strictly positive Q.

    Images of the basis elements under the congruence are re-orthonormalized
    with a deterministic modified Gram-Schmidt pass.
    """
    mat = as_psd(q, require_pd=True)
    if mat.dim != basis.dim_ambient:
        raise DimensionMismatchError("Q dimension does not match basis")
    w, v = np.linalg.eigh(mat.array)
    inv_root = (v / np.sqrt(w)) @ np.conjugate(v.T)
    images = np.einsum("ab,kbc,cd->kad", inv_root, basis.basis, inv_root)
    out = []
    for raw in hermitian_part(images):
        for done in out:
            raw = raw - frobenius_inner(done, raw) * done
        norm = np.linalg.norm(raw)
        if norm < 1e-13:
            raise ValidationError("whitened basis lost rank")
        out.append(raw / norm)
    return SubspaceBasis(np.stack(out), mode=basis.mode)


class OperatorOnM:
    """Self-adjoint operator on a subspace M, materialized in basis coordinates."""

    __slots__ = ("basis", "matrix")

    def __init__(self, basis: SubspaceBasis, matrix):
        arr = np.asarray(matrix, dtype=np.float64)
        m = basis.dim_m
        if arr.shape != (m, m):
            raise DimensionMismatchError(
                f"operator matrix shape {arr.shape} does not match basis size {m}"
            )
        gap = np.max(np.abs(arr - arr.T)) if m else 0.0
        if gap > 1e-10 * max(1.0, float(np.max(np.abs(arr)))):
            raise ValidationError(f"operator matrix is not symmetric (gap {gap:.3e})")
        sym = (arr + arr.T) / 2
        sym.setflags(write=False)
        self.basis = basis
        self.matrix = sym

    @property
    def dim_m(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues sorted ascending."""
        return np.linalg.eigvalsh(self.matrix)

    def apply(self, x) -> np.ndarray:
        """Apply the operator to a Hermitian matrix through its M-coordinates."""
        return devectorize(self.basis, self.matrix @ vectorize(self.basis, x))

    def __repr__(self):
        return f"OperatorOnM(m={self.dim_m})"
