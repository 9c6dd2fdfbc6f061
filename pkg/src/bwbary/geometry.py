"""Bures-Wasserstein geometry: distance, optimal transport maps, and the
differential structure of the squared distance."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatchError, NumericalError
from .hermitian import (
    OperatorOnM,
    PsdMatrix,
    RANK_REL_TOL,
    SubspaceBasis,
    as_psd,
    hermitian_part,
    sqrt_psd,
    vectorize,
)

logger = logging.getLogger(__name__)


def _pair(q, s):
    qm = as_psd(q)
    sm = as_psd(s)
    if qm.dim != sm.dim:
        raise DimensionMismatchError(f"dimensions differ: {qm.dim} vs {sm.dim}")
    return qm, sm


def _psd_root_from_eigh(w, v):
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ np.conjugate(v.T)


def bw_distance_sq(q, s) -> float:
    """Squared Bures-Wasserstein distance tr Q + tr S - 2 tr(Q^{1/2} S Q^{1/2})^{1/2}.

    Evaluated through the eigendecomposition of Q^{1/2} S Q^{1/2} with the two
    arguments taken in a canonical order, so the result is exactly symmetric
    and deterministic.  Small negative roundoff (within 1e-10) is clamped to 0.
    """
    qm, sm = _pair(q, s)
    a, b = qm.array, sm.array
    if a.tobytes() > b.tobytes():
        a, b = b, a
    elif a.tobytes() == b.tobytes():
        return 0.0
    w, v = np.linalg.eigh(a)
    root = _psd_root_from_eigh(w, v)
    inner = np.linalg.eigvalsh(root @ b @ root)
    value = float(np.real(np.trace(a) + np.trace(b))) - 2.0 * float(
        np.sum(np.sqrt(np.clip(inner, 0.0, None)))
    )
    if value < 0.0:
        scale = max(1.0, float(np.real(np.trace(a) + np.trace(b))))
        if value < -1e-10 * scale:
            raise NumericalError(f"squared distance came out negative: {value:.3e}")
        logger.debug("clamping negative squared distance %.3e to 0", value)
        value = 0.0
    return value


def bw_distance(q, s) -> float:
    return float(np.sqrt(bw_distance_sq(q, s)))


@dataclass(frozen=True)
class TransportMap:
    """Optimal transport map T with T Q T = S, pushing N(0, Q) to N(0, S)."""

    matrix: PsdMatrix
    source: PsdMatrix
    target: PsdMatrix

    def push_forward_error(self) -> float:
        t = self.matrix.array
        return float(np.linalg.norm(t @ self.source.array @ t - self.target.array))


def transport_map(q, s) -> TransportMap:
    """Optimal map T = S^{1/2} (S^{1/2} Q S^{1/2})^{-1/2} S^{1/2} for Q > 0.

    Singular targets go through the pseudo-inverse branch: directions outside
    range(S) map to 0.
    """
    qm, sm = _pair(q, s)
    qm = as_psd(qm, require_pd=True)
    a = sqrt_psd(sm).array
    lam, v = np.linalg.eigh(a @ qm.array @ a)
    lam = np.clip(lam, 0.0, None)
    lam_max = float(lam[-1])
    inv = np.zeros_like(lam)
    if lam_max > 0.0:
        mask = lam > RANK_REL_TOL * lam_max
        inv[mask] = 1.0 / np.sqrt(lam[mask])
    g = a @ v
    t = hermitian_part((g * inv) @ np.conjugate(g.T))
    return TransportMap(PsdMatrix(t, mode=sm.mode), qm, sm)


def bw_gradient(q, s) -> np.ndarray:
    """Frobenius gradient of Q -> d_BW^2(Q, S), equal to I - T_Q^S."""
    t = transport_map(q, s)
    return np.eye(t.source.dim, dtype=t.matrix.array.dtype) - t.matrix.array


class TransportDifferential:
    """Differential dT of Q -> T_Q^S at a strictly positive base point.

    The operator is self-adjoint and negative semi-definite; `apply` evaluates
    the raw differential, `apply_rescaled` the conjugated version
    zeta -> Q^{1/2} dT(Q^{1/2} zeta Q^{1/2}) Q^{1/2}.  Cached spectral data is
    immutable, so instances can be shared between threads.
    """

    __slots__ = ("base_q", "base_s", "_g", "_w2", "_q_root", "eigenvalues")

    def __init__(self, q, s):
        qm, sm = _pair(q, s)
        qm = as_psd(qm, require_pd=True)
        a = sqrt_psd(sm).array
        lam, v = np.linalg.eigh(a @ qm.array @ a)
        lam = np.clip(lam, 0.0, None)
        roots = np.sqrt(lam)
        lam_max = float(lam[-1])
        denom = np.multiply.outer(roots, roots) * (roots[:, None] + roots[None, :])
        w2 = np.zeros_like(denom)
        if lam_max > 0.0:
            mask = lam > RANK_REL_TOL * lam_max
            block = np.logical_and.outer(mask, mask)
            w2[block] = 1.0 / denom[block]
        wq, vq = np.linalg.eigh(qm.array)
        self.base_q = qm
        self.base_s = sm
        self._g = a @ v
        self._w2 = w2
        self._q_root = (vq * np.sqrt(wq)) @ np.conjugate(vq.T)
        self.eigenvalues = lam
        self._w2.setflags(write=False)
        self.eigenvalues.setflags(write=False)

    def apply(self, x) -> np.ndarray:
        """Raw differential dT applied to a Hermitian perturbation X."""
        arr = x.array if isinstance(x, PsdMatrix) else np.asarray(x)
        if arr.shape != self.base_q.array.shape:
            raise DimensionMismatchError("perturbation dimension mismatch")
        g = self._g
        delta = np.conjugate(g.T) @ arr @ g
        return hermitian_part(-g @ (delta * self._w2) @ np.conjugate(g.T))

    def apply_rescaled(self, zeta) -> np.ndarray:
        """Rescaled differential dt(zeta) = Q^{1/2} dT(Q^{1/2} zeta Q^{1/2}) Q^{1/2}."""
        arr = zeta.array if isinstance(zeta, PsdMatrix) else np.asarray(zeta)
        r = self._q_root
        return hermitian_part(r @ self.apply(r @ arr @ r) @ r)


def transport_differential(q, s) -> TransportDifferential:
    return TransportDifferential(q, s)


def operator_matrix(op, basis: SubspaceBasis, rescaled: bool = False) -> OperatorOnM:
    """Materialize a self-adjoint operator on M as the matrix <B_k, op(B_l)>.

    `op` is either a TransportDifferential (rescaled selects dT vs dt) or any
    callable mapping Hermitian matrices to Hermitian matrices.
    """
    if isinstance(op, TransportDifferential):
        fn = op.apply_rescaled if rescaled else op.apply
    elif callable(op):
        fn = op
    else:
        raise TypeError("op must be a TransportDifferential or a callable")
    mat = np.empty((basis.dim_m, basis.dim_m))
    for l in range(basis.dim_m):
        mat[:, l] = vectorize(basis, fn(basis.basis[l]))
    return OperatorOnM(basis, mat)


# ---------------------------------------------------------------------------
# Stacked helpers shared by the solver and the estimators.  All operate on
# plain (n, d, d) arrays and assume inputs already validated.
# ---------------------------------------------------------------------------


def _psd_sqrt_stack(mats: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mats)
    s = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("nij,nj,nkj->nik", v, s, np.conjugate(v))


def _transport_stack(q: np.ndarray, roots: np.ndarray):
    """Transport maps T_Q^{S_i} for a stack of targets given S_i^{1/2}.

    Returns (T stack, eigenvalues of S_i^{1/2} Q S_i^{1/2} ascending).
    """
    inner = np.einsum("nij,jk,nkl->nil", roots, q, roots)
    lam, v = np.linalg.eigh(inner)
    lam = np.clip(lam, 0.0, None)
    lam_max = lam[:, -1:]
    inv = np.zeros_like(lam)
    ok = lam_max[:, 0] > 0.0
    mask = lam > RANK_REL_TOL * lam_max
    mask &= ok[:, None]
    inv[mask] = 1.0 / np.sqrt(lam[mask])
    g = roots @ v
    t = np.einsum("nij,nj,nkj->nik", g, inv, np.conjugate(g))
    return hermitian_part(t), lam


def _dt_stack(q: np.ndarray, roots: np.ndarray):
    """Cached data (G_i, w2_i, lam_i) for batched dT_Q^{S_i} evaluation."""
    inner = np.einsum("nij,jk,nkl->nil", roots, q, roots)
    lam, v = np.linalg.eigh(inner)
    lam = np.clip(lam, 0.0, None)
    sq = np.sqrt(lam)
    lam_max = lam[:, -1:]
    denom = sq[:, :, None] * sq[:, None, :] * (sq[:, :, None] + sq[:, None, :])
    mask = lam > RANK_REL_TOL * np.maximum(lam_max, 0.0)
    mask &= lam_max > 0.0
    block = mask[:, :, None] & mask[:, None, :]
    w2 = np.zeros_like(denom)
    w2[block] = 1.0 / denom[block]
    return roots @ v, w2, lam
