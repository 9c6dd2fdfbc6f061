"""Fixed-point and projected-descent solvers for (affine-constrained)
Bures-Wasserstein barycenters, plus the Fréchet variance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConvergenceError,
    DegenerateInputError,
    DimensionMismatchError,
    PositivityLossError,
    ValidationError,
)
from .geometry import _psd_sqrt_stack, _transport_stack
from .hermitian import (
    COMPLEX,
    PD_REL_TOL,
    PsdMatrix,
    REAL,
    SubspaceBasis,
    as_psd,
    hermitian_part,
)

logger = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 60


class SampleSet:
    """An ordered collection of PSD matrices with normalized weights."""

    __slots__ = ("array", "weights", "mode")

    def __init__(self, matrices, weights=None, mode=None):
        if isinstance(matrices, np.ndarray) and matrices.ndim == 3:
            stack = matrices
        else:
            mats = [m.array if isinstance(m, PsdMatrix) else np.asarray(m) for m in matrices]
            if not mats:
                raise ValidationError("sample set must contain at least one matrix")
            shapes = {m.shape for m in mats}
            if len(shapes) > 1:
                raise DimensionMismatchError(f"mixed matrix shapes: {sorted(shapes)}")
            stack = np.stack(mats)
        if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
            raise DimensionMismatchError(f"expected (n, d, d) stack, got {stack.shape}")
        if stack.shape[0] < 1:
            raise ValidationError("sample set must contain at least one matrix")
        inferred = COMPLEX if np.iscomplexobj(stack) else REAL
        if mode is None:
            mode = inferred
        dtype = np.complex128 if mode == COMPLEX else np.float64
        if mode == REAL and inferred == COMPLEX:
            if np.max(np.abs(stack.imag)) > 1e-12 * max(1.0, float(np.abs(stack).max())):
                raise ValidationError("complex entries in real-symmetric mode")
            stack = stack.real
        stack = np.ascontiguousarray(stack, dtype=dtype)
        if not np.all(np.isfinite(stack.view(np.float64))):
            raise ValidationError("sample set has non-finite entries")
        gap = np.max(np.abs(stack - hermitian_part(stack)))
        if gap > 1e-10 * max(1.0, float(np.abs(stack).max())):
            raise ValidationError(f"sample {self._worst_herm(stack)} is not Hermitian")
        stack = hermitian_part(stack)
        eigs = np.linalg.eigvalsh(stack)
        lam_max = np.maximum(eigs[:, -1], 0.0)
        bad = np.nonzero(eigs[:, 0] < -1e-10 * np.maximum(1.0, lam_max))[0]
        if bad.size:
            raise ValidationError(
                f"sample {bad[0]} is not PSD (lambda_min = {eigs[bad[0], 0]:.3e})"
            )
        n = stack.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (n,):
                raise DimensionMismatchError(f"weights shape {w.shape} != ({n},)")
            if np.any(w < 0):
                raise ValidationError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValidationError(f"weights sum to {w.sum()!r}, expected 1")
        stack.setflags(write=False)
        w.setflags(write=False)
        self.array = stack
        self.weights = w
        self.mode = mode

    @staticmethod
    def _worst_herm(stack):
        gaps = np.abs(stack - hermitian_part(stack)).reshape(stack.shape[0], -1).max(axis=1)
        return int(np.argmax(gaps))

    @property
    def dim(self) -> int:
        return self.array.shape[1]

    def __len__(self) -> int:
        return self.array.shape[0]

    def __getitem__(self, i) -> PsdMatrix:
        return PsdMatrix(self.array[i], mode=self.mode)

    def has_strictly_positive(self) -> bool:
        """True when some sample with positive weight is strictly positive."""
        eigs = np.linalg.eigvalsh(self.array)
        pd = eigs[:, 0] > PD_REL_TOL * np.maximum(eigs[:, -1], 0.0)
        return bool(np.any(pd & (self.weights > 0)))


def as_sample_set(value, weights=None) -> SampleSet:
    if isinstance(value, SampleSet):
        if weights is not None:
            raise ValidationError("cannot re-weight an existing SampleSet")
        return value
    return SampleSet(value, weights=weights)


@dataclass
class SolverConfig:
    """Iteration budget, tolerance, and step rule for the barycenter solvers.

    step_rule None picks fixed-point for unconstrained problems and
    projected-descent when an affine constraint is supplied.  descent_step
    None uses 1/L with L the dT-based smoothness estimate, refreshed every
    10 iterations.
    """

    max_iter: int = 500
    tol_residual: float = 1e-10
    step_rule: str | None = None
    descent_step: float | None = None
    pd_floor: float = 1e-12

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if not self.tol_residual > 0:
            raise ValidationError("tol_residual must be positive")
        if self.step_rule not in (None, "fixed-point", "projected-descent"):
            raise ValidationError(f"unknown step rule {self.step_rule!r}")


@dataclass
class BarycenterResult:
    """Solver output: the barycenter, its certificate, and the variance."""

    barycenter: PsdMatrix
    iterations: int
    residual: float
    variance: float
    trace_history: list = field(default_factory=list)
    variance_history: list = field(default_factory=list)


def frechet_variance(q, samples, weights=None) -> float:
    """Weighted mean squared Bures-Wasserstein distance to the samples."""
    ss = as_sample_set(samples, weights)
    qm = as_psd(q)
    if qm.dim != ss.dim:
        raise DimensionMismatchError(f"dimensions differ: {qm.dim} vs {ss.dim}")
    w, v = np.linalg.eigh(qm.array)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ np.conjugate(v.T)
    inner = np.einsum("ij,njk,kl->nil", root, ss.array, root)
    lam = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    traces = np.real(np.trace(ss.array, axis1=1, axis2=2))
    d2 = qm.trace + traces - 2.0 * np.sqrt(lam).sum(axis=1)
    return float(max(np.dot(ss.weights, np.clip(d2, 0.0, None)), 0.0))


def _project_coords(basis, mats):
    """Coordinates of a matrix (or stack) in the basis."""
    return np.real(np.einsum("kab,...ab->...k", np.conjugate(basis.basis), mats))


def residual(q, samples, basis: SubspaceBasis | None = None, weights=None) -> float:
    """First-order residual ||Pi_M(sum_i w_i T_Q^{S_i} - I)||_F."""
    ss = as_sample_set(samples, weights)
    qm = as_psd(q, require_pd=True)
    if qm.dim != ss.dim:
        raise DimensionMismatchError(f"dimensions differ: {qm.dim} vs {ss.dim}")
    roots = _psd_sqrt_stack(ss.array)
    t, _ = _transport_stack(qm.array, roots)
    gap = np.einsum("n,nij->ij", ss.weights, t) - np.eye(ss.dim, dtype=t.dtype)
    if basis is None:
        return float(np.linalg.norm(gap))
    if basis.dim_ambient != ss.dim:
        raise DimensionMismatchError("basis ambient dimension does not match samples")
    return float(np.linalg.norm(_project_coords(basis, gap)))


def _mean_sqrt_conjugated(q_root, stack, weights):
    """(sum_i w_i (Q^{1/2} S_i Q^{1/2})^{1/2}, eigenvalue sums) for one iterate."""
    inner = np.einsum("ij,njk,kl->nil", q_root, stack, q_root)
    lam, v = np.linalg.eigh(inner)
    sq = np.sqrt(np.clip(lam, 0.0, None))
    roots = np.einsum("nij,nj,nkj->nik", v, sq, np.conjugate(v))
    mean_root = np.einsum("n,nij->ij", weights, roots)
    return hermitian_part(mean_root), sq.sum(axis=1)


def _eigh_pd(mat, floor):
    w, v = np.linalg.eigh(mat)
    if not w[0] > floor * max(float(w[-1]), 0.0):
        return None
    return w, v


def _solve_fixed_point(ss: SampleSet, cfg: SolverConfig):
    stack, weights = ss.array, ss.weights
    d = ss.dim
    traces = np.real(np.trace(stack, axis1=1, axis2=2))
    mean_trace = float(np.dot(weights, traces))
    q = hermitian_part(np.einsum("n,nij->ij", weights, stack))
    history = []
    variances = []
    prev_variance = np.inf
    for it in range(cfg.max_iter + 1):
        eig = _eigh_pd(q, PD_REL_TOL)
        if eig is None:
            raise PositivityLossError("fixed-point iterate lost strict positivity")
        w, v = eig
        q_root = (v * np.sqrt(w)) @ np.conjugate(v.T)
        q_root_inv = (v / np.sqrt(w)) @ np.conjugate(v.T)
        mean_root, sqrt_sums = _mean_sqrt_conjugated(q_root, stack, weights)
        mean_t = hermitian_part(q_root_inv @ mean_root @ q_root_inv)
        res = float(np.linalg.norm(mean_t - np.eye(d, dtype=mean_t.dtype)))
        variance = float(np.real(np.trace(q))) + mean_trace - 2.0 * float(
            np.dot(weights, sqrt_sums)
        )
        if variance > prev_variance + 1e-10:
            logger.warning(
                "fixed-point variance increased by %.3e at iteration %d",
                variance - prev_variance,
                it,
            )
        prev_variance = variance
        history.append(res)
        variances.append(variance)
        if res <= cfg.tol_residual:
            return q, it, res, max(variance, 0.0), history, variances
        if it == cfg.max_iter:
            break
        q = hermitian_part(q_root_inv @ mean_root @ mean_root @ q_root_inv)
    raise ConvergenceError(
        f"no convergence after {cfg.max_iter} iterations (residual {history[-1]:.3e})",
        residual=history[-1],
        iterations=cfg.max_iter,
    )


def _ridge_to_pd(anchor, basis, d, dtype):
    """Move the anchor inside the PD cone along Pi_M(I - Q0), doubling the ridge."""
    q0 = anchor.array.astype(dtype)
    direction = np.einsum(
        "k,kab->ab", _project_coords(basis, np.eye(d, dtype=dtype) - q0), basis.basis
    )
    if np.linalg.norm(direction) < 1e-14:
        raise PositivityLossError("anchor is singular and cannot be ridged inside A")
    eps = 1e-3 * max(1.0, float(np.real(np.trace(q0))) / d)
    for _ in range(MAX_STEP_HALVINGS):
        candidate = hermitian_part(q0 + eps * direction)
        if _eigh_pd(candidate, PD_REL_TOL) is not None:
            return candidate
        eps *= 2.0
    raise PositivityLossError("could not find a strictly positive point in A")


def _solve_projected_descent(ss: SampleSet, basis: SubspaceBasis, cfg: SolverConfig):
    stack, weights = ss.array, ss.weights
    d = ss.dim
    if basis.dim_ambient != d:
        raise DimensionMismatchError("constraint basis does not match sample dimension")
    sample_roots = _psd_sqrt_stack(stack)
    traces = np.real(np.trace(stack, axis1=1, axis2=2))
    mean_trace = float(np.dot(weights, traces))
    if basis.anchor is not None:
        anchor = basis.anchor
    else:
        anchor = PsdMatrix(np.einsum("n,nij->ij", weights, stack), mode=ss.mode)
    if anchor.is_strictly_positive():
        q = anchor.array.astype(stack.dtype)
    else:
        q = _ridge_to_pd(anchor, basis, d, stack.dtype)
    lam_q_min = float(np.linalg.eigvalsh(q)[0])
    step_scale = 1.0
    halvings = 0
    history = []
    variances = []
    prev_variance = np.inf
    lhat = None
    for it in range(cfg.max_iter + 1):
        t, lam = _transport_stack(q, sample_roots)
        mean_t = np.einsum("n,nij->ij", weights, t)
        coords = _project_coords(basis, mean_t - np.eye(d, dtype=t.dtype))
        res = float(np.linalg.norm(coords))
        variance = float(np.real(np.trace(q))) + mean_trace - 2.0 * float(
            np.dot(weights, np.sqrt(lam).sum(axis=1))
        )
        if variance > prev_variance + 1e-10:
            logger.warning(
                "descent variance increased by %.3e at iteration %d",
                variance - prev_variance,
                it,
            )
        prev_variance = variance
        history.append(res)
        variances.append(variance)
        if res <= cfg.tol_residual:
            return q, it, res, max(variance, 0.0), history, variances
        if it == cfg.max_iter:
            break
        if cfg.descent_step is not None:
            gamma = step_scale * cfg.descent_step
        else:
            # The dT eigenvalue bound is a smoothness constant in the
            # Q-whitened norm; dividing by lambda_min(Q)^2 converts it to
            # the Frobenius norm the descent runs in.
            if lhat is None or it % 10 == 0:
                lhat = 0.5 * float(np.dot(weights, np.sqrt(lam[:, -1])))
            gamma = step_scale * lam_q_min * lam_q_min / lhat
        direction = np.einsum("k,kab->ab", coords, basis.basis)
        while True:
            candidate = hermitian_part(q + gamma * direction)
            eig = _eigh_pd(candidate, 0.0)
            if eig is not None and eig[0][0] > cfg.pd_floor * max(1.0, float(eig[0][-1])):
                break
            halvings += 1
            if halvings > MAX_STEP_HALVINGS:
                raise PositivityLossError(
                    f"strict positivity lost after {MAX_STEP_HALVINGS} step halvings"
                )
            step_scale /= 2.0
            gamma /= 2.0
        q = candidate
        lam_q_min = float(eig[0][0])
    raise ConvergenceError(
        f"no convergence after {cfg.max_iter} iterations (residual {history[-1]:.3e})",
        residual=history[-1],
        iterations=cfg.max_iter,
    )


def solve_barycenter(
    samples,
    constraint: SubspaceBasis | None = None,
    config: SolverConfig | None = None,
    weights=None,
) -> BarycenterResult:
    """Barycenter of a weighted sample, optionally on an affine set A = Q0 + M.

    Unconstrained problems run the classical fixed-point map; constrained ones
    run projected gradient descent whose iterates never leave A.  The exit
    certificate is the first-order residual ||Pi_M(mean T - I)||_F.
    """
    ss = as_sample_set(samples, weights)
    cfg = config or SolverConfig()
    if not ss.has_strictly_positive():
        raise DegenerateInputError(
            "all samples are singular; the barycenter problem needs one with"
            " positive weight strictly inside the cone"
        )
    rule = cfg.step_rule
    if rule is None:
        rule = "fixed-point" if constraint is None else "projected-descent"
    if rule == "fixed-point":
        if constraint is not None:
            raise ValidationError("fixed-point iteration cannot honor a constraint")
        q, iters, res, variance, history, variances = _solve_fixed_point(ss, cfg)
    else:
        basis = constraint
        if basis is None:
            from .hermitian import standard_basis

            basis = standard_basis(ss.dim, mode=ss.mode, kind="full")
        q, iters, res, variance, history, variances = _solve_projected_descent(ss, basis, cfg)
    return BarycenterResult(
        barycenter=PsdMatrix(q, mode=ss.mode, require_pd=True),
        iterations=iters,
        residual=res,
        variance=variance,
        trace_history=history,
        variance_history=variances,
    )
