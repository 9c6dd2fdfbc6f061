"""Plug-in estimators for the barycenter CLT: covariance of transport maps,
the negated mean transport differential, the sandwich covariance and its
studentization, the limiting-law sampler for the distance statistic, and
concentration envelopes with user-supplied constants."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .barycenter import SolverConfig, as_sample_set, frechet_variance, solve_barycenter
from .exceptions import (
    DegenerateCovarianceError,
    DimensionMismatchError,
    ValidationError,
)
from .geometry import (
    TransportDifferential,
    _dt_stack,
    _psd_sqrt_stack,
    _transport_stack,
    bw_distance,
)
from .hermitian import (
    OperatorOnM,
    PsdMatrix,
    SubspaceBasis,
    as_psd,
    devectorize,
    hermitian_part,
    vectorize,
    whitened_basis,
)

logger = logging.getLogger(__name__)

XI_RANK_TOL = 1e-10


@dataclass
class CltReport:
    """Everything needed to studentize one empirical barycenter."""

    n: int
    q_hat: PsdMatrix
    sigma_hat: OperatorOnM
    f_hat: OperatorOnM
    xi_hat: OperatorOnM
    studentized: np.ndarray
    dbw_stat: float
    variance_stat: float


def _coords_stack(basis: SubspaceBasis, mats: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("kab,nab->nk", np.conjugate(basis.basis), mats))


def _check_dims(q: PsdMatrix, ss, basis: SubspaceBasis):
    if q.dim != ss.dim:
        raise DimensionMismatchError(f"dimensions differ: {q.dim} vs {ss.dim}")
    if basis.dim_ambient != q.dim:
        raise DimensionMismatchError("basis ambient dimension does not match")


def estimate_sigma_hat(samples, q, basis: SubspaceBasis) -> OperatorOnM:
    """Covariance of transport maps around I, restricted to M.

    Materializes sum_i w_i (T_i - I) (x) (T_i - I) in basis coordinates, with
    T_i the optimal map from Q to S_i.  PSD by construction.
    """
    ss = as_sample_set(samples)
    qm = as_psd(q, require_pd=True)
    _check_dims(qm, ss, basis)
    roots = _psd_sqrt_stack(ss.array)
    t, _ = _transport_stack(qm.array, roots)
    coords = _coords_stack(basis, t - np.eye(ss.dim, dtype=t.dtype))
    mat = np.einsum("n,nk,nl->kl", ss.weights, coords, coords)
    return OperatorOnM(basis, mat)


def _f_hat_from_prep(g, w2, weights, elements):
    """Materialize -sum_i w_i dT_i on the given Hermitian elements.

    Uses <-dT(X), Y> = sum_ab w2_ab Delta^X_ab conj(Delta^Y_ab) with
    Delta = G* X G, the quadratic form behind self-adjointness of dT.
    """
    delta = np.einsum("nba,kbc,ncd->nkad", np.conjugate(g), elements, g)
    mat = np.einsum("n,nkad,nad,nlad->kl", weights, delta, w2, np.conjugate(delta))
    return np.real(mat)


def estimate_f_hat(samples, q, basis: SubspaceBasis, rescaled: bool = False) -> OperatorOnM:
    """Negated mean transport differential -sum_i w_i dT_Q^{S_i} on M.

    With rescaled=True the operator is conjugated by Q^{1/2} and materialized
    on an orthonormal basis of Q^{-1/2} M Q^{-1/2} (the F' form used by the
    self-normalized residual diagnostics).  Positive definite whenever some
    sample is strictly positive.
    """
    ss = as_sample_set(samples)
    qm = as_psd(q, require_pd=True)
    _check_dims(qm, ss, basis)
    roots = _psd_sqrt_stack(ss.array)
    g, w2, _ = _dt_stack(qm.array, roots)
    if not rescaled:
        mat = _f_hat_from_prep(g, w2, ss.weights, basis.basis)
        return OperatorOnM(basis, mat)
    white = whitened_basis(basis, qm)
    w, v = np.linalg.eigh(qm.array)
    q_root = (v * np.sqrt(w)) @ np.conjugate(v.T)
    elements = np.einsum("ab,kbc,cd->kad", q_root, white.basis, q_root)
    mat = _f_hat_from_prep(g, w2, ss.weights, elements)
    return OperatorOnM(white, mat)


def _inv_from_operator(op: OperatorOnM, rank_tol: float, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(op.matrix)
    if not w[0] > rank_tol * max(float(w[-1]), 0.0):
        raise DegenerateCovarianceError(
            f"{what} is singular (lambda_min = {w[0]:.3e}); cannot invert"
        )
    return (v / w) @ v.T


def estimate_xi_hat(sigma_hat: OperatorOnM, f_hat: OperatorOnM,
                    rank_tol: float = 1e-12) -> OperatorOnM:
    """Sandwich covariance F^{-1} Sigma F^{-1} of the barycenter estimator."""
    if sigma_hat.dim_m != f_hat.dim_m:
        raise DimensionMismatchError("sigma and F live on different subspaces")
    if not np.array_equal(sigma_hat.basis.basis, f_hat.basis.basis):
        raise ValidationError("sigma and F are materialized on different bases")
    f_inv = _inv_from_operator(f_hat, rank_tol, "F-hat")
    xi = f_inv @ sigma_hat.matrix @ f_inv
    return OperatorOnM(sigma_hat.basis, (xi + xi.T) / 2)


def _inv_sqrt_psd_operator(op: OperatorOnM, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(op.matrix)
    if not w[0] > XI_RANK_TOL * max(float(w[-1]), 0.0):
        raise DegenerateCovarianceError(
            f"{what} has a null direction (lambda_min = {w[0]:.3e});"
            " studentization is undefined"
        )
    return (v / np.sqrt(w)) @ v.T


def studentized_statistic(q_n, q_ref, xi_hat: OperatorOnM, basis: SubspaceBasis,
                          n: int) -> np.ndarray:
    """Studentized coordinates sqrt(n) Xi^{-1/2} (Q_n - Q_ref) on M.

    Asymptotically standard normal under the barycenter CLT.  A difference
    with a component outside M is projected with a warning.
    """
    qn = as_psd(q_n)
    qr = as_psd(q_ref)
    if qn.dim != qr.dim or qn.dim != basis.dim_ambient:
        raise DimensionMismatchError("dimension mismatch between Q_n, Q_ref, basis")
    diff = qn.array - qr.array
    coords = vectorize(basis, diff)
    off = float(np.linalg.norm(diff - devectorize(basis, coords)))
    if off > 1e-8 * max(1.0, float(np.linalg.norm(diff))):
        logger.warning(
            "Q_n - Q_ref has a component of norm %.3e outside M; projecting", off
        )
    inv_root = _inv_sqrt_psd_operator(xi_hat, "Xi-hat")
    return np.sqrt(float(n)) * (inv_root @ coords)


def sample_limit_dbw(q_star, xi: OperatorOnM, basis: SubspaceBasis, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draws of the distance-statistic limit ||Q*^{1/2} dT_{Q*}^{Q*}(Z)||_F.

    Z = devectorize(Xi^{1/2} g) with g standard normal on the m coordinates.
    """
    qm = as_psd(q_star, require_pd=True)
    if basis.dim_ambient != qm.dim or xi.dim_m != basis.dim_m:
        raise DimensionMismatchError("xi/basis dimensions do not match Q*")
    if count < 1:
        raise ValidationError("count must be >= 1")
    w, v = np.linalg.eigh(xi.matrix)
    if w[0] < -XI_RANK_TOL * max(float(w[-1]), 0.0, 1.0):
        raise ValidationError("xi must be PSD")
    half = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    g = rng.standard_normal((xi.dim_m, count))
    coords = half @ g
    z = np.einsum("kab,kn->nab", basis.basis, coords)
    dt = TransportDifferential(qm, qm)
    delta = np.einsum("ba,nbc,cd->nad", np.conjugate(dt._g), z, dt._g)
    images = -np.einsum("ab,nbc,dc->nad", dt._g, delta * dt._w2, np.conjugate(dt._g))
    scaled = np.einsum("ab,nbc->nac", dt._q_root, images)
    return np.sqrt(np.sum(np.abs(scaled) ** 2, axis=(1, 2)))


def variance_clt_stats(samples, q_ref, v_ref: float, config: SolverConfig | None = None,
                       ddof: int = 0):
    """Fréchet-variance CLT ingredients.

    Returns (v_n, stat, var_hat): the empirical variance at the solved
    barycenter, the centered statistic sqrt(n)(v_n - v_ref), and the empirical
    variance of the squared distances d^2(Q_ref, S_i).  var_hat uses the 1/n
    population form by default; ddof=1 switches to 1/(n-1).
    """
    ss = as_sample_set(samples)
    qr = as_psd(q_ref)
    n = len(ss)
    if ddof not in (0, 1) or n - ddof < 1:
        raise ValidationError(f"ddof must be 0 or 1 and below n, got {ddof}")
    result = solve_barycenter(ss, config=config)
    v_n = result.variance
    stat = float(np.sqrt(n) * (v_n - v_ref))
    root = _psd_sqrt_stack(qr.array[None])[0]
    lam = np.linalg.eigvalsh(np.einsum("ij,njk,kl->nil", root, ss.array, root))
    traces = np.real(np.trace(ss.array, axis1=1, axis2=2))
    d2 = qr.trace + traces - 2.0 * np.sqrt(np.clip(lam, 0.0, None)).sum(axis=1)
    d2 = np.clip(d2, 0.0, None)
    mean = float(np.dot(ss.weights, d2))
    var_hat = float(np.dot(ss.weights, (d2 - mean) ** 2))
    if ddof == 1:
        var_hat *= n / (n - 1)
    return v_n, stat, var_hat


def eta_n_diagnostic(samples, q_star, basis: SubspaceBasis):
    """Self-normalized residual eta and the bound it implies on ||Q'_n - I||_F.

    eta = ||Q*^{1/2} Pi_M(mean T - I) Q*^{1/2}||_F / lambda_min(F'),
    bound = eta / (1 - 3 eta / 4) when eta < 4/3, else None.
    """
    ss = as_sample_set(samples)
    qm = as_psd(q_star, require_pd=True)
    _check_dims(qm, ss, basis)
    roots = _psd_sqrt_stack(ss.array)
    t, _ = _transport_stack(qm.array, roots)
    mean_t = np.einsum("n,nij->ij", ss.weights, t)
    projected = devectorize(
        basis, _coords_stack(basis, (mean_t - np.eye(ss.dim, dtype=t.dtype))[None])[0]
    )
    w, v = np.linalg.eigh(qm.array)
    q_root = (v * np.sqrt(w)) @ np.conjugate(v.T)
    numerator = float(np.linalg.norm(q_root @ projected @ q_root))
    f_prime = estimate_f_hat(ss, qm, basis, rescaled=True)
    lam = f_prime.eigenvalues()
    if not lam[0] > XI_RANK_TOL * max(float(lam[-1]), 0.0):
        raise DegenerateCovarianceError(
            f"F' is singular (lambda_min = {lam[0]:.3e}); eta is undefined"
        )
    eta = numerator / float(lam[0])
    bound = eta / (1.0 - 0.75 * eta) if eta < 4.0 / 3.0 else None
    return eta, bound


def sigma_perturbation_bound(samples, q_star, q_n):
    """Both sides of the plug-in covariance perturbation inequality.

    lhs is the nuclear norm of the difference between the covariance
    materialized with maps at Q_n versus at Q*, rhs the bound
    beta (2 (mean ||T_i - I||_F^2)^{1/2} + beta) with
    beta = cond(Q*) (mean ||S_i|| / ||Q*||)^{1/2} ||Q'_n - I||_F.
    Requires ||Q'_n - I|| <= 1/2 in operator norm.
    """
    from .hermitian import standard_basis

    ss = as_sample_set(samples)
    qs = as_psd(q_star, require_pd=True)
    qn = as_psd(q_n, require_pd=True)
    if qs.dim != ss.dim or qn.dim != ss.dim:
        raise DimensionMismatchError("dimension mismatch")
    w, v = np.linalg.eigh(qs.array)
    inv_root = (v / np.sqrt(w)) @ np.conjugate(v.T)
    q_prime = hermitian_part(inv_root @ qn.array @ inv_root)
    gap = q_prime - np.eye(ss.dim, dtype=q_prime.dtype)
    gap_op = float(np.max(np.abs(np.linalg.eigvalsh(gap))))
    if gap_op > 0.5:
        raise ValidationError(
            f"||Q'_n - I|| = {gap_op:.3f} > 1/2; the perturbation bound needs"
            " Q_n in the 1/2-neighborhood of Q*"
        )
    mode = ss.mode
    basis = standard_basis(ss.dim, mode=mode, kind="full")
    roots = _psd_sqrt_stack(ss.array)
    eye = np.eye(ss.dim, dtype=ss.array.dtype)
    t_star, _ = _transport_stack(qs.array, roots)
    t_n, _ = _transport_stack(qn.array, roots)
    coords_star = _coords_stack(basis, t_star - eye)
    coords_n = _coords_stack(basis, t_n - eye)
    sigma_star = np.einsum("n,nk,nl->kl", ss.weights, coords_star, coords_star)
    sigma_n = np.einsum("n,nk,nl->kl", ss.weights, coords_n, coords_n)
    lhs = float(np.sum(np.abs(np.linalg.eigvalsh(sigma_n - sigma_star))))
    sample_norms = np.abs(np.linalg.eigvalsh(ss.array)).max(axis=1)
    kappa = float(w[-1] / w[0])
    beta = kappa * np.sqrt(float(np.dot(ss.weights, sample_norms)) / float(w[-1]))
    beta *= float(np.linalg.norm(gap))
    mean_sq = float(np.dot(ss.weights, np.sum(np.abs(t_star - eye) ** 2, axis=(1, 2))))
    rhs = beta * (2.0 * np.sqrt(mean_sq) + beta)
    return lhs, rhs


def clt_report(samples, q_ref, basis: SubspaceBasis, v_ref: float | None = None,
               config: SolverConfig | None = None) -> CltReport:
    """Solve the barycenter of the samples and studentize it against Q_ref.

    The constraint is taken from the basis anchor when present.  v_ref
    defaults to the empirical variance at Q_ref.
    """
    ss = as_sample_set(samples)
    qr = as_psd(q_ref)
    constraint = basis if basis.anchor is not None else None
    result = solve_barycenter(ss, constraint=constraint, config=config)
    q_n = result.barycenter
    sigma = estimate_sigma_hat(ss, q_n, basis)
    f_hat = estimate_f_hat(ss, q_n, basis)
    xi = estimate_xi_hat(sigma, f_hat)
    student = studentized_statistic(q_n, qr, xi, basis, len(ss))
    if v_ref is None:
        v_ref = frechet_variance(qr, ss)
    n = len(ss)
    return CltReport(
        n=n,
        q_hat=q_n,
        sigma_hat=sigma,
        f_hat=f_hat,
        xi_hat=xi,
        studentized=student,
        dbw_stat=float(np.sqrt(n) * bw_distance(q_n, qr)),
        variance_stat=float(np.sqrt(n) * (result.variance - v_ref)),
    )


# ---------------------------------------------------------------------------
# Concentration envelopes.  The constants sigma_T, sigma_F, U, B, b, nu are
# user-supplied; the artifact evaluates the bounds, it does not certify the
# tail assumptions behind them.
# ---------------------------------------------------------------------------


def _positive(value, name):
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")


def compose_c_q(norm_q_star: float, sigma_t: float, lambda_min_f_prime: float) -> float:
    """Leading constant 4 ||Q*|| sigma_T / lambda_min(F') of the Frobenius envelope."""
    _positive(norm_q_star, "norm_q_star")
    _positive(sigma_t, "sigma_t")
    _positive(lambda_min_f_prime, "lambda_min_f_prime")
    return 4.0 * norm_q_star * sigma_t / lambda_min_f_prime


def concentration_envelope_q(c_q: float, d: int, n: int, t: float) -> float:
    """High-probability envelope c_Q (d + t) / sqrt(n) for ||Q'_n - I||_F."""
    _positive(c_q, "c_q")
    _positive(d, "d")
    _positive(n, "n")
    _positive(t, "t")
    return c_q * (d + t) / np.sqrt(n)


def concentration_envelope_dbw(c_q: float, norm_q_star: float, d: int, n: int,
                               t: float) -> float:
    """Distance version of the envelope, scaled by ||Q*||^{1/2}."""
    _positive(norm_q_star, "norm_q_star")
    return np.sqrt(norm_q_star) * concentration_envelope_q(c_q, d, n, t)


def concentration_envelope_v(b: float, nu: float, c_q: float, norm_f_prime: float,
                             d: int, n: int, t: float) -> float:
    """Envelope max(b t^2 / n, nu t / sqrt(n)) + 3 c_Q^2 ||F'|| (d + t)^2 / n
    for the Fréchet-variance deviation."""
    _positive(b, "b")
    _positive(nu, "nu")
    _positive(c_q, "c_q")
    _positive(norm_f_prime, "norm_f_prime")
    _positive(d, "d")
    _positive(n, "n")
    _positive(t, "t")
    tail = max(b * t * t / n, nu * t / np.sqrt(n))
    return tail + 3.0 * c_q * c_q * norm_f_prime * (d + t) ** 2 / n


def subexp_tail(nu: float, b: float, t: float) -> float:
    """Sub-exponential upper tail: Gaussian regime below t = nu^2 / b,
    exponential regime above."""
    _positive(nu, "nu")
    _positive(b, "b")
    if t < 0:
        raise ValidationError("t must be nonnegative")
    if t <= nu * nu / b:
        return float(np.exp(-t * t / (2.0 * nu * nu)))
    return float(np.exp(-t / (2.0 * b)))
