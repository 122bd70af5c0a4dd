"""Channel recovery from received pilot blocks.

Exact solvers for the noiseless case follow the closed-form inversions of the
three-phase protocol; the noisy case uses the scalar-coefficient MMSE form for
the direct channels and LMMSE estimators (with interference cancellation) for
the reflected channels and scaling factors. Received blocks are plain (M, tau)
complex arrays whose columns are the per-slot BS observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateChannelError,
    NumericalConditioningError,
    PreconditionError,
)
from .model import (
    ChannelRealization,
    CorrelationSpec,
    LinkBudget,
    PathLossSpec,
    SystemDims,
    _as_generator,
    coloring_root,
    complex_normal,
    path_loss,
)
from .schedule import OrthogonalPlan, Phase3Plan, Schedule, SingleUserSlot

_SVD_RCOND = 1e-10
_GRAM_RTOL = 1e-8


@dataclass(frozen=True)
class EstimateSet:
    """Estimated channels: direct vectors, user-1 reflected columns, and the
    scaling factors of users 2..K.

    h    (K, M)     estimated direct channels
    g1   (M, N)     estimated [g_{1,1} .. g_{1,N}]
    lam  (K-1, N)   estimated scaling factors
    """

    h: np.ndarray
    g1: np.ndarray
    lam: np.ndarray

    def reconstruct_g(self) -> np.ndarray:
        """Reflected-channel estimates (K, N, M): user 1 directly, users k >= 2
        as lam_{k,n} * g1_hat_n."""
        K = self.h.shape[0]
        g = np.empty((K, self.g1.shape[1], self.g1.shape[0]), dtype=complex)
        g[0] = self.g1.T
        for k in range(1, K):
            g[k] = self.lam[k - 1][:, None] * self.g1.T
        return g


def simulate_received(
    chan: ChannelRealization,
    sched: Schedule,
    budget: LinkBudget,
    noise_on: bool = True,
    rng=None,
) -> np.ndarray:
    """Received BS signal (M, tau): per slot i,
    y_i = sum_k (h_k + sum_n phi_{n,i} g_{k,n}) * sqrt(p) * a_{k,i} + z_i,
    with z = 0 when noise is off."""
    A, phi = sched.pilots, sched.reflections
    if A.shape[0] != chan.h.shape[0] or phi.shape[0] != chan.t.shape[1]:
        raise ValueError("schedule dimensions do not match the channel realization")
    y = np.sqrt(budget.p) * (chan.h.T @ A + np.einsum("ki,ni,knm->mi", A, phi, chan.g))
    if noise_on:
        if rng is None:
            raise ValueError("a noise rng/seed is required when noise is on")
        y = y + complex_normal(_as_generator(rng), y.shape, budget.sigma2)
    return y


def _check_orthogonal(rows: np.ndarray, tau: int, what: str) -> None:
    gram = rows @ rows.conj().T
    if np.max(np.abs(gram - tau * np.eye(rows.shape[0]))) > _GRAM_RTOL * tau:
        raise PreconditionError(f"{what} rows are not orthogonal with norm {tau}")


def phase1_recover_noiseless(y: np.ndarray, pilots: np.ndarray, p: float) -> np.ndarray:
    """Exact direct-channel recovery (K, M) given orthogonal pilots and no noise:
    [h_1 .. h_K] = Y @ conj(pilots)^T / (tau1 * sqrt(p))."""
    tau1 = pilots.shape[1]
    _check_orthogonal(pilots, tau1, "phase-1 pilot")
    return (y @ pilots.conj().T / (tau1 * np.sqrt(p))).T


def phase1_mmse(
    y: np.ndarray, pilots: np.ndarray, p: float, sigma2: float, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Scalar-coefficient MMSE estimate of the direct channels under noise.

    h_hat_k = beta_k * sqrt(p) / (beta_k * p * tau1 + sigma2) * Y @ conj(a_k);
    the closed-form per-user MSE is M * beta_k * sigma2 / (beta_k * p * tau1 + sigma2).
    The scalar form is exact MMSE for white BS-side correlation and is used
    as printed for correlated channels as well.
    """
    tau1 = pilots.shape[1]
    _check_orthogonal(pilots, tau1, "phase-1 pilot")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    M = y.shape[0]
    denom = beta * p * tau1 + sigma2
    h_hat = ((y @ pilots.conj().T) * (beta * np.sqrt(p) / denom)).T
    mse = M * beta * sigma2 / denom
    return h_hat, mse


def cancel_direct(y: np.ndarray, h_hat: np.ndarray, pilots: np.ndarray, p: float) -> np.ndarray:
    """Subtract the direct-channel contribution sqrt(p) * h_hat_k * a_{k,i}
    from every slot."""
    if h_hat.shape[0] != pilots.shape[0]:
        raise PreconditionError(
            f"need a direct-channel estimate for each of the {pilots.shape[0]} pilot rows")
    return y - np.sqrt(p) * h_hat.T @ pilots


def phase2_recover_noiseless(ybar: np.ndarray, refl: np.ndarray, p: float) -> np.ndarray:
    """Exact recovery of user-1 reflected columns (M, N):
    [g_{1,1} .. g_{1,N}] = Ybar @ Phi^H / (tau2 * sqrt(p)), requiring
    Phi @ Phi^H = tau2 * I (DFT-style reflections, user-1 pilots all ones)."""
    tau2 = refl.shape[1]
    _check_orthogonal(refl, tau2, "phase-2 reflection")
    return ybar @ refl.conj().T / (tau2 * np.sqrt(p))


def psi_phase2(
    tau2: int, M: int, p: float, sigma2: float, beta1: float, tau1: int, a1: np.ndarray | None = None
) -> np.ndarray:
    """Effective Phase-II noise covariance (tau2 x tau2): residual Phase-I
    estimation error re-transmitted by user 1 plus AWGN,
    Psi = p*M*beta1*sigma2/(beta1*p*tau1 + sigma2) * conj(a1) a1^T + M*sigma2*I."""
    a = np.ones(tau2, dtype=complex) if a1 is None else np.asarray(a1, dtype=complex)
    c = p * M * beta1 * sigma2 / (beta1 * p * tau1 + sigma2)
    return c * np.outer(a.conj(), a) + M * sigma2 * np.eye(tau2)


def phase2_lmmse(
    ybar: np.ndarray, refl: np.ndarray, p: float, psi: np.ndarray, cbi: np.ndarray
) -> tuple[np.ndarray, float]:
    """LMMSE estimate of the user-1 reflected columns and its closed-form MSE.

    g1_hat = sqrt(p) * Ybar Psi^-1 Phi^H (p Phi Psi^-1 Phi^H + C^-1)^-1,
    mse    = tr((p Phi Psi^-1 Phi^H + C^-1)^-1),
    where C is the expected Gram E[[g_{1,1}..g_{1,N}]^H [g_{1,1}..g_{1,N}]].
    """
    try:
        psi_inv_phiH = np.linalg.solve(psi, refl.conj().T)
        inner = p * refl @ psi_inv_phiH + np.linalg.inv(cbi)
        inner_inv = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError(f"phase-2 LMMSE solve failed: {exc}") from exc
    g1_hat = np.sqrt(p) * ybar @ psi_inv_phiH @ inner_inv
    return g1_hat, float(np.trace(inner_inv).real)


def psi_phase3(p: float, sigma2: float, beta_k: float, tau1: int, corr_bs_k: np.ndarray) -> np.ndarray:
    """Effective Phase-III noise covariance (M x M) for the slot's scheduled
    user: Phase-I residual colored by the user's BS correlation matrix plus
    AWGN, in the printed three-term form."""
    M = corr_bs_k.shape[0]
    denom = beta_k * p * tau1 + sigma2
    return (
        beta_k * p * sigma2**2 / denom * corr_bs_k
        + ((beta_k * p) ** 2 * tau1 * sigma2 / denom + sigma2) * np.eye(M)
    )


def phase3_lmmse(
    y: np.ndarray, G: np.ndarray, p: float, psi: np.ndarray, clam: np.ndarray
) -> tuple[np.ndarray, float]:
    """LMMSE estimate of a slot's scaling-factor sub-vector and its conditional MSE.

    y may be (M,) for a single observation or (M, R) for R repeats of the same
    (user, element-subset) slot; repeats are fused into one solve.

    lam_hat = sqrt(p) (R p G^H Psi^-1 G + C_lam^-1)^-1 G^H Psi^-1 sum_r y_r,
    mse     = tr((R p G^H Psi^-1 G + C_lam^-1)^-1).
    """
    y = np.asarray(y)
    reps = 1 if y.ndim == 1 else y.shape[1]
    y_sum = y if y.ndim == 1 else y.sum(axis=1)
    try:
        psi_inv_G = np.linalg.solve(psi, G)
        A = reps * p * G.conj().T @ psi_inv_G + np.linalg.inv(clam)
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError(f"phase-3 LMMSE solve failed: {exc}") from exc
    lam_hat = np.sqrt(p) * A_inv @ (psi_inv_G.conj().T @ y_sum)
    return lam_hat, float(np.trace(A_inv).real)


def _svd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least-squares solve through an SVD pseudo-inverse with relative cutoff;
    raises DegenerateChannelError when the numerical rank is below the number
    of unknowns."""
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateChannelError("all-zero system matrix")
    rank = int(np.sum(s > _SVD_RCOND * s[0]))
    if rank < A.shape[1]:
        raise DegenerateChannelError(
            f"selected channel columns have numerical rank {rank} < {A.shape[1]}")
    return Vh.conj().T @ ((U.conj().T @ b) / s)


def phase3_recover_noiseless(
    ybar: np.ndarray,
    dims: SystemDims,
    plan: Phase3Plan,
    g1: np.ndarray,
    p: float,
) -> np.ndarray:
    """Exact recovery of all scaling factors (K-1, N) from the noiseless
    Phase-III block produced by the minimum-length schedule.

    M >= N: one pseudo-inverse solve per user against all N columns.
    M < N: stage-1 slots invert the M selected columns directly; stage-2
    slots first cancel the already-recovered interference, then solve.
    Columns beyond the base cycle repeat it and are re-solved idempotently.
    """
    K, N = dims.K, dims.N
    lam = np.zeros((max(K - 1, 0), N), dtype=complex)
    if K == 1:
        return lam
    sp = np.sqrt(p)

    if plan.degenerate:
        base = K - 1
        for i in range(ybar.shape[1]):
            k = 2 + (i % base)
            lam[k - 2] = _svd_solve(g1, ybar[:, i] / sp)
        return lam

    base_slots = list(plan.stage1) + list(plan.stage2)
    base = len(base_slots)
    for i in range(ybar.shape[1]):
        slot = base_slots[i % base]
        if isinstance(slot, SingleUserSlot):
            cols = [n - 1 for n in slot.elements]
            sol = _svd_solve(g1[:, cols], ybar[:, i] / sp)
            lam[slot.user - 2, cols] = sol
        else:
            on = [n for _, n in slot.targets]
            y_tilde = ybar[:, i] / sp
            for k in slot.users:
                for n in on:
                    if (k, n) not in slot.targets:
                        y_tilde = y_tilde - lam[k - 2, n - 1] * g1[:, n - 1]
            sol = _svd_solve(g1[:, [n - 1 for n in on]], y_tilde)
            for (k, n), v in zip(slot.targets, sol):
                lam[k - 2, n - 1] = v
    return lam


def stacked_system_matrix(sched: Schedule, g1: np.ndarray) -> np.ndarray:
    """Stacked Phase-III system matrix (M*tau3, (K-1)*N) whose column for
    unknown (k, n) holds phi_{n,i} * a_{k,i} * g_{1,n} in each slot block;
    full column rank is exactly the perfect-recovery condition."""
    A, phi = sched.pilots, sched.reflections
    K = A.shape[0]
    N, tau3 = phi.shape
    M = g1.shape[0]
    V = np.zeros((M * tau3, (K - 1) * N), dtype=complex)
    for i in range(tau3):
        rows = slice(i * M, (i + 1) * M)
        for k in range(2, K + 1):
            for n in range(1, N + 1):
                V[rows, (k - 2) * N + (n - 1)] = phi[n - 1, i] * A[k - 1, i] * g1[:, n - 1]
    return V


# --------------------------------------------------------------------------
# Second-moment statistics used by the LMMSE estimators
# --------------------------------------------------------------------------


def estimate_reflected_gram(
    dims: SystemDims,
    corr: CorrelationSpec,
    loss: PathLossSpec,
    user: int = 1,
    trials: int = 10_000,
    seed=0,
    r_var_n_factor: bool = True,
) -> np.ndarray:
    """Empirical N x N Gram expectation E[[g_{k,1}..g_{k,N}]^H [g_{k,1}..g_{k,N}]]
    for the given user (1-based), from seeded batched draws."""
    N, M = dims.N, dims.M
    _, beta_iu, beta_bi = path_loss(loss)
    rng = _as_generator(seed)
    SB = coloring_root(corr.bs_reflect, M)
    SI = coloring_root(corr.irs_reflect, N)
    SIk = coloring_root(corr.irs_user[user - 1], N)

    gram = np.zeros((N, N), dtype=complex)
    r_var = beta_bi * (N if r_var_n_factor else 1)
    batch = 2000
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        R = SB @ complex_normal(rng, (b, M, N), r_var) @ SI
        tk = complex_normal(rng, (b, N), beta_iu[user - 1]) @ SIk.T
        G = R * tk[:, None, :]
        gram += np.einsum("bmi,bmj->ij", G.conj(), G)
        done += b
    gram /= trials
    return (gram + gram.conj().T) / 2.0


def estimate_lambda_priors(
    dims: SystemDims,
    corr: CorrelationSpec,
    loss: PathLossSpec,
    slots,
    trials: int = 10_000,
    cap: float | None = None,
    cap_scale: float = 10.0,
    seed=0,
) -> dict[tuple[int, tuple[int, ...]], np.ndarray]:
    """Trimmed empirical second moments E[lam lam^H] of per-slot sub-vectors.

    `slots` is an iterable of (user, elements) with 1-based indices, user >= 2.
    The scaling-factor distribution is heavy-tailed (its exact second moment
    diverges), so draws with any |lam| above `cap` are discarded; when `cap`
    is omitted it defaults to cap_scale x the pooled empirical median of
    |lam|. Results are symmetrized and ridge-regularized. Identical seeds
    give identical priors.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 draws for a usable prior")
    K, N = dims.K, dims.N
    _, beta_iu, _ = path_loss(loss)
    rng = _as_generator(seed)

    roots = [coloring_root(corr.irs_user[k], N) for k in range(K)]
    t = np.empty((trials, K, N), dtype=complex)
    for k in range(K):
        t[:, k, :] = complex_normal(rng, (trials, N), beta_iu[k]) @ roots[k].T
    lam = t[:, 1:, :] / t[:, :1, :]  # (trials, K-1, N)

    if cap is None:
        cap = cap_scale * float(np.median(np.abs(lam)))

    priors: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}
    for user, elements in slots:
        key = (int(user), tuple(int(n) for n in elements))
        if key in priors:
            continue
        sub = lam[:, user - 2, [n - 1 for n in elements]]  # (trials, d)
        keep = np.max(np.abs(sub), axis=1) <= cap
        kept = sub[keep]
        if kept.shape[0] == 0:
            raise ValueError("trimming removed every draw; cap is too small")
        C = kept.conj().T @ kept / kept.shape[0]
        C = (C + C.conj().T) / 2.0
        d = C.shape[0]
        C = C + (1e-8 * np.trace(C).real / d) * np.eye(d)
        priors[key] = C
    return priors


def _slot_groups(plan: OrthogonalPlan) -> dict[tuple[int, tuple[int, ...]], list[int]]:
    groups: dict[tuple[int, tuple[int, ...]], list[int]] = {}
    for i, (k, delta) in enumerate(zip(plan.users, plan.elements)):
        groups.setdefault((k, delta), []).append(i)
    return groups


def phase3_lmmse_all_slots(
    ybar: np.ndarray,
    plan: OrthogonalPlan,
    g1: np.ndarray,
    p: float,
    psi_by_user: dict[int, np.ndarray],
    priors: dict[tuple[int, tuple[int, ...]], np.ndarray],
) -> tuple[np.ndarray, float]:
    """Run the per-slot LMMSE over an orthogonal Phase-III block, fusing
    repeated (user, elements) slots, and scatter the results into a full
    (K-1, N) scaling-factor array. Returns the array and the summed
    closed-form conditional MSE."""
    n_users = max(plan.users) - 1 if plan.users else 0
    lam = np.zeros((n_users, g1.shape[1]), dtype=complex)
    mse_sum = 0.0
    for (k, delta), cols in _slot_groups(plan).items():
        G = g1[:, [n - 1 for n in delta]]
        lam_hat, mse = phase3_lmmse(ybar[:, cols], G, p, psi_by_user[k], priors[(k, delta)])
        lam[k - 2, [n - 1 for n in delta]] = lam_hat
        mse_sum += mse
    return lam, mse_sum


def phase3_conditional_mse(
    plan: OrthogonalPlan,
    g1: np.ndarray,
    p: float,
    psi_by_user: dict[int, np.ndarray],
    priors: dict[tuple[int, tuple[int, ...]], np.ndarray],
) -> float:
    """Closed-form Phase-III MSE conditioned on the given reflected columns,
    summed over the slot groups (repeat-fused)."""
    total = 0.0
    for (k, delta), cols in _slot_groups(plan).items():
        G = g1[:, [n - 1 for n in delta]]
        psi = psi_by_user[k]
        try:
            A = len(cols) * p * G.conj().T @ np.linalg.solve(psi, G) + np.linalg.inv(priors[(k, delta)])
            total += float(np.trace(np.linalg.inv(A)).real)
        except np.linalg.LinAlgError as exc:
            raise NumericalConditioningError(f"phase-3 MSE evaluation failed: {exc}") from exc
    return total
