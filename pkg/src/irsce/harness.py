"""Seeded Monte-Carlo campaigns across estimation schemes.

A campaign draws user placement once, caches the second-moment statistics the
LMMSE estimators need, then runs `trials` independent channel/noise draws per
scheme. Each trial's randomness comes from a dedicated counter-based stream
keyed by (master seed, scheme, repetition, trial index, purpose), so results
are reproducible and independent of the worker count.
"""

from __future__ import annotations

import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import ceil, fsum

import numpy as np

from .config import ScenarioConfig
from .errors import InfeasibleScheduleError, InvalidGeometryError
from .estimate import (
    cancel_direct,
    estimate_lambda_priors,
    estimate_reflected_gram,
    phase1_mmse,
    phase1_recover_noiseless,
    phase2_lmmse,
    phase2_recover_noiseless,
    phase3_conditional_mse,
    phase3_lmmse_all_slots,
    phase3_recover_noiseless,
    psi_phase2,
    psi_phase3,
    simulate_received,
)
from .model import (
    CorrelationSpec,
    LinkBudget,
    PathLossSpec,
    SystemDims,
    _as_generator,
    draw_channels,
    exp_correlation_matrix,
    path_loss,
)
from .metrics import pooled_ratio, ratio_halfwidth
from .schedule import (
    OrthogonalPlan,
    Phase3Plan,
    PhasePlan,
    Schedule,
    benchmark_phase3_schedule,
    dft_block,
    min_tau3,
    phase1_pilots,
    phase2_reflections_dft,
    phase2_reflections_onoff,
    phase2_reflections_random,
    phase2_schedule,
    phase3_schedule_noiseless,
    phase3_schedule_orthogonal_noisy,
)

# Stream purpose tags; the derivation path of every random draw is
# (seed, scheme_key, rep, trial, tag), placement/statistics omit the trial.
TAG_PLACEMENT = 101
TAG_STATS = 102
TAG_CHANNEL = 1
TAG_NOISE = 2
TAG_SCHEDULE = 3


def scheme_key(name: str) -> int:
    """Stable 32-bit key of a scheme id (CRC-32 of its UTF-8 name)."""
    return zlib.crc32(name.encode("utf-8"))


def substream(*path: int) -> np.random.Generator:
    """Philox generator seeded by an integer derivation path."""
    return _as_generator(np.random.SeedSequence([int(x) & 0xFFFFFFFF for x in path]))


def place_users(config: ScenarioConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw user positions uniformly on the configured disc and return the
    per-user (BS distance, IRS distance) arrays.

    The BS sits at the origin and the IRS on the x-axis at the BS-IRS
    distance; the disc center is placed to match its configured distances
    from both.
    """
    d_bi = config.d_bs_irs_m
    d_cb = config.user_center_d_bs_m
    d_ci = config.user_center_d_irs_m
    cx = (d_bi**2 + d_cb**2 - d_ci**2) / (2.0 * d_bi)
    cy2 = d_cb**2 - cx**2
    if cy2 < -1e-9 * d_cb**2:
        raise InvalidGeometryError(
            "user-center distances are incompatible with the BS-IRS distance")
    center = np.array([cx, np.sqrt(max(cy2, 0.0))])
    bs = np.array([0.0, 0.0])
    irs = np.array([d_bi, 0.0])

    rng = _as_generator(seed)
    r = config.user_radius_m * np.sqrt(rng.uniform(0.0, 1.0, size=config.K))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=config.K)
    pos = center[None, :] + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    d_bs_user = np.linalg.norm(pos - bs[None, :], axis=1)
    d_irs_user = np.linalg.norm(pos - irs[None, :], axis=1)
    return d_bs_user, d_irs_user


def resolve_phase_plan(config: ScenarioConfig, scheme: str) -> PhasePlan:
    """Slot counts for a scheme: configured values, else the scheme's minimum,
    then the extra-slot policy on top."""
    dims = SystemDims(config.K, config.N, config.M)
    tau1 = config.tau1 if config.tau1 is not None else dims.K
    tau2 = config.tau2 if config.tau2 is not None else dims.N
    if config.tau3 is not None:
        tau3 = config.tau3
    elif scheme == "proposed-noiseless":
        tau3 = min_tau3(dims)
    elif scheme == "benchmark":
        tau3 = (dims.K - 1) * tau2
    else:
        tau3 = (dims.K - 1) * ceil(dims.N / dims.M)
    return PhasePlan(tau1, tau2, tau3).with_extra(config.extra_slots, config.extra_policy)


@dataclass(frozen=True)
class ResultRow:
    """Aggregated campaign output for one (scheme, configuration, repetition)."""

    scheme: str
    K: int
    N: int
    M: int
    tau1: int
    tau2: int
    tau3: int
    rep: int
    seed: int
    trials: int
    e1: float
    e1_pred: float
    e2: float
    e2_pred: float
    e2_ci: float
    e3: float          # scaling-factor domain; NaN for the benchmark scheme
    e3_pred: float
    e3_ci: float
    e3_g: float        # reflected-channel domain over users 2..K
    e_total: float
    e_total_ci: float
    wall_clock: float


CSV_COLUMNS = (
    "scheme", "K", "N", "M", "tau1", "tau2", "tau3", "rep", "seed", "trials",
    "e1", "e1_pred", "e2", "e2_pred", "e2_ci",
    "e3", "e3_pred", "e3_ci", "e3_g", "e_total", "e_total_ci",
)


def emit_csv(rows, path, include_timing: bool = False) -> None:
    """Write result rows with a stable column order and 12-significant-digit
    decimals. Timing is opt-in so default output is byte-identical across
    reruns and worker counts."""
    cols = CSV_COLUMNS + (("wallclock_s",) if include_timing else ())
    with open(path, "w", newline="") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for col in cols:
                v = row.wall_clock if col == "wallclock_s" else getattr(row, col)
                cells.append(str(v) if isinstance(v, (int, str)) else f"{v:.12g}")
            f.write(",".join(cells) + "\n")


@dataclass(frozen=True)
class TrialContext:
    """Everything a worker needs to run one trial (picklable, immutable)."""

    scheme: str
    dims: SystemDims
    plan: PhasePlan
    budget: LinkBudget
    corr: CorrelationSpec
    loss: PathLossSpec
    beta_bu: np.ndarray
    r_var_n_factor: bool
    phase3_g1: str
    pilots1: np.ndarray
    refl2: np.ndarray | None          # None for the random-phase scheme
    sched3: Schedule
    plan3: Phase3Plan | None          # noiseless construction
    orth3: OrthogonalPlan | None      # noisy orthogonal construction
    bench_tau2: int
    psi2: np.ndarray | None
    cbi1: np.ndarray | None
    cbi_users: dict | None            # per-user Gram priors (benchmark)
    psi3_by_user: dict | None
    priors: dict | None
    eps1: np.ndarray
    master_seed: int
    skey: int
    rep: int


@dataclass(frozen=True)
class TrialOutcome:
    e1_num: float
    e1_den: float
    e2_num: float
    e2_den: float
    e2_pred: float
    e3_num: float
    e3_den: float
    e3_pred: float
    e3g_num: float
    e3g_den: float
    tot_num: float
    tot_den: float


def _sq(a: np.ndarray) -> float:
    return float(np.sum(np.abs(a) ** 2))


def _run_trial(ctx: TrialContext, t: int) -> TrialOutcome:
    dims, plan, budget = ctx.dims, ctx.plan, ctx.budget
    K, N, M = dims.K, dims.N, dims.M
    p = budget.p
    noiseless = ctx.scheme == "proposed-noiseless"

    chan = draw_channels(
        dims, ctx.corr, ctx.loss,
        substream(ctx.master_seed, ctx.skey, ctx.rep, t, TAG_CHANNEL),
        r_var_n_factor=ctx.r_var_n_factor,
    )
    noise_rng = substream(ctx.master_seed, ctx.skey, ctx.rep, t, TAG_NOISE)

    # Phase I: direct channels, IRS off.
    sched1 = Schedule(ctx.pilots1, np.zeros((N, plan.tau1)))
    y1 = simulate_received(chan, sched1, budget, noise_on=not noiseless, rng=noise_rng)
    if noiseless:
        h_hat = phase1_recover_noiseless(y1, ctx.pilots1, p)
    else:
        h_hat, _ = phase1_mmse(y1, ctx.pilots1, p, budget.sigma2, ctx.beta_bu)

    # Phase II: user-1 reflected channels.
    if ctx.refl2 is not None:
        refl2 = ctx.refl2
    else:
        refl2 = phase2_reflections_random(
            N, plan.tau2, substream(ctx.master_seed, ctx.skey, ctx.rep, t, TAG_SCHEDULE))
    sched2 = phase2_schedule(K, refl2)
    y2 = simulate_received(chan, sched2, budget, noise_on=not noiseless, rng=noise_rng)
    ybar2 = cancel_direct(y2, h_hat, sched2.pilots, p)
    if noiseless:
        g1_hat = phase2_recover_noiseless(ybar2, refl2, p)
        e2_pred = 0.0
    else:
        g1_hat, e2_pred = phase2_lmmse(ybar2, refl2, p, ctx.psi2, ctx.cbi1)

    # Phase III: remaining users.
    e3_num = e3_den = e3_pred = float("nan")
    e3g_num = e3g_den = float("nan")
    g_hat = np.empty((K, N, M), dtype=complex)
    g_hat[0] = g1_hat.T
    if K > 1:
        y3 = simulate_received(chan, ctx.sched3, budget, noise_on=not noiseless, rng=noise_rng)
        ybar3 = cancel_direct(y3, h_hat, ctx.sched3.pilots, p)
        if ctx.scheme == "benchmark":
            tau_b = ctx.bench_tau2
            block_refl = dft_block(N, tau_b)
            for k in range(2, K + 1):
                block = ybar3[:, (k - 2) * tau_b:(k - 1) * tau_b]
                psi2_k = psi_phase2(tau_b, M, p, budget.sigma2, float(ctx.beta_bu[k - 1]), plan.tau1)
                gk_hat, _ = phase2_lmmse(block, block_refl, p, psi2_k, ctx.cbi_users[k])
                g_hat[k - 1] = gk_hat.T
        else:
            if noiseless:
                lam_hat = phase3_recover_noiseless(ybar3, dims, ctx.plan3, g1_hat, p)
                e3_pred = 0.0
            else:
                g_source = chan.g1 if ctx.phase3_g1 == "perfect" else g1_hat
                lam_hat, _ = phase3_lmmse_all_slots(
                    ybar3, ctx.orth3, g_source, p, ctx.psi3_by_user, ctx.priors)
                e3_pred = phase3_conditional_mse(ctx.orth3, chan.g1, p, ctx.psi3_by_user, ctx.priors)
            e3_num, e3_den = _sq(lam_hat - chan.lam), _sq(chan.lam)
            for k in range(2, K + 1):
                g_hat[k - 1] = lam_hat[k - 2][:, None] * g1_hat.T
        e3g_num, e3g_den = _sq(g_hat[1:] - chan.g[1:]), _sq(chan.g[1:])

    return TrialOutcome(
        e1_num=_sq(h_hat - chan.h),
        e1_den=_sq(chan.h),
        e2_num=_sq(g1_hat - chan.g1),
        e2_den=_sq(chan.g1),
        e2_pred=e2_pred,
        e3_num=e3_num,
        e3_den=e3_den,
        e3_pred=e3_pred,
        e3g_num=e3g_num,
        e3g_den=e3g_den,
        tot_num=_sq(h_hat - chan.h) + _sq(g_hat - chan.g),
        tot_den=_sq(chan.h) + _sq(chan.g),
    )


def _trial_chunk(ctx: TrialContext, trials: list[int]) -> list[TrialOutcome]:
    return [_run_trial(ctx, t) for t in trials]


def build_context(config: ScenarioConfig, scheme: str, rep: int = 0) -> TrialContext:
    """Resolve schedules and cache the scenario statistics for one scheme."""
    dims = SystemDims(config.K, config.N, config.M)
    K, N, M = dims.K, dims.N, dims.M
    plan = resolve_phase_plan(config, scheme)
    budget = LinkBudget.from_dbm(config.power_dbm, config.bandwidth_hz, config.noise_psd_dbm_hz)
    corr = CorrelationSpec(
        np.full(K, config.corr_bs_direct, dtype=complex),
        config.corr_bs_reflect,
        config.corr_irs_reflect,
        np.full(K, config.corr_irs_user, dtype=complex),
    )
    d_bu, d_iu = place_users(config, substream(config.seed, rep, TAG_PLACEMENT))
    loss = PathLossSpec(
        config.beta0_db, config.d0_m, d_bu, d_iu, config.d_bs_irs_m,
        config.alpha_direct, config.alpha_irs_user, config.alpha_bs_irs,
    )
    beta_bu, _, _ = path_loss(loss)

    pilots1 = phase1_pilots(K, plan.tau1)
    if scheme == "phase2-onoff":
        refl2 = phase2_reflections_onoff(N, plan.tau2)
    elif scheme == "phase2-random":
        refl2 = None
    else:
        refl2 = phase2_reflections_dft(N, plan.tau2)

    noiseless = scheme == "proposed-noiseless"
    plan3 = orth3 = None
    bench_tau2 = 0
    if scheme == "benchmark":
        if K > 1:
            bench_tau2 = plan.tau3 // (K - 1)
            if bench_tau2 < 1:
                raise InfeasibleScheduleError(
                    f"benchmark needs tau3 >= K-1 = {K - 1}, got {plan.tau3}")
            sched3 = benchmark_phase3_schedule(dims, bench_tau2)
        else:
            sched3 = Schedule(np.zeros((K, 0)), np.zeros((N, 0)))
    elif noiseless:
        sched3, plan3 = phase3_schedule_noiseless(dims, plan.tau3)
    else:
        sched3, orth3 = phase3_schedule_orthogonal_noisy(dims, plan.tau3 if K > 1 else 0)
    # actual Phase-III length after integer division in the benchmark
    plan = PhasePlan(plan.tau1, plan.tau2, sched3.tau)

    psi2 = cbi1 = None
    cbi_users = psi3_by_user = priors = None
    eps1 = np.zeros(K)
    if not noiseless:
        stats_seed = [config.seed, rep, TAG_STATS]
        psi2 = psi_phase2(plan.tau2, M, budget.p, budget.sigma2, float(beta_bu[0]), plan.tau1)
        cbi1 = estimate_reflected_gram(
            dims, corr, loss, user=1, trials=config.prior_draws,
            seed=np.random.SeedSequence([*stats_seed, 1]),
            r_var_n_factor=config.r_var_n_factor,
        )
        eps1 = M * beta_bu * budget.sigma2 / (beta_bu * budget.p * plan.tau1 + budget.sigma2)
        if scheme == "benchmark" and K > 1:
            cbi_users = {
                k: estimate_reflected_gram(
                    dims, corr, loss, user=k, trials=config.prior_draws,
                    seed=np.random.SeedSequence([*stats_seed, k]),
                    r_var_n_factor=config.r_var_n_factor,
                )
                for k in range(2, K + 1)
            }
        elif K > 1:
            psi3_by_user = {
                k: psi_phase3(budget.p, budget.sigma2, float(beta_bu[k - 1]), plan.tau1,
                              exp_correlation_matrix(corr.bs_direct[k - 1], M))
                for k in range(2, K + 1)
            }
            slots = list(dict.fromkeys(zip(orth3.users, orth3.elements)))
            priors = estimate_lambda_priors(
                dims, corr, loss, slots, trials=config.prior_draws,
                cap_scale=config.prior_cap_scale,
                seed=np.random.SeedSequence([*stats_seed, 2]),
            )

    return TrialContext(
        scheme=scheme, dims=dims, plan=plan, budget=budget, corr=corr, loss=loss,
        beta_bu=beta_bu, r_var_n_factor=config.r_var_n_factor, phase3_g1=config.phase3_g1,
        pilots1=pilots1, refl2=refl2, sched3=sched3, plan3=plan3, orth3=orth3,
        bench_tau2=bench_tau2, psi2=psi2, cbi1=cbi1, cbi_users=cbi_users,
        psi3_by_user=psi3_by_user, priors=priors, eps1=eps1,
        master_seed=config.seed, skey=scheme_key(scheme), rep=rep,
    )


def _aggregate(ctx: TrialContext, outcomes: list[TrialOutcome], wall: float) -> ResultRow:
    dims, plan = ctx.dims, ctx.plan
    K, M = dims.K, dims.M

    def col(name):
        return [getattr(o, name) for o in outcomes]

    e1 = pooled_ratio(col("e1_num"), col("e1_den"))
    e1_pred = float(np.sum(ctx.eps1) / np.sum(M * ctx.beta_bu)) if ctx.scheme != "proposed-noiseless" else 0.0
    e2 = pooled_ratio(col("e2_num"), col("e2_den"))
    e2_pred = (
        fsum(col("e2_pred")) / len(outcomes) / float(np.trace(ctx.cbi1).real)
        if ctx.cbi1 is not None else 0.0
    )
    has_lambda = K > 1 and ctx.scheme != "benchmark"
    if has_lambda:
        e3 = pooled_ratio(col("e3_num"), col("e3_den"))
        e3_ci = ratio_halfwidth(col("e3_num"), col("e3_den"))
        if ctx.priors is not None:
            lam_power = fsum(float(np.trace(c).real) for c in ctx.priors.values())
            e3_pred = fsum(col("e3_pred")) / len(outcomes) / lam_power
        else:
            e3_pred = 0.0
    else:
        e3 = e3_ci = e3_pred = float("nan")
    if K > 1:
        e3_g = pooled_ratio(col("e3g_num"), col("e3g_den"))
    else:
        e3_g = float("nan")
    return ResultRow(
        scheme=ctx.scheme, K=dims.K, N=dims.N, M=dims.M,
        tau1=plan.tau1, tau2=plan.tau2, tau3=plan.tau3,
        rep=ctx.rep, seed=ctx.master_seed, trials=len(outcomes),
        e1=e1, e1_pred=e1_pred,
        e2=e2, e2_pred=e2_pred, e2_ci=ratio_halfwidth(col("e2_num"), col("e2_den")),
        e3=e3, e3_pred=e3_pred, e3_ci=e3_ci, e3_g=e3_g,
        e_total=pooled_ratio(col("tot_num"), col("tot_den")),
        e_total_ci=ratio_halfwidth(col("tot_num"), col("tot_den")),
        wall_clock=wall,
    )


def run_scheme(config: ScenarioConfig, scheme: str, rep: int = 0) -> ResultRow:
    """Run all trials for one scheme and aggregate them into a ResultRow."""
    t0 = time.perf_counter()
    ctx = build_context(config, scheme, rep)
    trials = list(range(config.trials))
    if config.threads <= 1 or config.trials < 4:
        outcomes = _trial_chunk(ctx, trials)
    else:
        chunks = np.array_split(np.asarray(trials), config.threads)
        with ProcessPoolExecutor(max_workers=config.threads) as ex:
            futures = [ex.submit(_trial_chunk, ctx, [int(t) for t in c]) for c in chunks if len(c)]
            outcomes = [o for f in futures for o in f.result()]
    return _aggregate(ctx, outcomes, time.perf_counter() - t0)


def run_campaign(config: ScenarioConfig) -> list[ResultRow]:
    """Run every configured scheme and repetition; rows come back in a fixed
    (repetition, scheme) order."""
    rows = []
    for rep in range(config.repetitions):
        for scheme in config.schemes:
            rows.append(run_scheme(config, scheme, rep))
    return rows
