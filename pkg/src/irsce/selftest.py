"""Built-in invariant suite behind the `selftest` CLI verb.

Each check is small enough to run in seconds; together they cover the load-
bearing identities: pilot/reflection orthogonality, full rank of the stacked
Phase-III system on a dims grid, index-set partition/disjointness and
recovery-order soundness, agreement of the vectorized received-signal model
with a brute-force triple loop, and campaign determinism across worker counts.
"""

from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .estimate import simulate_received, stacked_system_matrix
from .harness import emit_csv, run_campaign, substream
from .model import LinkBudget, CorrelationSpec, PathLossSpec, SystemDims, draw_channels
from .schedule import (
    Schedule,
    phase1_pilots,
    phase2_reflections_dft,
    phase3_plan,
    phase3_schedule_noiseless,
    validate_phase3_plan,
)


def _check_pilot_gram() -> str:
    worst = 0.0
    for K, tau1 in [(1, 1), (2, 2), (3, 5), (8, 8), (8, 13)]:
        A = phase1_pilots(K, tau1)
        worst = max(worst, float(np.max(np.abs(A @ A.conj().T - tau1 * np.eye(K)))))
    assert worst < 1e-10, f"pilot Gram deviation {worst}"
    return f"max |A A^H - tau1 I| = {worst:.2e}"


def _check_dft_gram() -> str:
    worst = 0.0
    for N, tau2 in [(1, 1), (2, 2), (3, 4), (8, 8), (8, 19), (32, 32)]:
        phi = phase2_reflections_dft(N, tau2)
        worst = max(worst, float(np.max(np.abs(phi @ phi.conj().T - tau2 * np.eye(N)))) / tau2)
    assert worst < 1e-12, f"DFT Gram relative deviation {worst}"
    return f"max rel |Phi Phi^H - tau2 I| = {worst:.2e}"


def _grid(limit: int):
    for K in range(2, limit + 1):
        for N in range(1, limit + 1):
            for M in range(1, limit + 1):
                yield SystemDims(K, N, M)


def _check_plan_sets() -> str:
    count = 0
    for dims in _grid(5):
        validate_phase3_plan(phase3_plan(dims))
        count += 1
    return f"{count} plans validated (partition, disjointness, coverage)"


def _check_recovery_order() -> str:
    # validate_phase3_plan already enforces that stage-2 slots only reference
    # previously recovered scaling factors; exercise it on a wider grid here.
    count = 0
    for dims in _grid(6):
        plan = phase3_plan(dims)
        if not plan.degenerate:
            validate_phase3_plan(plan)
            count += 1
    return f"recovery order sound for {count} non-degenerate plans"


def _check_v_rank() -> str:
    rng = substream(2024, 7)
    worst = np.inf
    for dims in _grid(4):
        sched, _ = phase3_schedule_noiseless(dims)
        g1 = (rng.standard_normal((dims.M, dims.N)) + 1j * rng.standard_normal((dims.M, dims.N)))
        V = stacked_system_matrix(sched, g1)
        s = np.linalg.svd(V, compute_uv=False)
        need = (dims.K - 1) * dims.N
        assert s.size >= need and s[need - 1] > 1e-9 * s[0], f"rank deficiency at {dims}"
        worst = min(worst, s[need - 1] / s[0])
    return f"stacked system full rank on the grid; min sigma ratio {worst:.2e}"


def _check_received_bruteforce() -> str:
    rng = substream(2024, 8)
    K, N, M, tau = 3, 4, 2, 6
    dims = SystemDims(K, N, M)
    chan = draw_channels(dims, CorrelationSpec.uniform(0.4, K), PathLossSpec.unit(K), rng)
    pilots = np.where(rng.uniform(size=(K, tau)) < 0.7, 1.0, 0.0) * np.exp(
        1j * rng.uniform(0, 2 * np.pi, (K, tau)))
    refl = np.where(rng.uniform(size=(N, tau)) < 0.7, 1.0, 0.0) * np.exp(
        1j * rng.uniform(0, 2 * np.pi, (N, tau)))
    sched = Schedule(pilots, refl)
    budget = LinkBudget(p=2.0, sigma2=1.0)
    y = simulate_received(chan, sched, budget, noise_on=False)
    ref = np.zeros((M, tau), dtype=complex)
    for i in range(tau):
        for k in range(K):
            v = chan.h[k].copy()
            for n in range(N):
                v = v + refl[n, i] * chan.g[k, n]
            ref[:, i] += np.sqrt(budget.p) * v * pilots[k, i]
    dev = float(np.max(np.abs(y - ref)))
    scale = float(np.max(np.abs(ref)))
    assert dev <= 1e-12 * max(scale, 1.0), f"deviation {dev} vs brute force"
    return f"vectorized model matches brute force to {dev:.2e}"


def _check_campaign_determinism() -> str:
    cfg = replace(
        ScenarioConfig(),
        K=2, N=2, M=2, trials=6, seed=42, schemes=("proposed-lmmse",),
        prior_draws=1000,
    ).validate()
    with tempfile.TemporaryDirectory() as d:
        paths = []
        for threads in (1, 2):
            rows = run_campaign(replace(cfg, threads=threads))
            path = Path(d) / f"t{threads}.csv"
            emit_csv(rows, path)
            paths.append(path.read_bytes())
    assert paths[0] == paths[1], "CSV differs between 1 and 2 workers"
    return "byte-identical CSV with 1 and 2 workers"


CHECKS = (
    ("pilot-gram", _check_pilot_gram),
    ("dft-gram", _check_dft_gram),
    ("phase3-plan-sets", _check_plan_sets),
    ("phase3-recovery-order", _check_recovery_order),
    ("phase3-system-rank", _check_v_rank),
    ("received-signal-bruteforce", _check_received_bruteforce),
    ("campaign-determinism", _check_campaign_determinism),
)


def run_selftest(verbose: bool = True) -> list[tuple[str, bool, str]]:
    """Run every check; returns (name, passed, detail) triples."""
    results = []
    for name, fn in CHECKS:
        try:
            detail = fn()
            ok = True
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            detail = f"{type(exc).__name__}: {exc}"
            ok = False
        results.append((name, ok, detail))
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return results
