"""On-demand verification suites: exact vs brute force, gradients, estimators, samplers.

Each suite returns a :class:`CheckResult`; ``run_all`` runs them in a fixed
order. Sizes default to something that finishes in seconds; the test suite
runs the full-size versions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .budget import BudgetConfig, build_budget_label, correctness_ratios
from .classifier import CoverageOracle, is_correct, softmax
from .core import DatasetSpec, generate_dataset, rng_stream
from .gradcheck import central_difference, max_relative_error
from .policy import PolicyDistribution, PolicyParams, sample_clip
from .reinforce import ConfidenceTable, Stage2Config, exact_expected_update, single_update
from .skim import extract
from .subsetprob import exact_subset_prob, log_prob_grad, mc_subset_prob


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def brute_force_subset_prob(p, subset) -> float:
    """Plain-loop permutation sum, kept separate from the vectorised path."""
    total = 0.0
    for order in itertools.permutations(subset):
        q, used = 1.0, 0.0
        for i in order:
            q *= p[i] / (1.0 - used)
            used += p[i]
        total += q
    return total


def random_simplex(rng, T, scale=1.0):
    logits = scale * rng.standard_normal(T)
    return softmax(logits), logits


def check_exact_subset(T_values=range(3, 9), max_N=5, draws=20, seed=0) -> CheckResult:
    rng = rng_stream(seed, "check-exact")
    worst_sum, worst_pair = 0.0, 0.0
    for T in T_values:
        for N in range(1, min(max_N, T) + 1):
            for _ in range(draws):
                p, _ = random_simplex(rng, T)
                probs = []
                for s in itertools.combinations(range(T), N):
                    pr = exact_subset_prob(p, s).prob
                    probs.append(pr)
                    worst_pair = max(worst_pair, abs(pr - brute_force_subset_prob(p, s)))
                worst_sum = max(worst_sum, abs(math.fsum(probs) - 1.0))
    ok = worst_sum <= 1e-9 and worst_pair <= 1e-12
    return CheckResult("exact_subset_prob", ok, f"max |sum-1|={worst_sum:.2e}, max |exact-brute|={worst_pair:.2e}")


def check_uniform_symmetry(T_values=range(2, 9)) -> CheckResult:
    worst = 0.0
    for T in T_values:
        p = np.full(T, 1.0 / T)
        for N in range(1, T + 1):
            target = 1.0 / math.comb(T, N)
            for s in itertools.combinations(range(T), N):
                worst = max(worst, abs(exact_subset_prob(p, s).prob - target))
    return CheckResult("uniform_symmetry", worst <= 1e-12, f"max deviation {worst:.2e}")


def check_gradients(instances=100, seed=0) -> CheckResult:
    rng = rng_stream(seed, "check-grad")
    worst = 0.0
    for _ in range(instances):
        T = int(rng.integers(2, 9))
        N = int(rng.integers(1, min(3, T) + 1))
        logits = rng.standard_normal(T)
        subset = tuple(int(i) for i in rng.choice(T, N, replace=False))
        analytic = log_prob_grad(softmax(logits), logits, subset).grad_logits
        numeric = central_difference(lambda lg: exact_subset_prob(softmax(lg), subset).log_prob, logits)
        worst = max(worst, max_relative_error(analytic, numeric))
    return CheckResult("log_prob_grad", worst <= 1e-5, f"max relative error {worst:.2e} over {instances}")


def check_mc_estimator(T=8, N=3, n_p=10, M=200, runs=500, seed=0) -> CheckResult:
    rng = rng_stream(seed, "check-mc")
    worst_z = 0.0
    for k in range(n_p):
        p, _ = random_simplex(rng, T)
        subset = tuple(int(i) for i in rng.choice(T, N, replace=False))
        exact = exact_subset_prob(p, subset).prob
        est = np.array([mc_subset_prob(p, subset, M, rng_stream(seed, "mc-run", k, r), exhaust=False).prob for r in range(runs)])
        se = est.std(ddof=1) / math.sqrt(runs)
        worst_z = max(worst_z, abs(est.mean() - exact) / se if se > 0 else 0.0)
    slope = mc_variance_slope(T, N, seed=seed)
    ok = worst_z <= 4.0 and -1.2 <= slope <= -0.8
    return CheckResult("mc_subset_prob", ok, f"max |z|={worst_z:.2f}, log-var slope={slope:.3f}")


def mc_variance_slope(T=8, N=3, Ms=(10, 100, 1000), runs=300, seed=0) -> float:
    rng = rng_stream(seed, "mc-slope")
    p, _ = random_simplex(rng, T)
    subset = tuple(int(i) for i in rng.choice(T, N, replace=False))
    log_var = []
    for M in Ms:
        est = [mc_subset_prob(p, subset, M, rng_stream(seed, "mc-slope-run", M, r), exhaust=False).prob for r in range(runs)]
        log_var.append(math.log(np.var(est, ddof=1)))
    return float(np.polyfit(np.log(Ms), log_var, 1)[0])


def check_sampler(T=6, N=2, n_p=5, draws=100_000, seed=0) -> CheckResult:
    rng = rng_stream(seed, "check-sampler")
    worst_p = 1.0
    subsets = list(itertools.combinations(range(T), N))
    for k in range(n_p):
        p, logits = random_simplex(rng, T)
        dist = PolicyDistribution(p, logits)
        draw_rng = rng_stream(seed, "sampler-draws", k)
        counts = dict.fromkeys(subsets, 0)
        for _ in range(draws):
            counts[tuple(sorted(sample_clip(dist, N, draw_rng).indices))] += 1
        expected = np.array([exact_subset_prob(p, s).prob for s in subsets]) * draws
        observed = np.array([counts[s] for s in subsets])
        worst_p = min(worst_p, float(stats.chisquare(observed, expected).pvalue))
    return CheckResult("sample_clip_chi2", worst_p > 1e-3, f"min p-value {worst_p:.3g}")


def check_reinforce_unbiased(draws=100_000, seed=0, shift=0.3) -> CheckResult:
    spec = DatasetSpec(num_videos=1, T=4, C=4, D=3, salient_count_range=(2, 2), master_seed=seed)
    video = generate_dataset(spec)[0]
    feats = extract(video)
    oracle = CoverageOracle(spec.C)
    params = PolicyParams.random(spec.D, rng_stream(seed, "rf-params"), scale=0.3)
    cfg = Stage2Config(N=2)
    table = ConfidenceTable(video, feats, oracle)
    exact = exact_expected_update(video, feats, params, table, 2)
    shifted = exact_expected_update(video, feats, params, lambda s: table(s) + shift, 2)
    samples = np.array([single_update(video, feats, table, params, cfg, seed, i)[1] for i in range(draws)])
    se = samples.std(axis=0, ddof=1) / math.sqrt(draws)
    z = np.abs(samples.mean(axis=0) - exact) / np.maximum(se, 1e-300)
    within = np.all((np.abs(samples.mean(axis=0) - exact) <= 4 * se + 1e-12))
    shift_err = float(np.max(np.abs(shifted - exact)))
    ok = bool(within) and shift_err <= 1e-12
    finite_z = z[np.isfinite(z) & (se > 0)]
    return CheckResult(
        "reinforce_unbiased", ok,
        f"max |z|={float(finite_z.max()) if finite_z.size else 0.0:.2f}, shift invariance err={shift_err:.1e}",
    )


def check_budget_labels(seed=0) -> CheckResult:
    lab = build_budget_label([0.1, 0.4, 0.7, 0.8, 0.95], BudgetConfig(epsilon=0.6, alpha=2.0))
    worked = lab.k == 3 and np.array_equal(lab.y_B, [0, 0, 1, 0.5, 0.25])
    spec = DatasetSpec(num_videos=6, T=6, C=4, D=4, salient_count_range=(1, 3), master_seed=seed)
    oracle = CoverageOracle(spec.C)
    exact_ok = True
    for v in generate_dataset(spec):
        r, _ = correctness_ratios(v, oracle, BudgetConfig())
        for m in range(1, v.T + 1):
            combos = list(itertools.combinations(range(v.T), m))
            brute = sum(is_correct(oracle.predict(v, None, c), v.label) for c in combos) / len(combos)
            exact_ok &= r[m - 1] == brute
    return CheckResult("budget_labels", bool(worked and exact_ok), f"worked example={worked}, exact ratios={exact_ok}")


SUITES = {
    "exact_subset_prob": lambda quick: check_exact_subset(draws=3 if quick else 20),
    "uniform_symmetry": lambda quick: check_uniform_symmetry(),
    "log_prob_grad": lambda quick: check_gradients(instances=30 if quick else 100),
    "mc_subset_prob": lambda quick: check_mc_estimator(n_p=2 if quick else 10, runs=200 if quick else 500),
    "sample_clip_chi2": lambda quick: check_sampler(n_p=1 if quick else 5, draws=20_000 if quick else 100_000),
    "reinforce_unbiased": lambda quick: check_reinforce_unbiased(draws=5_000 if quick else 100_000),
    "budget_labels": lambda quick: check_budget_labels(),
}


def run_all(quick: bool = True, names=None) -> list[CheckResult]:
    return [SUITES[n](quick) for n in (names or SUITES)]
