"""Selection strategies, evaluation reports, selection transfer and the budget sweep."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .budget import BudgetConfig, BudgetHead, adaptive_infer, train_budget
from .classifier import Classifier, is_correct
from .core import ConfigError, CostModel, DomainError, OCSError, SyntheticVideo, clip_cost, rng_stream
from .policy import ClipSelection, PolicyParams, policy_forward, top_n
from .skim import FeatureExtractorSpec, extract

STRATEGY_KINDS = ("learned", "learned_adaptive", "random", "uniform", "frameexit_order", "fixed_length")


class MissingModelError(OCSError, LookupError):
    code = "E_MISSING_MODEL"

    def __init__(self, model: str, strategy: str):
        self.field = model
        super().__init__(f"strategy {strategy!r} needs a {model} model")


@dataclass(frozen=True)
class Strategy:
    kind: str
    seed: int = 0
    window: str = "random"  # fixed_length only: "random" or "center"
    name: str | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError("kind", f"unknown strategy {self.kind!r}")
        if self.window not in ("random", "center"):
            raise ConfigError("window", "must be 'random' or 'center'")

    @property
    def label(self) -> str:
        return self.name or self.kind


@dataclass
class Models:
    classifier: Classifier | None = None
    policy: PolicyParams | None = None
    budget: BudgetHead | None = None
    extractor: FeatureExtractorSpec | None = None


# ---------------------------------------------------------------------------
# Fixed orders

def uniform_indices(T: int, N: int) -> list[int]:
    """Evenly spaced frames round(t (T-1)/(N-1)); collisions shift right."""
    if N == 1:
        return [(T - 1) // 2]
    out: list[int] = []
    for t in range(N):
        i = math.floor(t * (T - 1) / (N - 1) + 0.5)
        if out and i <= out[-1]:
            i = out[-1] + 1
        out.append(i)
    # Shifting right can run off the end when N is close to T.
    for j in range(N - 1, -1, -1):
        cap = T - (N - j)
        if out[j] > cap:
            out[j] = cap
    return out


def frameexit_order(T: int) -> list[int]:
    """Sparse-to-dense order: middle frame, both ends, then midpoints breadth-first."""
    mid = (T - 1) // 2
    order = [mid]
    for e in (0, T - 1):
        if e not in order:
            order.append(e)
    seen = set(order)
    queue = [(0, mid), (mid, T - 1)]
    while queue:
        nxt = []
        for lo, hi in queue:
            if hi - lo < 2:
                continue
            m = (lo + hi) // 2
            if m not in seen:
                seen.add(m)
                order.append(m)
            nxt.extend([(lo, m), (m, hi)])
        queue = nxt
    order.extend(i for i in range(T) if i not in seen)
    return order


def _check_n(N, T):
    if not 1 <= N <= T:
        raise DomainError(f"need 1 <= N <= T, got N={N}, T={T}")


def select(
    strategy: Strategy,
    video: SyntheticVideo,
    N: int,
    models: Models | None = None,
    rng: np.random.Generator | None = None,
) -> ClipSelection:
    models = models or Models()
    T = video.T
    kind = strategy.kind
    if kind == "learned_adaptive":
        if models.policy is None:
            raise MissingModelError("policy", strategy.label)
        if models.budget is None:
            raise MissingModelError("budget", strategy.label)
        if models.classifier is None:
            raise MissingModelError("classifier", strategy.label)
        return adaptive_infer(video, models.budget, models.policy, models.classifier, models.extractor)[1]
    _check_n(N, T)
    if kind == "uniform":
        return ClipSelection(tuple(uniform_indices(T, N)))
    if kind == "frameexit_order":
        return ClipSelection(tuple(frameexit_order(T)[:N]))
    if kind == "random":
        rng = rng if rng is not None else rng_stream(strategy.seed, "select-random", video.id, N)
        return ClipSelection(tuple(int(i) for i in rng.choice(T, N, replace=False)))
    if kind == "fixed_length":
        if strategy.window == "center":
            start = (T - N) // 2
        else:
            rng = rng if rng is not None else rng_stream(strategy.seed, "select-window", video.id, N)
            start = int(rng.integers(0, T - N + 1))
        return ClipSelection(tuple(range(start, start + N)))
    if kind == "learned":
        if models.policy is None:
            raise MissingModelError("policy", strategy.label)
        return top_n(policy_forward(models.policy, extract(video, models.extractor)), N)
    raise ConfigError("kind", f"unknown strategy {kind!r}")


# ---------------------------------------------------------------------------
# Reports

@dataclass
class EvalRow:
    strategy: str
    N: int | None
    num_videos: int
    top1_accuracy: float
    mean_frames: float
    mean_cost: float
    salient_recall: float
    selection_histogram: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["selection_histogram"] = {str(k): v for k, v in sorted(self.selection_histogram.items())}
        return d


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    selections: dict[tuple[str, int | None], dict[int, ClipSelection]] = field(default_factory=dict)

    def row(self, strategy: str, N: int | None = None) -> EvalRow:
        for r in self.rows:
            if r.strategy == strategy and (N is None or r.N == N):
                return r
        raise KeyError((strategy, N))

    def to_csv(self) -> str:
        out = ["strategy,N,accuracy,mean_frames,mean_cost,salient_recall"]
        for r in self.rows:
            n = "adaptive" if r.N is None else str(r.N)
            out.append(f"{r.strategy},{n},{r.top1_accuracy:.17g},{r.mean_frames:.17g},"
                       f"{r.mean_cost:.17g},{r.salient_recall:.17g}")
        return "\n".join(out) + "\n"

    def to_json(self, extra: dict | None = None) -> str:
        body = dict(extra or {})
        body["rows"] = [r.as_dict() for r in self.rows]
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def selections_text(selections: dict[int, ClipSelection]) -> str:
    return "".join(
        f"{vid}:{','.join(str(i) for i in sorted(sel.indices))}\n" for vid, sel in sorted(selections.items())
    )


def parse_selections(text: str) -> dict[int, ClipSelection]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vid, _, rest = line.partition(":")
        out[int(vid)] = ClipSelection(tuple(int(i) for i in rest.split(",")))
    return out


def score_selections(
    dataset: list[SyntheticVideo],
    selections: dict[int, ClipSelection],
    classifier: Classifier,
    strategy: str,
    N: int | None,
    cost_model: CostModel | None = None,
    extractor: FeatureExtractorSpec | None = None,
) -> EvalRow:
    cost_model = cost_model or CostModel()
    # Sort by id so floating-point reductions do not depend on dataset order.
    videos = sorted(dataset, key=lambda v: v.id)
    if not videos:
        return EvalRow(strategy, N, 0, 0.0, 0.0, 0.0, 0.0, {})
    correct, frames, costs, recalls = [], [], [], []
    hist: Counter = Counter()
    for v in videos:
        sel = selections[v.id]
        probs = classifier.predict(v, extract(v, extractor), sel.indices)
        correct.append(is_correct(probs, v.label))
        frames.append(sel.N)
        costs.append(clip_cost(v.T, sel.N, cost_model))
        hits = len(sel.as_set & v.salient_set)
        recalls.append(hits / len(v.salient_set))
        hist[hits] += 1
    n = len(videos)
    return EvalRow(
        strategy, N, n,
        sum(correct) / n,
        math.fsum(frames) / n,
        math.fsum(costs) / n,
        math.fsum(recalls) / n,
        dict(hist),
    )


def evaluate(
    dataset: list[SyntheticVideo],
    strategies: list[Strategy],
    N_list: list[int],
    classifier: Classifier,
    models: Models | None = None,
    cost_model: CostModel | None = None,
    seed: int = 0,
) -> EvalReport:
    """Accuracy, frames, cost and salient recall for every strategy x N.

    ``learned_adaptive`` chooses its own N and yields one row with N=None.
    """
    models = models or Models()
    report = EvalReport()
    for strat in strategies:
        sizes = [None] if strat.kind == "learned_adaptive" else list(N_list)
        for N in sizes:
            sels = {}
            for v in dataset:
                rng = None
                if strat.kind in ("random", "fixed_length"):
                    rng = rng_stream(seed, f"select-{strat.label}", v.id, N or 0)
                sels[v.id] = select(strat, v, N or 0, models, rng)
            report.rows.append(
                score_selections(dataset, sels, classifier, strat.label, N, cost_model, models.extractor)
            )
            report.selections[(strat.label, N)] = sels
    return report


def transfer_selections(
    dataset: list[SyntheticVideo],
    selections: dict[int, ClipSelection],
    classifier_b: Classifier,
    cost_model: CostModel | None = None,
    extractor: FeatureExtractorSpec | None = None,
) -> EvalReport:
    """Score another classifier on previously chosen frames, alongside uniform frames of the same size."""
    missing = sorted(v.id for v in dataset if v.id not in selections)
    if missing:
        raise DomainError(f"selections missing for video ids {missing}")
    report = EvalReport()
    if not dataset:
        return report
    report.rows.append(score_selections(dataset, selections, classifier_b, "transfer", None, cost_model, extractor))
    uni = {v.id: ClipSelection(tuple(uniform_indices(v.T, selections[v.id].N))) for v in dataset}
    report.rows.append(score_selections(dataset, uni, classifier_b, "uniform", None, cost_model, extractor))
    report.selections[("transfer", None)] = dict(selections)
    report.selections[("uniform", None)] = uni
    return report


@dataclass
class SweepCell:
    epsilon: float
    alpha: float
    mean_frames: float | None
    accuracy: float | None
    mean_cost: float | None = None
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.error is None


def sweep_budget(
    train_set: list[SyntheticVideo],
    eval_set: list[SyntheticVideo],
    models: Models,
    epsilons: list[float],
    alphas: list[float],
    base_config: BudgetConfig | None = None,
    cost_model: CostModel | None = None,
) -> list[SweepCell]:
    """Train one budget head per (epsilon, alpha) and evaluate adaptive selection."""
    if models.policy is None:
        raise MissingModelError("policy", "learned_adaptive")
    if models.classifier is None:
        raise MissingModelError("classifier", "learned_adaptive")
    base = base_config or BudgetConfig()
    cells = []
    for eps in epsilons:
        for alpha in alphas:
            cfg = BudgetConfig(**{**base.__dict__, "epsilon": eps, "alpha": alpha})
            try:
                head = train_budget(train_set, models.classifier, cfg, models.extractor).head
                m = Models(models.classifier, models.policy, head, models.extractor)
                row = evaluate(eval_set, [Strategy("learned_adaptive")], [], models.classifier, m, cost_model).rows[0]
                cells.append(SweepCell(eps, alpha, row.mean_frames, row.top1_accuracy, row.mean_cost))
            except OCSError as exc:
                cells.append(SweepCell(eps, alpha, None, None, None, str(exc)))
    return cells


def sweep_csv(cells: list[SweepCell]) -> str:
    out = ["epsilon,alpha,mean_frames,accuracy,mean_cost,valid"]
    for c in cells:
        f = lambda x: "" if x is None else f"{x:.17g}"
        out.append(f"{c.epsilon:.17g},{c.alpha:.17g},{f(c.mean_frames)},{f(c.accuracy)},{f(c.mean_cost)},{int(c.valid)}")
    return "\n".join(out) + "\n"
