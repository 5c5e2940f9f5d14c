"""Synthetic scenarios, labelled/unlabelled splits and the replication harness.

Every replication draws its own dataset from a seed derived as
``(master_seed, replication)``; splits and fits derive theirs from the
replication seed, the labelled percentage and the weight.  Results are
therefore identical whatever the order (or process) in which
replications run.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .criteria import evaluate_all
from .em import FitConfig, fit
from .errors import DomainError, FitFailed, MissingClassWarning, TooFewPoints
from .model import DataSet
from .numerics import Gaussian, StudentT, make_rng, sample
from .selection import WeightGrid, alpha_seed, pick_extremum
from .structures import total_param_count

# Fixed scenario constants.
SIGMA_POS = np.array([[1.0, 0.7], [0.7, 1.0]])
SIGMA_NEG = np.array([[1.0, -0.7], [-0.7, 1.0]])
IDENTITY2 = np.eye(2)

CONSTANTS = {
    "two-group-t": {
        "n_per_group": 100,
        "dof": (3.0, 70.0),
        "scales": (SIGMA_POS, IDENTITY2),
    },
    "three-group-t": {
        "n_per_group": 100,
        "delta": 2.0,
        "mu3": (2.0, 2.0),
        "dof": (3.0, 70.0, 10.0),
        "scales": (SIGMA_POS, IDENTITY2, SIGMA_NEG),
    },
    "two-group-gaussian": {
        "n_per_group": 150,
        "covs": (SIGMA_POS, IDENTITY2),
    },
    # two long parallel clusters whose few labelled points sit in the overlap
    "cluster-case-1": {
        "n_per_group": 100,
        "centres": ((0.0, 0.0), (5.0, 0.0)),
        "cov": np.diag([1.0, 6.25]),
        "labelled_frac": 0.10,
    },
    # two round, well-separated clusters labelled everywhere except their rims
    "cluster-case-2": {
        "n_per_group": 100,
        "centres": ((0.0, 0.0), (10.0, 0.0)),
        "cov": np.eye(2),
        "labelled_frac": 0.90,
    },
}
SCENARIOS = tuple(CONSTANTS)


@dataclass(frozen=True)
class Scenario:
    kind: str
    delta: float = 3.0
    n_per_group: Optional[int] = None
    x: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    labels: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "file":
            if self.x is None or self.labels is None:
                raise DomainError("a file scenario needs data and labels")
            return
        if self.kind not in CONSTANTS:
            raise DomainError(f"unknown scenario {self.kind!r}; choose from {SCENARIOS}")
        if self.n_per_group is not None and self.n_per_group < 1:
            raise DomainError("n_per_group must be positive")

    @property
    def size(self) -> int:
        if self.kind == "file":
            return len(self.labels)
        return self.n_per_group or CONSTANTS[self.kind]["n_per_group"]

    @property
    def n_groups(self) -> int:
        if self.kind == "file":
            return int(np.unique(self.labels).size)
        return 3 if self.kind == "three-group-t" else 2

    def describe(self) -> dict:
        out = {"kind": self.kind, "n_per_group": self.size if self.kind != "file" else None}
        if self.kind in ("two-group-t", "two-group-gaussian"):
            out["delta"] = self.delta
        return out


@dataclass(frozen=True)
class TruthData:
    """Generated rows with their true 0-based groups.

    ``labelled_mask`` is set by scenarios that fix which points are labelled.
    """

    x: np.ndarray
    truth: np.ndarray
    labelled_mask: Optional[np.ndarray] = None

    @property
    def n_groups(self) -> int:
        return int(self.truth.max()) + 1 if self.truth.size else 0


def _cluster_case(kind, m, rng):
    c = CONSTANTS[kind]
    blocks = [sample(Gaussian(np.array(mu), c["cov"]), m, rng) for mu in c["centres"]]
    x = np.vstack(blocks)
    truth = np.repeat(np.arange(2), m)
    n_lab = int(math.floor(c["labelled_frac"] * 2 * m))
    mask = np.zeros(2 * m, dtype=bool)
    if kind == "cluster-case-1":
        # labelled points are those nearest the gap between the clusters; the
        # left cluster contributes its upper half, the right one its lower half
        mid = 0.5 * (c["centres"][0][0] + c["centres"][1][0])
        per = n_lab // 2
        for g, upper in ((0, True), (1, False)):
            idx = np.flatnonzero((truth == g) & ((x[:, 1] > 0) == upper))
            order = idx[np.argsort(np.abs(x[idx, 0] - mid), kind="stable")]
            mask[order[:per]] = True
    else:
        d = np.empty(2 * m)
        for g, mu in enumerate(c["centres"]):
            rows = truth == g
            d[rows] = np.linalg.norm(x[rows] - np.array(mu), axis=1)
        order = np.argsort(d, kind="stable")
        mask[order[:n_lab]] = True
    return TruthData(x, truth, mask)


def generate(scenario: Scenario, rng: np.random.Generator) -> TruthData:
    """Draw one dataset; rows are ordered group by group."""
    kind = scenario.kind
    if kind == "file":
        labels = np.asarray(scenario.labels)
        _, truth = np.unique(labels, return_inverse=True)
        return TruthData(np.asarray(scenario.x, dtype=float), truth)
    m = scenario.size
    c = CONSTANTS[kind]
    if kind.startswith("cluster-case"):
        return _cluster_case(kind, m, rng)
    if kind == "two-group-gaussian":
        locs = (np.zeros(2), np.array([0.0, scenario.delta]))
        dists = [Gaussian(mu, S) for mu, S in zip(locs, c["covs"])]
    else:
        delta = c.get("delta", scenario.delta)
        locs = [np.zeros(2), np.array([0.0, delta])]
        if kind == "three-group-t":
            locs.append(np.array(c["mu3"]))
        dists = [StudentT(mu, S, nu) for mu, S, nu in zip(locs, c["scales"], c["dof"])]
    x = np.vstack([sample(d, m, rng) for d in dists])
    return TruthData(x, np.repeat(np.arange(len(dists)), m))


@dataclass(frozen=True)
class Split:
    data: DataSet
    truth: np.ndarray
    order: np.ndarray
    missing_classes: tuple = ()


def label_split(td: TruthData, p: float, rng: np.random.Generator,
                n_groups: Optional[int] = None) -> Split:
    """Label a uniformly random floor(p N / 100) subset (or the scenario's fixed subset).

    Labelled rows come first in the returned ``DataSet``; ``truth`` and
    ``order`` follow the same row order.  A class absent from the labelled
    block triggers ``MissingClassWarning``.
    """
    if not 0 <= p <= 100:
        raise DomainError(f"labelled percentage must lie in [0, 100], got {p}")
    N = td.truth.size
    G = n_groups or td.n_groups
    if td.labelled_mask is not None:
        lab = np.flatnonzero(td.labelled_mask)
    else:
        n1 = int(math.floor(p * N / 100.0 + 1e-9))
        lab = np.sort(rng.permutation(N)[:n1])
    unl = np.setdiff1d(np.arange(N), lab)
    order = np.concatenate([lab, unl])
    labels = np.full(N, -1)
    labels[: lab.size] = td.truth[lab]
    missing = tuple(int(g) for g in range(G) if lab.size and not np.any(td.truth[lab] == g))
    if missing:
        warnings.warn(f"labelled block has no points from classes {missing}",
                      MissingClassWarning, stacklevel=2)
    data = DataSet.from_labels(td.x[order], labels, n_groups=G)
    return Split(data, td.truth[order], order, missing)


# --- replication harness --------------------------------------------------------------


@dataclass(frozen=True)
class RepRecord:
    replication: int
    p: float
    alpha: float
    seed: int
    ari: float
    converged: bool = False
    n_iterations: int = 0
    criteria: dict = field(default_factory=dict)
    params: Optional[dict] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class Cell:
    mean: float
    sd: float
    count: int
    n_failed: int


@dataclass(frozen=True)
class ExperimentResult:
    scenario: dict
    p_set: tuple
    grid: tuple
    replications: int
    records: tuple
    summary: dict
    chosen_alpha: dict

    def cell(self, p, alpha) -> Cell:
        return self.summary[(float(p), float(alpha))]

    def aris(self, p, alpha) -> list:
        return [r.ari for r in self.records
                if r.p == float(p) and r.alpha == float(alpha) and r.error is None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        crit = ["BIC", "ICL", "E", "A", "U", "trW", "detW"]
        w.writerow(["replication", "p", "alpha", "seed", "ari", "converged", "n_iterations",
                    *crit, "error"])
        for r in self.records:
            w.writerow([r.replication, _num(r.p), _num(r.alpha), r.seed, _num(r.ari),
                        int(r.converged), r.n_iterations,
                        *(_num(r.criteria.get(c, math.nan)) for c in crit), r.error or ""])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "p": list(self.p_set),
            "grid": list(self.grid),
            "replications": self.replications,
            "summary": [
                {"p": p, "alpha": a, "mean_ari": _jnum(c.mean), "sd_ari": _jnum(c.sd),
                 "count": c.count, "failed": c.n_failed}
                for (p, a), c in sorted(self.summary.items())
            ],
            "chosen_alpha": {_num(p): a for p, a in self.chosen_alpha.items()},
        }


def _num(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(v)


def _jnum(v):
    return None if not math.isfinite(v) else v


def replication_seed(master: int, replication: int) -> int:
    return int(np.random.SeedSequence((int(master), int(replication))).generate_state(1)[0])


def _split_seed(rep_seed: int, p: float) -> int:
    return int(np.random.SeedSequence((rep_seed, int(round(p * 1000)))).generate_state(1)[0])


def _params(model) -> dict:
    return {
        "weights": model.weights.tolist(),
        "locations": model.locations.tolist(),
        "scales": model.scales.tolist(),
        "dof": None if model.dof is None else model.dof.tolist(),
    }


@dataclass(frozen=True)
class _Task:
    scenario: Scenario
    replication: int
    master_seed: int
    p_set: tuple
    grid: tuple
    family: str
    structure: str
    cfg: FitConfig
    ari_points: str
    keep_params: bool


def _run_replication(task: _Task) -> list:
    rep_seed = replication_seed(task.master_seed, task.replication)
    td = generate(task.scenario, make_rng(rep_seed))
    G = task.scenario.n_groups
    k = total_param_count(task.structure, G, td.x.shape[1], task.family)
    out = []
    for p in task.p_set:
        s_seed = _split_seed(rep_seed, p)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            split = label_split(td, p, make_rng(s_seed), n_groups=G)
        for alpha in task.grid:
            seed = alpha_seed(s_seed % (2**31), alpha)
            cfg = task.cfg.with_alpha(alpha, seed)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = fit(split.data, G, task.family, task.structure, cfg)
            except (FitFailed, TooFewPoints) as exc:
                out.append(RepRecord(task.replication, float(p), float(alpha), seed, math.nan,
                                     error=str(exc)))
                continue
            crit = evaluate_all(res, split.data, k, split.truth, ari_points=task.ari_points)
            ari = crit.pop("ARI")
            out.append(RepRecord(
                task.replication, float(p), float(alpha), seed, ari, res.converged,
                res.n_iterations, crit, _params(res.model) if task.keep_params else None,
            ))
    return out


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def summarise(records: Sequence[RepRecord], p_set, grid) -> tuple[dict, dict]:
    """Mean and sd of ARI per (p, alpha) in replication order, and the best alpha per p."""
    summary = {}
    for p in p_set:
        for a in grid:
            cell = sorted((r for r in records if r.p == float(p) and r.alpha == float(a)),
                          key=lambda r: r.replication)
            vals = [r.ari for r in cell if r.error is None]
            mean, sd = _mean_sd(vals)
            summary[(float(p), float(a))] = Cell(mean, sd, len(vals), len(cell) - len(vals))
    chosen = {}
    for p in p_set:
        a = pick_extremum([(float(a), summary[(float(p), float(a))].mean) for a in grid], "max")
        if a is not None:
            chosen[float(p)] = a
    return summary, chosen


def run_experiment(scenario: Scenario, p_set: Sequence[float], grid: WeightGrid | None = None,
                   replications: int = 30, family: str = "t", cfg: FitConfig | None = None,
                   structure: str = "UUUU", seed: int = 0, ari_points: str = "all",
                   keep_params: bool = False, workers: int = 1) -> ExperimentResult:
    """Generate, split, fit and score every (replication, p, alpha) cell.

    Failed fits stay in the record list with ``ari = nan`` and are left out
    of the means; their number is reported per cell.
    """
    if replications < 2:
        raise DomainError("at least two replications are needed for a standard deviation")
    grid = grid or WeightGrid()
    cfg = cfg or FitConfig()
    p_set = tuple(float(p) for p in p_set)
    tasks = [
        _Task(scenario, r, int(seed), p_set, tuple(grid), family, structure, cfg, ari_points,
              keep_params)
        for r in range(replications)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replication, tasks))
    else:
        chunks = [_run_replication(t) for t in tasks]
    records = tuple(r for chunk in chunks for r in chunk)
    summary, chosen = summarise(records, p_set, grid)
    return ExperimentResult(scenario.describe(), p_set, tuple(grid), replications, records,
                            summary, chosen)
