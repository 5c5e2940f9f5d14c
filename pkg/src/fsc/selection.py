"""Weight-grid search, model-then-weight procedures and choice of the number of groups."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .criteria import CRITERIA, DIRECTIONS, evaluate_all
from .em import FitConfig, FitResult, fit, kmeans_init
from .errors import DomainError, FitFailed, FSCError, TooFewPoints
from .model import DataSet
from .structures import CovarianceStructure, total_param_count

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightGrid:
    alphas: tuple = tuple(round(0.1 * k, 10) for k in range(11))

    def __post_init__(self):
        a = tuple(float(v) for v in self.alphas)
        if not a:
            raise DomainError("weight grid is empty")
        if any(not 0.0 <= v <= 1.0 for v in a):
            raise DomainError(f"weights must lie in [0, 1], got {a}")
        if any(b <= c for c, b in zip(a, a[1:])):
            raise DomainError("weight grid must be strictly increasing")
        object.__setattr__(self, "alphas", a)

    @classmethod
    def parse(cls, text: str) -> "WeightGrid":
        """``a:b:step`` (inclusive) or a comma-separated list."""
        text = text.strip()
        if ":" in text:
            try:
                lo, hi, step = (float(t) for t in text.split(":"))
            except ValueError:
                raise DomainError(f"grid {text!r} is not of the form a:b:step") from None
            if not step > 0:
                raise DomainError("grid step must be positive")
            n = int(math.floor((hi - lo) / step + 1e-9))
            return cls(tuple(round(lo + k * step, 10) for k in range(n + 1)))
        try:
            return cls(tuple(float(t) for t in text.split(",")))
        except ValueError:
            raise DomainError(f"cannot parse weight grid {text!r}") from None

    def __iter__(self):
        return iter(self.alphas)

    def __len__(self):
        return len(self.alphas)


def alpha_seed(seed: int, alpha: float) -> int:
    """Seed for the fits at weight ``alpha``.

    Derived from the weight's value (not its grid position), so inserting
    or removing grid points leaves every other weight's fits untouched.
    On the default tenth-step grid this equals ``seed + 1000 * index``.
    """
    return int(seed) + int(round(10000 * alpha))


@dataclass(frozen=True)
class FitRecord:
    """One fitted (alpha, G, structure) cell; ``error`` is set when the fit failed."""

    alpha: float
    G: int
    structure: str
    family: str
    criteria: dict
    converged: bool = False
    n_iterations: int = 0
    loglik: float = math.nan
    param_count: int = 0
    error: Optional[str] = None
    fit: Optional[FitResult] = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def model_code(self) -> str:
        return f"{self.structure}/G={self.G}"


@dataclass(frozen=True)
class SelectionReport:
    records: tuple
    per_alpha: tuple
    chosen_alpha: dict
    chosen_model: dict
    procedure: str
    weight_criterion: str = "detW"
    directions: dict = field(default_factory=lambda: dict(DIRECTIONS))

    def chosen_record(self, criterion: Optional[str] = None) -> Optional[FitRecord]:
        crit = criterion or self.weight_criterion
        alpha = self.chosen_alpha.get(crit)
        for r in self.per_alpha:
            if r.alpha == alpha:
                return r
        return None

    def column(self, criterion: str) -> list:
        return [(r.alpha, r.criteria.get(criterion, math.nan)) for r in self.per_alpha]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "G", "structure", "family", "selected", "converged",
                    "n_iterations", "loglik", "param_count", *CRITERIA, "error"])
        winners = {(r.alpha, r.G, r.structure) for r in self.per_alpha}
        for r in self.records:
            w.writerow([
                _fmt(r.alpha), r.G, r.structure, r.family,
                int((r.alpha, r.G, r.structure) in winners), int(r.converged),
                r.n_iterations, _fmt(r.loglik), r.param_count,
                *(_fmt(r.criteria.get(c, math.nan)) for c in CRITERIA),
                r.error or "",
            ])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "procedure": self.procedure,
            "weight_criterion": self.weight_criterion,
            "directions": self.directions,
            "chosen_alpha": self.chosen_alpha,
            "chosen_model": self.chosen_model,
            "per_alpha": [
                {"alpha": r.alpha, "G": r.G, "structure": r.structure,
                 "criteria": {k: _json_num(v) for k, v in r.criteria.items()}}
                for r in self.per_alpha
            ],
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _json_num(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def _better(a: float, b: float, direction: str) -> bool:
    return a > b if direction == "max" else a < b


def pick_extremum(values: Sequence[tuple], direction: str):
    """Key of the extremal finite value in ``(key, value)`` pairs; the first wins ties."""
    best_key, best = None, None
    for key, v in values:
        if v is None or not math.isfinite(v):
            continue
        if best is None or _better(v, best, direction):
            best_key, best = key, v
    return best_key


def directions_for(u_direction: str = "max") -> dict:
    if u_direction not in ("max", "min"):
        raise DomainError("u_direction must be 'max' or 'min'")
    d = dict(DIRECTIONS)
    d["U"] = u_direction
    return d


def choose_alphas(per_alpha: Iterable[FitRecord], directions: dict) -> dict:
    """Chosen weight per criterion from the per-alpha table; ties go to the smallest alpha."""
    rows = sorted((r for r in per_alpha if r.ok), key=lambda r: r.alpha)
    out = {}
    for crit, direction in directions.items():
        a = pick_extremum([(r.alpha, r.criteria.get(crit)) for r in rows], direction)
        if a is not None:
            out[crit] = a
    return out


def _fit_cell(data, G, family, structure, cfg, alpha, truth, scatter_points, ari_points,
              init=None) -> FitRecord:
    s = CovarianceStructure.parse(structure)
    k = total_param_count(s, G, data.p, family)
    try:
        res = fit(data, G, family, s, cfg, init=init)
    except (FitFailed, TooFewPoints) as exc:
        log.info("fit failed at alpha=%s %s G=%d: %s", alpha, s.code, G, exc)
        return FitRecord(alpha, G, s.code, family, {}, param_count=k, error=str(exc))
    crit = evaluate_all(res, data.padded(G) if data.n_groups < G else data, k, truth,
                        scatter_points, ari_points)
    return FitRecord(alpha, G, s.code, family, crit, res.converged, res.n_iterations,
                     res.loglik, k, None, res)


def _shared_init(data, G, cfg):
    d = data.padded(G) if data.n_groups < G else data
    try:
        return kmeans_init(d, G, cfg)
    except FSCError:
        return None


def weight_grid_search(data: DataSet, G: int, family: str = "t", structure="UUUU",
                       grid: WeightGrid | None = None, cfg: FitConfig | None = None,
                       truth=None, scatter_points: str = "all", ari_points: str = "all",
                       u_direction: str = "max", weight_criterion: str = "detW") -> SelectionReport:
    """Fit at every weight of ``grid`` and select a weight per criterion.

    Each weight gets its own seed (``alpha_seed``), so fits are independent
    of the rest of the grid.  Failed fits are recorded and skipped.
    """
    return select_model_then_weight(0, data, [G], [structure], grid, cfg, family=family,
                                    truth=truth, scatter_points=scatter_points,
                                    ari_points=ari_points, u_direction=u_direction,
                                    weight_criterion=weight_criterion)


def select_model_then_weight(procedure: int, data: DataSet, G_range: Iterable[int],
                             structures: Iterable, grid: WeightGrid | None = None,
                             cfg: FitConfig | None = None, family: str = "t", truth=None,
                             scatter_points: str = "all", ari_points: str = "all",
                             u_direction: str = "max",
                             weight_criterion: str = "detW") -> SelectionReport:
    """Choose a model at each weight, then a weight across the per-weight winners.

    Procedure 1 picks (G, structure) by maximum BIC at each weight;
    procedure 2 by minimum det(W).  The weight is then chosen by
    ``weight_criterion`` (det(W) by default).  Procedure 0 is the plain
    single-model grid search.  All structures at one (weight, G) share a
    single k-means initialisation.
    """
    if procedure not in (0, 1, 2):
        raise DomainError(f"unknown procedure {procedure!r}")
    grid = grid or WeightGrid()
    cfg = cfg or FitConfig()
    structures = [CovarianceStructure.parse(s) for s in structures]
    G_range = sorted(set(int(g) for g in G_range))
    if not structures or not G_range:
        raise DomainError("structure set and G range must be non-empty")
    directions = directions_for(u_direction)
    if weight_criterion not in directions:
        raise DomainError(f"unknown criterion {weight_criterion!r}")
    if weight_criterion == "ARI" and truth is None:
        raise DomainError("ARI selection needs the true partition")
    model_crit = {0: "BIC", 1: "BIC", 2: "detW"}[procedure]

    records, per_alpha = [], []
    for alpha in grid:
        acfg = cfg.with_alpha(alpha, alpha_seed(cfg.seed, alpha))
        cells = []
        for G in G_range:
            share = len(structures) > 1 and acfg.n_em_restarts == 1
            init = _shared_init(data, G, acfg) if share else None
            for s in structures:
                cells.append(_fit_cell(data, G, family, s, acfg, alpha, truth,
                                       scatter_points, ari_points, init))
        records.extend(cells)
        ok = [c for c in cells if c.ok]
        i = pick_extremum([(i, c.criteria[model_crit]) for i, c in enumerate(ok)],
                          directions[model_crit])
        if i is not None:
            per_alpha.append(ok[i])
    chosen = choose_alphas(per_alpha, directions)
    by_alpha = {r.alpha: r for r in per_alpha}
    chosen_model = {c: by_alpha[a].model_code for c, a in chosen.items()}
    return SelectionReport(tuple(records), tuple(per_alpha), chosen, chosen_model,
                           str(procedure), weight_criterion, directions)


@dataclass(frozen=True)
class GroupChoice:
    H: int
    criterion: str
    records: tuple

    @property
    def fit(self) -> Optional[FitResult]:
        for r in self.records:
            if r.G == self.H:
                return r.fit
        return None


def select_num_groups(data: DataSet, G_labelled: int, H_range: Iterable[int], family: str = "t",
                      structure="UUUU", cfg: FitConfig | None = None,
                      criterion: str = "BIC") -> GroupChoice:
    """Fit with H >= G_labelled components (labels zero-padded) and keep the best H."""
    if criterion not in ("BIC", "ICL"):
        raise DomainError("number of groups is chosen by BIC or ICL")
    H_range = sorted(set(int(h) for h in H_range))
    if not H_range or H_range[0] < G_labelled:
        raise DomainError(f"every H must be at least {G_labelled}")
    cfg = cfg or FitConfig()
    records = [
        _fit_cell(data.padded(H), H, family, structure, cfg, cfg.weight.alpha, None, "all", "all")
        for H in H_range
    ]
    ok = [r for r in records if r.ok]
    H = pick_extremum([(r.G, r.criteria[criterion]) for r in ok], "max")
    if H is None:
        raise FitFailed([r.error for r in records])
    return GroupChoice(H, criterion, tuple(records))


def report_from_json(obj: dict) -> dict:
    """Re-run the weight choice on a stored per-alpha table (used to audit reports)."""
    rows = [FitRecord(r["alpha"], r["G"], r["structure"], "", {
        k: (math.nan if v is None else v) for k, v in r["criteria"].items()}) for r in obj["per_alpha"]]
    return choose_alphas(rows, obj["directions"])


def summary_line(report: SelectionReport) -> str:
    rec = report.chosen_record()
    if rec is None:
        return "no successful fits"
    return (f"chosen alpha={rec.alpha:g} by {report.weight_criterion} "
            f"(model {rec.model_code}, {report.weight_criterion}={rec.criteria[report.weight_criterion]:.6g})")


def dumps(report: SelectionReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
