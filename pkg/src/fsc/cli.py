"""``fsc`` command line: fit, select, simulate and ari.

Exit codes: 0 success, 1 usage or I/O problem, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .criteria import CRITERIA, ari, evaluate_all
from .em import FitConfig, fit
from .errors import FitFailed, FSCError, TooFewPoints
from .model import DataSet, WeightConfig
from .numerics import RootBracket, make_rng
from .plots import box_plot, line_plot
from .selection import WeightGrid, select_model_then_weight
from .simulation import SCENARIOS, Scenario, TruthData, label_split, run_experiment
from .structures import IMPLEMENTED, CovarianceStructure, total_param_count

log = logging.getLogger("fsc")

MODEL_SCHEMA = "fsc-model/1"
MISSING = ("", "NA")


class UsageError(Exception):
    """Bad flags or unreadable input; maps to exit code 1."""


# --- input ---------------------------------------------------------------------------


@dataclass
class Table:
    x: np.ndarray
    labels: np.ndarray        # 0-based class index, -1 where unlabelled
    classes: list             # class names in index order
    feature_names: list
    path: str


def read_table(path: str, label_col: str) -> Table:
    """Read a CSV with a header row; ``label_col`` holds class names, empty or NA if unknown."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}:1: file is empty") from None
        except csv.Error as exc:
            raise UsageError(f"{path}:1: {exc}") from None
        header = [h.strip() for h in header]
        if label_col not in header:
            raise UsageError(f"{path}:1: label column {label_col!r} not found in header {header}")
        li = header.index(label_col)
        feats = [h for i, h in enumerate(header) if i != li]
        if not feats:
            raise UsageError(f"{path}:1: no feature columns")
        rows, raw_labels = [], []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise UsageError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
                vals = []
                for i, cell in enumerate(row):
                    if i == li:
                        continue
                    try:
                        v = float(cell)
                    except ValueError:
                        raise UsageError(
                            f"{path}:{line}: column {header[i]!r} is not numeric ({cell!r})"
                        ) from None
                    if not math.isfinite(v):
                        raise UsageError(f"{path}:{line}: column {header[i]!r} is not finite")
                    vals.append(v)
                rows.append(vals)
                raw_labels.append(row[li].strip())
        except csv.Error as exc:
            raise UsageError(f"{path}:{reader.line_num}: {exc}") from None
    if not rows:
        raise UsageError(f"{path}: no data rows")
    classes = sorted({lab for lab in raw_labels if lab not in MISSING})
    index = {c: k for k, c in enumerate(classes)}
    labels = np.array([index.get(lab, -1) for lab in raw_labels])
    return Table(np.array(rows), labels, classes, feats, path)


def read_partition(path: str) -> list:
    """One label per row; the first column of each row is used and a non-numeric header skipped."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0].strip()]
    except OSError as exc:
        raise UsageError(f"{path}: cannot open ({exc.strerror})") from None
    if not rows:
        raise UsageError(f"{path}: no partition entries")
    values = [r[0].strip() for r in rows]
    try:
        float(values[0])
    except ValueError:
        values = values[1:]
    return values


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --- output ------------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"{out}: cannot create output directory ({exc.strerror})") from None
    return out


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    _write(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _num(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def model_json(res, classes=None) -> dict:
    m = res.model
    return {
        "version": MODEL_SCHEMA,
        "family": m.family,
        "structure": m.structure,
        "alpha": res.weight.alpha,
        "variant": res.weight.likelihood_variant,
        "n_components": m.n_components,
        "p": m.p,
        "classes": classes,
        "weights": m.weights.tolist(),
        "locations": m.locations.tolist(),
        "scales": [S.reshape(-1).tolist() for S in m.scales],
        "dof": None if m.dof is None else m.dof.tolist(),
        "loglik": res.loglik,
        "converged": res.converged,
        "n_iterations": res.n_iterations,
        "nu_at_boundary": list(res.nu_at_boundary),
    }


def responsibilities_csv(res, order: np.ndarray, n1: int) -> str:
    z = res.responsibilities.all_z
    G = z.shape[1]
    lines = ["row,labelled," + ",".join(f"z{g + 1}" for g in range(G)) + ",map"]
    rows = sorted(range(z.shape[0]), key=lambda i: order[i])
    for i in rows:
        lines.append(",".join([str(int(order[i]) + 1), str(int(i < n1)),
                               *(repr(float(v)) for v in z[i]), str(int(res.map_partition[i]) + 1)]))
    return "\n".join(lines) + "\n"


def criteria_csv(values: dict) -> str:
    lines = ["criterion,value"]
    lines += [f"{k},{_num(values[k])}" for k in CRITERIA if k in values]
    return "\n".join(lines) + "\n"


def write_manifest(out: Path, args, started: str, inputs=(), extra: Optional[dict] = None) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}
    man = {
        "command": args.command,
        "argv": args.argv,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "numpy_version": np.__version__,
        "inputs": {p: sha256(p) for p in inputs},
        "started": started,
        "finished": _now(),
    }
    if extra:
        man.update(extra)
    _write_json(out / "manifest.json", man)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- helpers -----------------------------------------------------------------------------


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FSC_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"FSC_SEED must be an integer, got {env!r}") from None


def _variant(v: str) -> str:
    return "alternative" if v == "alt" else v


def _fit_config(args, alpha: float = 0.5) -> FitConfig:
    return FitConfig(
        n_starts=args.n_starts,
        max_iterations=args.max_iter,
        constrain_nu=args.constrain_nu,
        weight=WeightConfig(alpha, _variant(args.variant)),
        seed=args.seed,
        nu_bracket=RootBracket(2.0, 200.0, 1e-6),
    )


def _structures(text: str) -> list:
    if text.strip().lower() == "all":
        return list(IMPLEMENTED)
    out = []
    for code in text.split(","):
        s = CovarianceStructure.parse(code)
        if not s.implemented:
            raise UsageError(f"structure {s.code} cannot be fitted; choose from {', '.join(IMPLEMENTED)}")
        out.append(s.code)
    return out


def _float_list(text: str, name: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects a comma-separated list of numbers") from None


def _hide_labels(table: Table, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Mark a random ``frac`` of the labelled rows as unlabelled; returns (labels, truth)."""
    labels = table.labels.copy()
    known = np.flatnonzero(labels >= 0)
    k = int(math.floor(frac * known.size + 1e-9))
    hide = rng.choice(known, size=k, replace=False) if k else np.zeros(0, dtype=int)
    labels[hide] = -1
    truth = table.labels if np.all(table.labels >= 0) else None
    return labels, truth


def _ordered(x, labels, G):
    lab = np.flatnonzero(labels >= 0)
    unl = np.flatnonzero(labels < 0)
    order = np.concatenate([lab, unl])
    return DataSet.from_labels(x[order], labels[order], n_groups=G), order


# --- commands ----------------------------------------------------------------------------


def cmd_fit(args) -> int:
    started = _now()
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    table = read_table(args.data, args.label_col)
    labels, truth = table.labels, None
    if args.unlabel_frac is not None:
        if not 0.0 <= args.unlabel_frac <= 1.0:
            raise UsageError("--unlabel-frac must lie in [0, 1]")
        labels, truth = _hide_labels(table, args.unlabel_frac, make_rng(args.seed))
    G = args.groups or len(table.classes)
    if G < 1:
        raise UsageError("cannot infer the number of groups; pass --groups")
    if G < len(table.classes):
        raise UsageError(f"--groups {G} is fewer than the {len(table.classes)} labelled classes")
    structure = _structures(args.structure)
    if len(structure) != 1:
        raise UsageError("fit takes a single --structure")
    data, order = _ordered(table.x, labels, G)
    cfg = _fit_config(args, args.alpha)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fit(data, G, args.family, structure[0], cfg)
    for w in caught:
        log.warning("%s", w.message)
    k = total_param_count(structure[0], G, data.p, args.family)
    crit = evaluate_all(res, data, k, None if truth is None else truth[order],
                        args.scatter_points, args.ari_points)
    out = _out_dir(args)
    classes = table.classes + [f"extra{h + 1}" for h in range(G - len(table.classes))]
    _write_json(out / "model.json", model_json(res, classes))
    _write(out / "responsibilities.csv", responsibilities_csv(res, order, data.n1))
    _write(out / "criteria.csv", criteria_csv(crit))
    write_manifest(out, args, started, [args.data])
    print(f"fitted {args.family} {structure[0]} G={G} alpha={args.alpha:g}: "
          f"loglik={res.loglik:.6f} iterations={res.n_iterations} converged={res.converged}")
    return 0


def cmd_select(args) -> int:
    started = _now()
    table = read_table(args.data, args.label_col)
    grid = WeightGrid.parse(args.grid)
    G_range = sorted(_groups_range(args, len(table.classes)))
    structures = _structures(args.structure)
    cfg = _fit_config(args)
    out = _out_dir(args)
    fully_labelled = bool(np.all(table.labels >= 0))
    if args.p is not None and not fully_labelled:
        raise UsageError("--p needs every row of the input labelled")
    percents = _float_list(args.p, "p") if args.p is not None else [None]
    if len(percents) != 1:
        raise UsageError("select takes a single --p value")
    p = percents[0]
    splits = args.splits if p is not None else 1
    truth_all = table.labels if fully_labelled else None
    csv_rows, summary, ari_boxes = [], [], {}
    for s in range(splits):
        if p is not None:
            td = TruthData(table.x, table.labels)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sp = label_split(td, p, make_rng((args.seed, s)), n_groups=max(G_range))
            data, truth = sp.data, sp.truth
        else:
            data, order = _ordered(table.x, table.labels, max(G_range))
            truth = None if truth_all is None else truth_all[order]
        scfg = replace(cfg, seed=args.seed + 100000 * s)
        rep = select_model_then_weight(
            args.procedure, data, G_range, structures, grid, scfg, family=args.family,
            truth=truth, scatter_points=args.scatter_points, ari_points=args.ari_points,
            u_direction=args.u_direction, weight_criterion=args.criterion,
        )
        for line in rep.to_csv().splitlines()[(0 if s == 0 else 1):]:
            csv_rows.append(("split," if s == 0 and not csv_rows else f"{s},") + line)
        js = rep.to_json()
        js["split"] = s
        summary.append(js)
        if truth is not None:
            for crit, a in rep.chosen_alpha.items():
                rec = rep.chosen_record(crit)
                ari_boxes.setdefault(crit, []).append(rec.criteria["ARI"])
            best = max((r.criteria["ARI"] for r in rep.per_alpha), default=math.nan)
            ari_boxes.setdefault("best", []).append(best)
        chosen = rep.chosen_record()
        if chosen is None:
            log.warning("split %d: every fit failed", s)
        else:
            print(f"split {s}: alpha={chosen.alpha:g} model={chosen.model_code} "
                  f"{args.criterion}={chosen.criteria[args.criterion]:.6g}")
    _write(out / "selection.csv", "\n".join(csv_rows) + "\n")
    _write_json(out / "selection.json", {"splits": summary})
    if ari_boxes:
        order = [c for c in ("BIC", "ICL", "E", "A", "U", "trW", "detW", "best") if c in ari_boxes]
        _write(out / "ari_boxplot.svg",
               box_plot({c: ari_boxes[c] for c in order}, title="ARI at the chosen weight"))
    write_manifest(out, args, started, [args.data])
    if not any(s["per_alpha"] for s in summary):
        print("every fit failed", file=sys.stderr)
        return 2
    return 0


def _groups_range(args, G_lab: int) -> list:
    if args.groups is None:
        return [G_lab]
    try:
        out = [int(t) for t in str(args.groups).split(",")]
    except ValueError:
        raise UsageError("--groups expects integers") from None
    if min(out) < G_lab:
        raise UsageError(f"--groups values must be at least the {G_lab} labelled classes")
    return out


def cmd_simulate(args) -> int:
    started = _now()
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if args.reps < 2:
        raise UsageError("--reps must be at least 2")
    grid = WeightGrid.parse(args.grid)
    p_set = _float_list(args.p, "p")
    structure = _structures(args.structure)
    if len(structure) != 1:
        raise UsageError("simulate takes a single --structure")
    cfg = _fit_config(args)
    scen = Scenario(args.scenario, delta=args.delta)
    res = run_experiment(scen, p_set, grid, args.reps, args.family, cfg, structure[0],
                         seed=args.seed, ari_points=args.ari_points,
                         workers=max(1, args.threads))
    out = _out_dir(args)
    _write(out / "results.csv", res.to_csv())
    _write_json(out / "summary.json", res.to_json())
    series = {f"a={a:g}": [(p, res.cell(p, a).mean) for p in p_set] for a in grid}
    series["chosen"] = [(p, res.cell(p, res.chosen_alpha[p]).mean) for p in p_set
                        if p in res.chosen_alpha]
    band = [(p, res.cell(p, res.chosen_alpha[p]).mean, res.cell(p, res.chosen_alpha[p]).sd)
            for p in p_set if p in res.chosen_alpha]
    _write(out / "ari_vs_p.svg", line_plot(series, title=f"{args.scenario}", band=band))
    write_manifest(out, args, started)
    for p in p_set:
        a = res.chosen_alpha.get(p)
        if a is not None:
            c = res.cell(p, a)
            print(f"p={p:g}: best alpha={a:g} mean ARI={c.mean:.4f} (sd {c.sd:.4f}, n={c.count})")
    failed = sum(1 for r in res.records if r.error is not None)
    if failed == len(res.records):
        print("every fit failed", file=sys.stderr)
        return 2
    return 0


def cmd_ari(args) -> int:
    a, b = read_partition(args.a), read_partition(args.b)
    if len(a) != len(b):
        raise UsageError(f"partitions differ in length ({len(a)} vs {len(b)})")
    print(repr(ari(np.array(a), np.array(b))))
    return 0


# --- parser ---------------------------------------------------------------------------------


def _common(sp, data=True):
    if data:
        sp.add_argument("--data", required=True, help="input CSV with a header row")
        sp.add_argument("--label-col", required=True, help="column holding class labels")
    sp.add_argument("--family", choices=("gaussian", "t"), default="t")
    sp.add_argument("--structure", default="UUUU",
                    help="structure code (select accepts a comma list or 'all')")
    sp.add_argument("--variant", choices=("original", "alt", "alternative"), default="original")
    sp.add_argument("--seed", type=int, default=None, help="master seed (falls back to FSC_SEED)")
    sp.add_argument("--out", default="fsc-out", help="output directory")
    sp.add_argument("--constrain-nu", action="store_true", help="one shared degrees of freedom")
    sp.add_argument("--n-starts", type=int, default=50, help="k-means starts")
    sp.add_argument("--max-iter", type=int, default=1000)
    sp.add_argument("--scatter-points", choices=("all", "unlabelled"), default="all")
    sp.add_argument("--ari-points", choices=("all", "unlabelled"), default="all")
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsc", description="Fractionally-supervised classification")
    ap.add_argument("--version", action="version", version=f"fsc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one model at one weight")
    _common(f)
    f.add_argument("--alpha", type=float, default=0.5)
    f.add_argument("--groups", type=int, default=None, help="number of components")
    f.add_argument("--unlabel-frac", type=float, default=None,
                   help="hide this fraction of the known labels before fitting")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("select", help="model and weight selection over splits")
    _common(s)
    s.add_argument("--grid", default="0:1:0.1")
    s.add_argument("--procedure", type=int, choices=(1, 2), default=1)
    s.add_argument("--criterion", choices=CRITERIA, default="detW",
                   help="criterion used to choose the weight")
    s.add_argument("--p", default=None, help="percent of rows labelled in each split")
    s.add_argument("--splits", type=int, default=1)
    s.add_argument("--groups", default=None, help="comma list of component counts")
    s.add_argument("--u-direction", choices=("max", "min"), default="max")
    s.set_defaults(func=cmd_select)

    m = sub.add_parser("simulate", help="replicated simulation study")
    _common(m, data=False)
    m.add_argument("--scenario", default="two-group-t", help=f"one of {', '.join(SCENARIOS)}")
    m.add_argument("--delta", type=float, default=3.0)
    m.add_argument("--reps", type=int, default=30)
    m.add_argument("--p", default="10,20,30,40,50,60,70,80,90")
    m.add_argument("--grid", default="0:1:0.1")
    m.set_defaults(func=cmd_simulate)

    a = sub.add_parser("ari", help="adjusted Rand index of two partition files")
    a.add_argument("--a", required=True)
    a.add_argument("--b", required=True)
    a.set_defaults(func=cmd_ari)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    args.argv = argv
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "seed"):
            args.seed = _resolve_seed(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FitFailed, TooFewPoints) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FSCError as exc:
        if isinstance(exc, ArithmeticError):
            print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
