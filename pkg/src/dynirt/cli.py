"""Command-line front end.

Subcommands::

    dynirt fit-curve EMISSIONS --out DIR      curve.csv + fit.json
    dynirt simulate --seed N --out DIR        responses.csv + truth.json
    dynirt dynaesti RESPONSES --out DIR       items.json + abilities.csv + diagnostics.json
    dynirt evaluate --truth DIR --estimates DIR
    dynirt holdout RESPONSES --subject ID --items items.json

Every option may also be given in a JSON file passed with ``--config``; flags
win over the file, which wins over the built-in defaults.  Exit codes: 0
success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__, curvfife
from ._parallel import WORKERS_ENV, default_workers
from .dynaesti import EmConfig, Responses, holdout_compare, run_em
from .emissions import EmissionTriplet, GridSpec, bernoulli_emission, gaussian_emission
from .evaluate import experiment_report, format_report
from .grafting import IterationControl
from .irf import FAMILIES, ItemModel, NoFittableCategoriesError, clip_strokes
from .kernel import KernelParams, SingularCovarianceError
from .simulate import RejectionLimitError, SynthConfig, simulate
from .transforms import Transform

log = logging.getLogger("dynirt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

RESPONSE_HEADER = ["student", "item", "time", "response"]
EMISSION_HEADER = ["time", "kind", "payload"]
GOLF_HEADER = ["player", "year", "round", "hole", "strokes_vs_par"]
CURVE_HEADER = ["time", "median", "lower70", "upper70"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- small formatting helpers ----------------------------------------------


def _num(x) -> str:
    """Shortest round-tripping text for a float (stable across runs)."""
    return repr(float(x))


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path, header: list[str]):
    """Yield ``(line_number, row_dict)``; the header must match exactly."""
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise DataError(f"{path}: line 1: expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, dict(zip(header, (c.strip() for c in row)))


def _parse_float(text, path, line, what) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}: line {line}: {what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise DataError(f"{path}: line {line}: {what} must be finite")
    return v


def _parse_int(text, path, line, what) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}: line {line}: {what} {text!r} is not an integer") from None


# -- configuration -----------------------------------------------------------


def _settings(args, defaults: dict) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _workers(value) -> int:
    return default_workers() if value is None else max(1, int(value))


def _ctrl(s: dict) -> IterationControl:
    return IterationControl(tol=float(s["tol"]), max_iter=int(s["max_iter"]), fallback=s["fallback"])


def _candidates(spec) -> tuple | None:
    if spec is None or spec == "auto":
        return None
    if isinstance(spec, (list, tuple)):
        vals = [float(v) for v in spec]
    else:
        try:
            vals = [float(v) for v in str(spec).split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--h-grid must be 'auto' or a comma-separated list, got {spec!r}") from None
    if not vals or min(vals) <= 0:
        raise UsageError("bandwidth candidates must be positive")
    return tuple(vals)


# -- ingestion ---------------------------------------------------------------


def read_responses(path) -> Responses:
    path = Path(path)
    cols = defaultdict(list)
    for line, row in _read_csv(path, RESPONSE_HEADER):
        if not row["student"] or not row["item"]:
            raise DataError(f"{path}: line {line}: empty student or item id")
        cols["student"].append(row["student"])
        cols["item"].append(row["item"])
        cols["time"].append(_parse_float(row["time"], path, line, "time"))
        cols["response"].append(_parse_int(row["response"], path, line, "response"))
    if not cols:
        raise DataError(f"{path}: no responses")
    responses = Responses(cols["student"], cols["item"], cols["time"], cols["response"])
    try:
        responses.check_unique()
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return responses


def write_responses(path, responses: Responses) -> None:
    _write_csv(
        Path(path),
        RESPONSE_HEADER,
        ([s, j, _num(t), int(r)] for s, j, t, r in zip(responses.student, responses.item, responses.time, responses.response)),
    )


def golf_time(year: int, rnd: int) -> float:
    """Rounds of one tournament get distinct times a hundredth of a year apart."""
    return year + (rnd - 1) / 4 / 100


def read_golf(path, min_count: int = 100) -> tuple[Responses, dict]:
    """Golf scorecards -> responses with per-hole clipped scores.

    A score ``s`` counts strokes *under* par (birdie = +1, bogey = -1), so
    ``s = -strokes_vs_par``.  Returns the responses and ``{hole: (s_min, s_max)}``.
    Holes without any fittable category are dropped with a warning.
    """
    path = Path(path)
    rows = []
    for line, row in _read_csv(path, GOLF_HEADER):
        year = _parse_int(row["year"], path, line, "year")
        rnd = _parse_int(row["round"], path, line, "round")
        if not 1 <= rnd <= 4:
            raise DataError(f"{path}: line {line}: round must be 1-4")
        s = -_parse_int(row["strokes_vs_par"], path, line, "strokes_vs_par")
        rows.append((row["player"], row["hole"], golf_time(year, rnd), s))
    if not rows:
        raise DataError(f"{path}: no scores")
    by_hole = defaultdict(list)
    for k, (_, hole, _, _) in enumerate(rows):
        by_hole[hole].append(k)
    ranges, keep, clipped = {}, [], {}
    for hole, idx in by_hole.items():
        try:
            s_min, s_max, clip = clip_strokes([rows[k][3] for k in idx], min_count)
        except NoFittableCategoriesError:
            log.warning("hole %s has no category seen more than %d times; dropped", hole, min_count)
            continue
        ranges[hole] = (s_min, s_max)
        for k, s in zip(idx, clip.tolist()):
            clipped[k] = s
            keep.append(k)
    if not keep:
        raise DataError(f"{path}: no hole has a fittable category")
    keep.sort()
    responses = Responses(
        [rows[k][0] for k in keep], [rows[k][1] for k in keep], [rows[k][2] for k in keep], [clipped[k] for k in keep]
    )
    try:
        responses.check_unique()
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return responses, ranges


def read_items(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise DataError(f"{path}: expected a JSON array of items")
    items = {}
    for k, entry in enumerate(data):
        try:
            items[str(entry["item"])] = ItemModel.from_dict(entry)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: entry {k}: {exc}") from exc
    return items


def items_to_json(items: dict) -> list:
    from .dynaesti import _natural_key

    return [{"item": j, **items[j].to_dict()} for j in sorted(items, key=_natural_key)]


def read_emissions(path, items: dict | None, transform: str = "auto"):
    """Parse an emissions file.  Returns ``(emissions, Transform)``.

    ``bernoulli`` payloads are 0/1; ``gaussian`` payloads are ``mean:std``
    readings of the fitted-space curve; ``irf:<family>`` payloads are
    ``item:response`` with the item looked up in ``items``.
    """
    path = Path(path)
    rows = list(_read_csv(path, EMISSION_HEADER))
    if not rows:
        raise DataError(f"{path}: no emissions")
    families = {row["kind"][4:] for _, row in rows if row["kind"].startswith("irf:")}
    if transform == "auto":
        transform = "probit" if "probit3pl" in families else "identity"
    if "probit3pl" in families and transform != "probit":
        raise DataError(f"{path}: probit3pl emissions need the probit transform")
    if families - {"probit3pl"} and transform == "probit":
        raise DataError(f"{path}: 3pl/golf emissions live on the identity scale")
    tf = Transform.from_name(transform)
    out = []
    for line, row in rows:
        t = _parse_float(row["time"], path, line, "time")
        kind, payload = row["kind"], row["payload"]
        if kind == "bernoulli":
            if payload.lower() not in ("0", "1", "yes", "no", "true", "false"):
                raise DataError(f"{path}: line {line}: bernoulli payload must be 0/1, got {payload!r}")
            out.append(bernoulli_emission(t, payload.lower() in ("1", "yes", "true"), tf))
        elif kind == "gaussian":
            parts = payload.split(":")
            if len(parts) != 2:
                raise DataError(f"{path}: line {line}: gaussian payload must be mean:std")
            mean = _parse_float(parts[0], path, line, "mean")
            std = _parse_float(parts[1], path, line, "std")
            if std <= 0:
                raise DataError(f"{path}: line {line}: std must be positive")
            out.append(gaussian_emission(t, mean, std))
        elif kind.startswith("irf:"):
            fam = kind[4:]
            if fam not in FAMILIES:
                raise DataError(f"{path}: line {line}: unknown IRF family {fam!r}; supported: {', '.join(FAMILIES)}")
            parts = payload.rsplit(":", 1)
            if len(parts) != 2:
                raise DataError(f"{path}: line {line}: irf payload must be item:response")
            if items is None:
                raise DataError(f"{path}: line {line}: irf emissions need --items")
            name, r = parts[0], _parse_int(parts[1], path, line, "response")
            if name not in items:
                raise DataError(f"{path}: line {line}: unknown item {name!r}")
            if items[name].family != fam:
                raise DataError(f"{path}: line {line}: item {name!r} is {items[name].family}, not {fam}")
            from .dynaesti import ResponseLogDensity

            out.append(EmissionTriplet(t, (name, r), ResponseLogDensity(items[name], r)))
        else:
            raise DataError(f"{path}: line {line}: unknown emission kind {kind!r}")
    return out, tf


# -- subcommands -------------------------------------------------------------

FIT_DEFAULTS = {
    "items": None,
    "transform": "auto",
    "h": None,
    "h_grid": "auto",
    "cv_k": 5,
    "seed": 0,
    "grid_points": 101,
    "t_min": None,
    "t_max": None,
    "epsilon": 1e-4,
    "tol": 1e-4,
    "max_iter": 50,
    "fallback": "signed",
    "cv_rule": "max",
}


def cmd_fit_curve(args) -> int:
    s = _settings(args, FIT_DEFAULTS)
    items = read_items(s["items"]) if s["items"] else None
    emissions, tf = read_emissions(args.emissions, items, s["transform"])
    ctrl = _ctrl(s)
    times = np.array([e.time for e in emissions])
    scores = None
    if s["h"] is not None:
        h = float(s["h"])
    else:
        merged = len(np.unique(times))
        k = min(int(s["cv_k"]), len(emissions))
        if k < 2 or merged < 2:
            h = float(curvfife.default_bandwidths(times)[-1])
        else:
            sel = curvfife.select_bandwidth(
                emissions, _candidates(s["h_grid"]), k, ctrl, int(s["seed"]), s["epsilon"], s["cv_rule"] or "max"
            )
            h, scores = sel.h, sel.scores
    dist = curvfife.fit(emissions, KernelParams(h=h, S=1.0, epsilon=float(s["epsilon"])), ctrl, tf)
    lo = times.min() if s["t_min"] is None else float(s["t_min"])
    hi = times.max() if s["t_max"] is None else float(s["t_max"])
    if hi < lo:
        raise UsageError("--t-max must not be below --t-min")
    tau = np.linspace(lo, hi, int(s["grid_points"]))
    med, low, up = dist.marginals(tau)
    out = _outdir(args.out)
    _write_csv(out / "curve.csv", CURVE_HEADER, ([_num(a), _num(b), _num(c), _num(d)] for a, b, c, d in zip(tau, med, low, up)))
    _write_json(
        out / "fit.json",
        {
            "format_version": FORMAT_VERSION,
            "h": h,
            "epsilon": float(s["epsilon"]),
            "transform": tf.kind,
            "cv_scores": None if scores is None else [[k, v] for k, v in sorted(scores.items())],
            "converged": bool(dist.converged),
            "n_iter": int(dist.n_iter),
            "warning": dist.warning,
            "emission_times": _floats(dist.emission_times),
            "factors": {"m": _floats(dist.factors.m), "v": _floats(dist.factors.v)},
        },
    )
    if dist.warning:
        log.warning("%s", dist.warning)
    return EXIT_OK


SIM_DEFAULTS = {
    "n_students": 500,
    "m_items": 500,
    "gen_h": 0.19,
    "gen_S": 0.6,
    "seed": None,
    "grid_points": 1001,
    "static": False,
}


def cmd_simulate(args) -> int:
    s = _settings(args, SIM_DEFAULTS)
    if s["seed"] is None:
        raise UsageError("simulate needs --seed (or 'seed' in the config file)")
    cfg = SynthConfig(
        n_students=int(s["n_students"]),
        m_items=int(s["m_items"]),
        gen_h=float(s["gen_h"]),
        gen_S=float(s["gen_S"]),
        seed=int(s["seed"]),
        grid_points=int(s["grid_points"]),
        static=bool(s["static"]),
    )
    data = simulate(cfg)
    out = _outdir(args.out)
    write_responses(out / "responses.csv", data.responses)
    _write_json(
        out / "truth.json",
        {
            "format_version": FORMAT_VERSION,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()},
            "static": cfg.static,
            "grid": _floats(data.grid),
            "students": list(data.students),
            "curves": [_floats(c) for c in data.curves],
            "items": items_to_json(data.items),
        },
    )
    return EXIT_OK


EM_DEFAULTS = {
    "family": "probit3pl",
    "static": False,
    "golf": False,
    "golf_min_count": 100,
    "init_items": None,
    "h": None,
    "h_grid": "auto",
    "cv_k": 5,
    "seed": 0,
    "em_max_rounds": None,
    "em_tol": 1e-4,
    "param_tol": None,
    "quad_points": 41,
    "grid_points": 101,
    "epsilon": 1e-4,
    "tol": 1e-4,
    "max_iter": 50,
    "fallback": "tilt",
    "cv_rule": None,
    "workers": None,
}


def _em_config(s: dict, init=None) -> EmConfig:
    family = "golf" if s["golf"] else s["family"]
    if family not in FAMILIES:
        raise UsageError(f"unknown IRF family {family!r}; supported: {', '.join(FAMILIES)}")
    return EmConfig(
        family=family,
        init_params=init,
        h=None if s["h"] is None else float(s["h"]),
        epsilon=float(s["epsilon"]),
        cv_k=int(s["cv_k"]),
        cv_candidates=_candidates(s["h_grid"]),
        cv_rule=s["cv_rule"],
        cv_seed=int(s["seed"]),
        em_max_rounds=None if s["em_max_rounds"] is None else int(s["em_max_rounds"]),
        em_tol=float(s["em_tol"]),
        param_tol=None if s["param_tol"] is None else float(s["param_tol"]),
        quad_points=int(s["quad_points"]),
        mode="static" if s["static"] else "dynamic",
        ctrl=_ctrl(s),
        workers=_workers(s["workers"]),
        grid_points=int(s["grid_points"]),
    )


def cmd_dynaesti(args) -> int:
    s = _settings(args, EM_DEFAULTS)
    ranges = None
    if s["golf"]:
        responses, ranges = read_golf(args.responses, int(s["golf_min_count"]))
    else:
        responses = read_responses(args.responses)
    init = read_items(s["init_items"]) if s["init_items"] else {}
    config = _em_config(s)
    if config.family != "golf" and not np.isin(responses.response, (0, 1)).all():
        raise DataError(f"{args.responses}: {config.family} responses must be 0 or 1")
    from .dynaesti import initial_items

    items = initial_items(responses, config, ranges)
    items.update({j: m for j, m in init.items() if j in items})
    result = run_em(responses, config, items)
    out = _outdir(args.out)
    _write_json(out / "items.json", items_to_json(result.items))
    rows = []
    for stu in responses.students:
        a = result.abilities[stu]
        for t, m, lo, hi in zip(a.grid_times, a.median, *a.band70):
            rows.append([stu, _num(t), _num(m), _num(lo), _num(hi)])
    _write_csv(out / "abilities.csv", ["student", *CURVE_HEADER], rows)
    diag = result.diagnostics
    _write_json(
        out / "diagnostics.json",
        {
            "format_version": FORMAT_VERSION,
            "family": config.family,
            "mode": config.mode,
            "rounds": diag["rounds"],
            "converged": diag["converged"],
            "final_expected_loglik": diag["final_expected_loglik"],
            "history": [
                {"round": h["round"], "pre_m": h["pre_m"], "post_m": h["post_m"], "item_warnings": h["item_warnings"]}
                for h in diag["history"]
            ],
            "bandwidths": {k: diag["bandwidths"][k] for k in responses.students},
            "nonconverged_students": diag["nonconverged_students"],
            "golf_ranges": None if ranges is None else {k: list(v) for k, v in sorted(ranges.items())},
        },
    )
    return EXIT_OK


def read_truth(path) -> dict:
    path = Path(path)
    path = path / "truth.json" if path.is_dir() else path
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("grid", "students", "curves"):
        if key not in data:
            raise DataError(f"{path}: missing {key!r}")
    return data


def read_abilities(path) -> dict:
    path = Path(path)
    rows = defaultdict(list)
    for line, row in _read_csv(path, ["student", *CURVE_HEADER]):
        rows[row["student"]].append(
            [_parse_float(row[k], path, line, k) for k in CURVE_HEADER]
        )
    return {s: np.array(v) for s, v in rows.items()}


def cmd_evaluate(args) -> int:
    truth = read_truth(args.truth)
    est_dir = Path(args.estimates)
    abilities = read_abilities(est_dir / "abilities.csv")
    grid = np.asarray(truth["grid"], dtype=float)
    missing = [s for s in truth["students"] if s not in abilities]
    if missing:
        raise DataError(f"no ability estimates for students: {', '.join(missing[:5])}")
    est = []
    for s in truth["students"]:
        a = abilities[s]
        if a[0, 0] > grid[0] + 1e-9 or a[-1, 0] < grid[-1] - 1e-9:
            raise DataError(f"ability estimates for {s} do not span the truth grid")
        est.append(np.interp(grid, a[:, 0], a[:, 1]))
    true_items = est_items = None
    if truth.get("items") and (est_dir / "items.json").exists():
        true_items = {e["item"]: ItemModel.from_dict(e) for e in truth["items"]}
        est_items = read_items(est_dir / "items.json")
    report = experiment_report(
        grid, np.asarray(truth["curves"], dtype=float), np.array(est), true_items, est_items, static=bool(truth.get("static"))
    )
    if args.out:
        _write_json(Path(args.out), {"format_version": FORMAT_VERSION, **report})
    sys.stdout.write(format_report(report))
    return EXIT_OK


HOLDOUT_DEFAULTS = {
    "runs": 5,
    "seed": 0,
    "h": None,
    "h_grid": "auto",
    "cv_k": 5,
    "epsilon": 1e-4,
    "tol": 1e-4,
    "max_iter": 50,
    "fallback": "tilt",
    "cv_rule": None,
}


def cmd_holdout(args) -> int:
    s = _settings(args, HOLDOUT_DEFAULTS)
    responses = read_responses(args.responses)
    items = read_items(args.items)
    sub = responses.subset(responses.student == args.subject)
    if len(sub) == 0:
        raise DataError(f"subject {args.subject!r} has no responses")
    missing = set(sub.items) - set(items)
    if missing:
        raise DataError(f"no parameters for items: {', '.join(sorted(missing)[:5])}")
    family = items[sub.item[0]].family
    config = EmConfig(
        family=family,
        h=None if s["h"] is None else float(s["h"]),
        epsilon=float(s["epsilon"]),
        cv_k=int(s["cv_k"]),
        cv_candidates=_candidates(s["h_grid"]),
        cv_rule=s["cv_rule"],
        cv_seed=int(s["seed"]),
        ctrl=_ctrl(s),
    )
    res = holdout_compare(sub, items, config, n_runs=int(s["runs"]), seed=int(s["seed"]))
    report = {
        "format_version": FORMAT_VERSION,
        "subject": args.subject,
        "n_responses": len(sub),
        "ratio": res.ratio,
        "log_ratio": res.log_ratio,
        "dynamic_logprob": res.dynamic_logprob,
        "static_logprob": res.static_logprob,
        "runs": res.runs,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- argument parsing --------------------------------------------------------


def _add_common(p, seed=True):
    p.add_argument("--config", help="JSON file with option defaults")
    if seed:
        p.add_argument("--seed", type=int)


def _add_fit_opts(p):
    p.add_argument("--h", type=float, help="fixed bandwidth (skips cross-validation)")
    p.add_argument("--h-grid", dest="h_grid", help="'auto' or comma-separated candidate bandwidths")
    p.add_argument("--cv-k", dest="cv_k", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--fallback", choices=("signed", "tilt", "discard"))
    p.add_argument("--cv-rule", dest="cv_rule", choices=("max", "one_se"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dynirt", description="Curve fitting from emissions and dynamic IRT.")
    parser.add_argument("--version", action="version", version=f"dynirt {__version__} (format {FORMAT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit-curve", help="fit one curve from an emissions file")
    p.add_argument("emissions")
    p.add_argument("--out", required=True)
    p.add_argument("--items", help="items.json for irf:<family> emissions")
    p.add_argument("--transform", choices=("auto", "identity", "probit"))
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--t-min", dest="t_min", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    _add_fit_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit_curve)

    p = sub.add_parser("simulate", help="generate a synthetic dynamic-IRT data set")
    p.add_argument("--out", required=True)
    p.add_argument("--n-students", dest="n_students", type=int)
    p.add_argument("--m-items", dest="m_items", type=int)
    p.add_argument("--gen-h", dest="gen_h", type=float)
    p.add_argument("--gen-S", dest="gen_S", type=float)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--static", action="store_const", const=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dynaesti", help="estimate items and ability curves by EM")
    p.add_argument("responses")
    p.add_argument("--out", required=True)
    p.add_argument("--family")
    p.add_argument("--static", action="store_const", const=True)
    p.add_argument("--golf", action="store_const", const=True, help="input is a golf scorecard file")
    p.add_argument("--golf-min-count", dest="golf_min_count", type=int)
    p.add_argument("--init-items", dest="init_items", help="items.json with starting parameters")
    p.add_argument("--em-max-rounds", dest="em_max_rounds", type=int, help="default 30 (dynamic) or 200 (static)")
    p.add_argument("--em-tol", dest="em_tol", type=float)
    p.add_argument("--param-tol", dest="param_tol", type=float, help="largest item-parameter change allowed at convergence")
    p.add_argument("--quad-points", dest="quad_points", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    _add_fit_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_dynaesti)

    p = sub.add_parser("evaluate", help="compare estimates with a simulation's truth")
    p.add_argument("--truth", required=True, help="truth.json or the directory holding it")
    p.add_argument("--estimates", required=True, help="directory with abilities.csv and items.json")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("holdout", help="dynamic vs static hold-out likelihood ratio for one subject")
    p.add_argument("responses")
    p.add_argument("--subject", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--out")
    _add_fit_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_holdout)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularCovarianceError, RejectionLimitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
