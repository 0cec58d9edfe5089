"""Command-line entry point.

Each subcommand is a thin wrapper over one library operation. ``--seed``,
``--out`` and ``--format`` behave the same everywhere; errors exit with
1 (usage), 2 (data), 3 (numeric) or 4 (bound exceeded).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .datamodel import Dataset, load_csv, log_transform, write_csv
from .errors import DataError, MbivError, UsageError
from .graph import (
    d_separated,
    equivalence_class,
    iv_candidates,
    markov_blanket,
    orient_with_timestamps,
    parse_graph,
)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .regress import endogeneity_tests
from .score import compare_backdoor
from .select import cv_select, grouping_diagnostic, isis_bootstrap, lars_path, rectify, solar, SelectionResult
from .sem import parse_sem, sample, scenario


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _split(values) -> list[str]:
    out = []
    for v in values or []:
        out.extend(s.strip() for s in v.split(",") if s.strip())
    return out


def _emit(args, payload: dict, text: str, rows: list[list] | None = None) -> None:
    fmt = args.format
    if fmt == "json":
        body = json.dumps(payload, indent=2) + "\n"
    elif fmt == "csv":
        if rows is None:
            raise UsageError("csv output is not available for this command")
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        body = buf.getvalue()
    else:
        body = text if text.endswith("\n") else text + "\n"
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)


def _data(args) -> Dataset:
    ds = load_csv(args.data)
    logs = _split(getattr(args, "log", None))
    if logs:
        ds = log_transform(ds, logs)
    return ds


def _xy(ds: Dataset, response: str, candidates):
    ds.index(response)
    cands = _split(candidates) or [v for v in ds.names if v != response]
    for v in cands:
        ds.index(v)
    return ds.column(response), ds.matrix(cands), cands


def _read_graph(path):
    try:
        return parse_graph(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read graph {path}: {e.strerror}") from None


def _stamps(text):
    out = {}
    for item in _split([text] if text else []):
        name, sep, ts = item.rpartition(":")
        if not sep:
            raise UsageError(f"expected name:stamp, got {item!r}")
        try:
            out[name] = int(ts)
        except ValueError:
            raise UsageError(f"stamp {ts!r} is not an integer") from None
    return out


def _scenario_params(extra: list[str]) -> dict:
    """Turn leftover ``--name value`` pairs into scenario keyword arguments."""
    params = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{tok} needs a value")
            val = extra[i + 1]
            i += 2
        if "," in val:
            params[key] = tuple(float(v) for v in val.split(","))
            continue
        try:
            params[key] = float(val)
        except ValueError:
            if val.lower() in ("true", "false"):
                params[key] = val.lower() == "true"
            else:
                raise UsageError(f"{tok}: {val!r} is not a number") from None
    return params


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args, extra):
    if args.sem:
        sem = parse_sem(Path(args.sem).read_text())
        if extra:
            raise UsageError("scenario parameters cannot be combined with --sem")
    else:
        try:
            sem = scenario(args.scenario, **_scenario_params(extra))
        except TypeError as e:
            raise UsageError(str(e)) from None
    ds = sample(sem, args.n, args.seed)
    if args.format == "csv":
        if args.out:
            write_csv(ds, args.out)
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(ds.names)
            w.writerows([[repr(float(v)) for v in row] for row in ds.values])
            sys.stdout.write(buf.getvalue())
        return
    payload = {"scenario": sem.name, "n": ds.n, "seed": args.seed, "columns": list(ds.names)}
    text = f"{sem.name}: n={ds.n} columns={','.join(ds.names)}"
    _emit(args, payload, text)


def _selection_out(args, r: SelectionResult):
    rows = [["variable", "score", "selected"]]
    rows += [[v, repr(float(r.scores.get(v, 0.0))), str(v in r.selected).lower()] for v in r.candidates]
    text = f"{r.algorithm}: {', '.join(r.selected) or '(none)'}\n" + "\n".join(
        f"  {v:<16}{r.scores.get(v, 0.0):.6g}{'  *' if v in r.selected else ''}" for v in r.candidates
    )
    _emit(args, r.to_dict(), text, rows)


def cmd_screen(args, extra):
    y, X, names = _xy(_data(args), args.response, args.candidates)
    r = isis_bootstrap(y, X, B=args.B, keep_fraction=args.keep_fraction,
                       inclusion_threshold=args.threshold, seed=args.seed, names=names,
                       moderate_cutoff=args.moderate_cutoff)
    _selection_out(args, r)


def cmd_select(args, extra):
    y, X, names = _xy(_data(args), args.response, args.candidates)
    alg = args.algorithm
    if alg == "solar":
        r = solar(y, X, K=args.K, subsample_fraction=args.fraction, c=args.c, seed=args.seed, names=names)
    elif alg == "cv-lasso":
        r = cv_select(y, X, "lasso", folds=args.folds, seed=args.seed, names=names)
    elif alg == "cv-en":
        r = cv_select(y, X, "elastic_net", folds=args.folds, seed=args.seed, names=names)
    else:
        path = lars_path(y, X, names=names)
        sel = path.selected_names()
        scores = {v: 0.0 for v in names}
        for k, j in enumerate(path.order):
            scores[names[j]] = float(k + 1)
        r = SelectionResult("lars-bic", names, sel, scores,
                            {"best_step": path.best_step, "bic": [float(b) for b in path.bic]})
    _selection_out(args, r)


def cmd_diagnose_groups(args, extra):
    ds = _data(args)
    anchors = _split(args.anchor)
    cands = _split(args.candidates) or None
    groups = [grouping_diagnostic(ds, a, args.cutoff, cands) for a in anchors]
    payload = {"groups": [g.to_dict() for g in groups]}
    if args.selected:
        sel = _split(args.selected)
        r = rectify(SelectionResult("input", list(ds.names), sel, {}, {}), groups)
        payload["rectified"] = r.selected
    lines, rows = [], [["anchor", "member", "corr", "coef", "r2", "abs_coef_sum", "irc_violation"]]
    for g in groups:
        d = g.to_dict()
        lines.append(f"{g.anchor}: members {', '.join(g.members) or '(none)'}  R2 {g.r2:.4g}  "
                     f"sum|b| {g.abs_coef_sum:.4g}" + ("  IRC violation" if g.irc_violation else ""))
        for m in g.members:
            rows.append([g.anchor, m, repr(d["correlations"][m]), repr(d["coefficients"][m]),
                         repr(d["r2"]), repr(d["abs_coef_sum"]), str(g.irc_violation).lower()])
    if "rectified" in payload:
        lines.append(f"rectified: {', '.join(payload['rectified'])}")
    _emit(args, payload, "\n".join(lines), rows)


def cmd_graph(args, extra):
    op = args.op
    if op == "orient":
        sk = _read_graph(args.graph)
        st = dict(sk.stamps)
        st.update(_stamps(args.stamps))
        g = orient_with_timestamps(sk, st)
        payload = {"edges": [list(e) for e in g.edges], "undirected": [list(e) for e in g.undirected_edges]}
        rows = [["from", "to", "type"]] + [[a, b, "directed"] for a, b in g.edges] + \
               [[a, b, "undirected"] for a, b in g.undirected_edges]
        text = g.to_dot() if args.dot else g.to_text()
        _emit(args, payload, text, rows)
    elif op == "query":
        g = _read_graph(args.graph)
        v = args.vertex
        res = {
            "vertex": v,
            "parents": sorted(g.parents(v)),
            "children": sorted(g.children(v)),
            "markov_blanket": sorted(markov_blanket(g, v)),
            "descendants": sorted(g.descendants(v)),
        }
        rows = [["relation", "vertex"]] + [[k, u] for k in ("parents", "children", "markov_blanket", "descendants") for u in res[k]]
        text = "\n".join(f"{k}: {', '.join(res[k])}" for k in ("parents", "children", "markov_blanket", "descendants"))
        _emit(args, res, text, rows)
    elif op == "dsep":
        g = _read_graph(args.graph)
        given = _split(args.given)
        sep = d_separated(g, args.a, args.b, given)
        payload = {"a": args.a, "b": args.b, "given": given, "d_separated": sep}
        _emit(args, payload, "true" if sep else "false",
              [["a", "b", "given", "d_separated"], [args.a, args.b, " ".join(given), str(sep).lower()]])
    elif op == "iv-candidates":
        g = _read_graph(args.graph)
        reps = iv_candidates(g, args.x, args.y, _split(args.controls), subset_cap=args.subset_cap)
        rows = [["candidate", "verdict", "g1", "g2", "required_controls", "witness"]]
        lines = []
        for r in reps:
            d = r.to_dict()
            rows.append([r.candidate, r.verdict, str(r.g1_holds).lower(), str(r.g2_holds).lower(),
                         " ".join(d["required_controls"]), d["g1_witness"] or ""])
            s = f"{r.candidate}: {r.verdict}"
            if d["required_controls"]:
                s += f" (controls: {', '.join(d['required_controls'])})"
            if d["g1_witness"]:
                s += f"  witness: {d['g1_witness']}"
            lines.append(s)
        _emit(args, {"x": args.x, "y": args.y, "candidates": [r.to_dict() for r in reps]}, "\n".join(lines), rows)
    elif op == "equivalence":
        g = _read_graph(args.graph)
        cls = equivalence_class(g)
        payload = {"members": [[list(e) for e in m.edges] for m in cls]}
        text = "\n\n".join(m.to_text().rstrip() for m in cls)
        _emit(args, payload, text)


def cmd_score_backdoor(args, extra):
    ds = _data(args)
    d = compare_backdoor(ds, args.parent, args.mediator, args.child, _split(args.controls))
    rows = [["criterion", "be", "no_be", "winner"]]
    dd = d.to_dict()
    for c, row in dd["scores"].items():
        rows.append([c, repr(row["be"]), repr(row["no_be"]), row["winner"]])
    text = d.table() + ("\n" + "\n".join(d.warnings) if d.warnings else "")
    _emit(args, dd, text, rows)


def cmd_ivtest(args, extra):
    ds = _data(args)
    exog = _split(args.exog)
    inst = _split(args.instruments)
    if not inst:
        raise UsageError("--instruments is required")
    rep = endogeneity_tests(
        ds.column(args.response), ds.matrix(exog) if exog else None, ds.column(args.endogenous),
        ds.matrix(inst), exog_names=exog, endog_name=args.endogenous, instrument_names=inst,
        response_name=args.response,
    )
    rows = [["test", "statistic", "distribution", "df", "p_value"]]
    for t in rep.tests:
        rows.append([t.name, repr(t.statistic), t.distribution, " ".join(map(str, t.df)), repr(t.p_value)])
    text = "OLS\n" + rep.ols_fit.table() + "\n\n2SLS\n" + rep.tsls_fit.table() + "\n\n" + rep.table()
    _emit(args, rep.to_dict(), text, rows)


def cmd_pipeline(args, extra):
    overrides = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = val.strip()
    for key in ("scenario", "data", "response", "seed", "n"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = str(v)
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = PipelineConfig.from_mapping(overrides)
    rep = run_pipeline(cfg)
    if args.out:
        rep.write(args.out)
    if args.format == "csv":
        raise UsageError("pipeline writes json or text")
    out = rep.to_json() if args.format == "json" else rep.to_text()
    sys.stdout.write(out)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root random seed (default 0)")
    common.add_argument("--out", help="output file (directory for pipeline)")
    common.add_argument("--format", choices=("json", "csv", "text"), default="text")

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="input CSV with a header row")
    data.add_argument("--log", action="append", help="columns to log-transform (comma separated)")

    p = _Parser(prog="mbiv", description="Markov-blanket selection, graph orientation and IV checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="sample a canned scenario to CSV")
    s.add_argument("scenario", nargs="?", help="scenario name")
    s.add_argument("-n", type=int, default=1000)
    s.add_argument("--sem", help="SEM text file instead of a scenario")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("screen", parents=[common, data], help="bootstrap ISIS screening")
    s.add_argument("--response", required=True)
    s.add_argument("--candidates", action="append")
    s.add_argument("--B", type=int, default=200)
    s.add_argument("--threshold", type=float, default=0.7)
    s.add_argument("--keep-fraction", type=float)
    s.add_argument("--moderate-cutoff", type=float)
    s.set_defaults(func=cmd_screen)

    s = sub.add_parser("select", parents=[common, data], help="variable selection")
    s.add_argument("--response", required=True)
    s.add_argument("--candidates", action="append")
    s.add_argument("--algorithm", choices=("solar", "cv-lasso", "cv-en", "lars-bic"), default="solar")
    s.add_argument("--K", type=int, default=10)
    s.add_argument("--c", type=float)
    s.add_argument("--fraction", type=float, default=0.9)
    s.add_argument("--folds", type=int, default=10)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("diagnose-groups", parents=[common, data], help="grouping-effect diagnostics")
    s.add_argument("--anchor", action="append", required=True)
    s.add_argument("--cutoff", type=float, default=0.5)
    s.add_argument("--candidates", action="append")
    s.add_argument("--selected", action="append", help="selection to rectify")
    s.set_defaults(func=cmd_diagnose_groups)

    s = sub.add_parser("graph", parents=[common], help="graph operations")
    s.add_argument("op", choices=("orient", "query", "dsep", "iv-candidates", "equivalence"))
    s.add_argument("--graph", required=True, help="graph text file")
    s.add_argument("--stamps", help="name:stamp pairs, comma separated")
    s.add_argument("--dot", action="store_true", help="text output as DOT")
    s.add_argument("--vertex")
    s.add_argument("--a")
    s.add_argument("--b")
    s.add_argument("--given", action="append")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--controls", action="append")
    s.add_argument("--subset-cap", type=int, default=14)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("score-backdoor", parents=[common, data], help="BE vs no-BE model scores")
    s.add_argument("--parent", required=True)
    s.add_argument("--mediator", required=True)
    s.add_argument("--child", required=True)
    s.add_argument("--controls", action="append")
    s.set_defaults(func=cmd_score_backdoor)

    s = sub.add_parser("ivtest", parents=[common, data], help="2SLS and endogeneity tests")
    s.add_argument("--response", required=True)
    s.add_argument("--endogenous", required=True)
    s.add_argument("--instruments", action="append", required=True)
    s.add_argument("--exog", action="append")
    s.set_defaults(func=cmd_ivtest)

    s = sub.add_parser("pipeline", parents=[common], help="run the full workflow")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--set", action="append", help="config override key=value")
    s.add_argument("--scenario")
    s.add_argument("--data")
    s.add_argument("--response")
    s.add_argument("-n", type=int)
    s.set_defaults(func=cmd_pipeline)
    return p


_REQUIRED = {
    "query": ("vertex",),
    "dsep": ("a", "b"),
    "iv-candidates": ("x", "y"),
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        args, extra = parser.parse_known_args(argv)
        if args.command != "simulate" and extra:
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        if args.command == "simulate":
            if "--format" not in argv and not any(a.startswith("--format=") for a in argv):
                args.format = "csv"
            if not args.scenario and not args.sem:
                raise UsageError("simulate needs a scenario name or --sem")
        if args.command == "graph":
            for k in _REQUIRED.get(args.op, ()):
                if getattr(args, k) is None:
                    raise UsageError(f"graph {args.op} needs --{k}")
        if args.command == "pipeline":
            # --seed on the command line overrides the config; the parser default does not
            if "--seed" not in argv and not any(a.startswith("--seed=") for a in argv):
                args.seed = None
        args.func(args, extra)
        return 0
    except MbivError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except BrokenPipeError:  # pragma: no cover
        return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
