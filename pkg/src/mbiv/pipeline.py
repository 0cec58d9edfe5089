"""End-to-end workflow: screen, select, rectify, orient, score backdoors,
validate instruments and run the instrumented regressions.

The pipeline is deterministic given its configuration. Every randomised stage
receives its own integer seed derived from ``PipelineConfig.seed``, and the
JSON report holds no wall-clock values (timings go to a separate file).
"""

from __future__ import annotations

import json
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .datamodel import Dataset, load_csv, log_transform, skewness, standardize
from .errors import BoundExceeded, DataError, GraphError, MbivError, UsageError
from .graph import Dag, iv_candidates, parse_graph
from .regress import endogeneity_tests
from .score import compare_backdoor
from .select import (
    SelectionResult,
    cv_select,
    grouping_diagnostic,
    isis_bootstrap,
    lars_path,
    rectify,
    solar,
)
from .sem import sample, scenario

SCHEMA_VERSION = "1.0"
ENDOGENEITY_ALPHA = 0.05


@dataclass
class PipelineConfig:
    response: str
    data: str | None = None
    scenario: str | None = None
    scenario_params: dict = field(default_factory=dict)
    n: int = 5000
    seed: int = 0
    stamps: dict = field(default_factory=dict)
    latent: list = field(default_factory=list)
    log: list = field(default_factory=list)
    standardize: bool = False
    isis_B: int = 200
    isis_threshold: float = 0.7
    solar_K: int = 10
    solar_c: float | None = None
    solar_fraction: float = 0.9
    cv_folds: int = 10
    n_lambda: int = 100
    en_alphas: list = field(default_factory=lambda: [0.2, 0.5, 0.8])
    grouping_cutoff: float = 0.5
    mb_rule: str = "intersection"
    rectify_mb: bool = False
    subset_cap: int = 14
    graph: str = "learn"
    forbid: list = field(default_factory=list)
    out: str | None = None
    threads: int = 1

    def __post_init__(self):
        if (self.data is None) == (self.scenario is None):
            raise UsageError("give exactly one of 'data' and 'scenario'")
        if not self.response:
            raise UsageError("'response' is required")
        if self.mb_rule not in ("intersection", "union"):
            raise UsageError("mb_rule must be 'intersection' or 'union'")
        if self.n < 1:
            raise UsageError("n must be positive")
        if self.subset_cap < 2:
            raise UsageError("subset_cap must be at least 2")
        for e in self.forbid:
            if len(e) != 2:
                raise UsageError(f"bad forbidden edge {e!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["forbid"] = [f"{a}->{b}" for a, b in self.forbid]
        d.pop("out")
        return d

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "PipelineConfig":
        """Build a config from flat string pairs (config file lines or CLI overrides)."""
        args: dict[str, Any] = {}
        params: dict[str, float] = {}
        for key, raw in kv.items():
            key = key.strip().replace("-", "_")
            val = str(raw).strip()
            if key.startswith("param."):
                params[key[6:]] = _number(val, key)
                continue
            if key not in _FIELDS:
                raise UsageError(f"unknown config key {key!r}")
            args[key] = _FIELDS[key](val, key)
        if params:
            args.setdefault("scenario_params", {}).update(params)
        if "response" not in args:
            raise UsageError("'response' is required")
        return cls(**args)


def _number(val: str, key: str) -> float:
    try:
        x = float(val)
    except ValueError:
        raise UsageError(f"{key}: {val!r} is not a number") from None
    return int(x) if x.is_integer() and "." not in val and "e" not in val.lower() else x


def _int(val, key):
    x = _number(val, key)
    if not isinstance(x, int):
        raise UsageError(f"{key}: {val!r} is not an integer")
    return x


def _bool(val, key):
    v = val.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{key}: {val!r} is not a boolean")


def _list(val, key):
    return [s.strip() for s in val.split(",") if s.strip()]


def _floats(val, key):
    return [float(_number(s, key)) for s in _list(val, key)]


def _stamps(val, key):
    out = {}
    for item in _list(val, key):
        name, sep, ts = item.rpartition(":")
        if not sep or not name:
            raise UsageError(f"{key}: expected name:stamp, got {item!r}")
        out[name.strip()] = _int(ts.strip(), key)
    return out


def _edges(val, key):
    out = []
    for item in _list(val, key):
        a, sep, b = item.partition("->")
        if not sep or not a.strip() or not b.strip():
            raise UsageError(f"{key}: expected a->b, got {item!r}")
        out.append((a.strip(), b.strip()))
    return out


def _opt_float(val, key):
    return None if val.lower() in ("", "none", "auto") else float(_number(val, key))


def _str(val, key):
    return val


_FIELDS = {
    "response": _str,
    "data": _str,
    "scenario": _str,
    "n": _int,
    "seed": _int,
    "stamps": _stamps,
    "latent": _list,
    "log": _list,
    "standardize": _bool,
    "isis_B": _int,
    "isis_threshold": lambda v, k: float(_number(v, k)),
    "solar_K": _int,
    "solar_c": _opt_float,
    "solar_fraction": lambda v, k: float(_number(v, k)),
    "cv_folds": _int,
    "n_lambda": _int,
    "en_alphas": _floats,
    "grouping_cutoff": lambda v, k: float(_number(v, k)),
    "mb_rule": _str,
    "rectify_mb": _bool,
    "subset_cap": _int,
    "graph": _str,
    "forbid": _edges,
    "out": _str,
    "threads": _int,
}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"config line {lineno}: expected key = value")
        kv[key.strip()] = val.strip()
    return kv


def load_config(path, overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    kv = parse_config_text(text)
    kv.update(overrides or {})
    return PipelineConfig.from_mapping(kv)


# -- report --------------------------------------------------------------------


@dataclass
class PipelineReport:
    config: PipelineConfig
    data_summary: dict
    selections: dict
    final_mb: list
    groups: list
    rectified: SelectionResult | None
    graph: Dag | None
    simultaneity: list
    backdoor: list
    iv_candidates: list
    iv_reports: list
    verdict: str
    warnings: list
    metadata: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "schema_version": SCHEMA_VERSION,
            "verdict": self.verdict,
            "config": self.config.to_dict(),
            "data": self.data_summary,
            "selection": {
                form: {alg: r.to_dict() for alg, r in runs.items()} if runs is not None else None
                for form, runs in self.selections.items()
            },
            "final_mb": list(self.final_mb),
            "groups": [gr.to_dict() for gr in self.groups],
            "rectified": self.rectified.to_dict() if self.rectified is not None else None,
            "graph": None if g is None else {
                "vertices": list(g.vertices),
                "edges": [list(e) for e in g.edges],
                "undirected": [list(e) for e in g.undirected_edges],
                "stamps": {v: g.stamps[v] for v in g.vertices if v in g.stamps},
                "latent": sorted(g.latent),
            },
            "simultaneity": self.simultaneity,
            "backdoor": [b.to_dict() for b in self.backdoor],
            "iv_candidates": self.iv_candidates,
            "iv_tests": self.iv_reports,
            "warnings": list(self.warnings),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_text(self) -> str:
        return render_text(self.to_dict())

    def write(self, out) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "report.json", out / "report.txt", out / "timings.json"]
        files[0].write_text(self.to_json())
        files[1].write_text(self.to_text())
        files[2].write_text(json.dumps(self.timings, indent=2) + "\n")
        if self.graph is not None:
            (out / "graph.txt").write_text(self.graph.to_text())
            (out / "graph.dot").write_text(self.graph.to_dot("mb"))
            files += [out / "graph.txt", out / "graph.dot"]
        return files


def _num(x) -> str:
    # same spelling as json.dumps so the text stays a projection of the JSON
    return json.dumps(x)


def render_text(d: dict) -> str:
    """Paper-style tables built only from values present in the JSON report."""
    L = []
    L.append(f"verdict: {d['verdict']}")
    ds = d["data"]
    L.append(f"data: {ds['source']}  n={_num(ds['n'])}  columns={_num(ds['p'])}")
    L.append("")
    L.append("== variable selection ==")
    for form, runs in d["selection"].items():
        if runs is None:
            continue
        for alg, r in runs.items():
            L.append(f"[{form}] {alg}: {', '.join(r['selected']) or '(none)'}")
            hp = r["hyperparameters"]
            for k in ("lambda", "alpha", "c", "threshold"):
                if k in hp and hp[k] is not None:
                    L.append(f"    {k} = {_num(hp[k])}")
    L.append(f"final MB ({d['config']['mb_rule']}): {', '.join(d['final_mb']) or '(none)'}")
    if d["groups"]:
        L.append("")
        L.append("== grouping diagnostics ==")
        for gr in d["groups"]:
            if not gr["members"]:
                continue
            coefs = ", ".join(f"{k} {_num(v)}" for k, v in gr["coefficients"].items())
            L.append(f"{gr['anchor']} ~ {coefs}  R2 {_num(gr['r2'])}  sum|b| {_num(gr['abs_coef_sum'])}"
                     + ("  IRC violation" if gr["irc_violation"] else ""))
    if d["rectified"] is not None:
        L.append(f"rectified: {', '.join(d['rectified']['selected'])}")
    if d["graph"] is not None:
        L.append("")
        L.append("== oriented graph ==")
        for a, b in d["graph"]["edges"]:
            L.append(f"{a} -> {b}")
        for a, b in d["graph"]["undirected"]:
            L.append(f"{a} -- {b}")
    for s in d["simultaneity"]:
        L.append(f"simultaneity: {s['equation']}")
    if d["backdoor"]:
        L.append("")
        L.append("== backdoor effect scores (lower is better) ==")
        for b in d["backdoor"]:
            L.append(f"{b['parent']} -> {b['mediator']} -> {b['child']}"
                     + (f" | {', '.join(b['controls'])}" if b["controls"] else ""))
            for c, row in b["scores"].items():
                L.append(f"    {c:<4} BE {_num(row['be'])}  no BE {_num(row['no_be'])}  winner {row['winner']}")
    if d["iv_candidates"]:
        L.append("")
        L.append("== instrument candidates ==")
        for block in d["iv_candidates"]:
            L.append(f"edge {block['endogenous']} -> {block['response']}")
            for r in block["reports"]:
                extra = ""
                if r["required_controls"]:
                    extra += f"  controls: {', '.join(r['required_controls'])}"
                if r["g1_witness"]:
                    extra += f"  witness: {r['g1_witness']}"
                L.append(f"    {r['candidate']}: {r['verdict']}{extra}")
    if d["iv_tests"]:
        L.append("")
        L.append("== instrumented regressions ==")
        for t in d["iv_tests"]:
            rep = t["report"]
            L.append(f"{t['response']} on {t['endogenous']} instrumented by {t['instrument']}"
                     + (f" | {', '.join(t['controls'])}" if t["controls"] else ""))
            for label, key in (("OLS", "ols"), ("2SLS", "tsls")):
                f = rep[key]
                i = f["names"].index(t["endogenous"])
                L.append(f"    {label:<5} coef {_num(f['coef'][i])}  se {_num(f['se'][i])}")
            for test in rep["tests"]:
                L.append(f"    {test['name']:<22} {_num(test['statistic'])}  p {_num(test['p_value'])}")
            L.append(f"    first-stage F {_num(rep['first_stage_F'])}"
                     + ("  weak instrument" if rep["weak_instrument_flag"] else ""))
            L.append(f"    endogenous: {'yes' if t['endogeneity'] else 'no'}")
    if d["warnings"]:
        L.append("")
        L.append("== warnings ==")
        L.extend(d["warnings"])
    return "\n".join(L) + "\n"


# -- stages --------------------------------------------------------------------


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except MbivError as e:
        raise type(e)(f"[{name}] {e}") from None
    finally:
        timings[name] = time.perf_counter() - t0


def _child_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _load(cfg: PipelineConfig):
    if cfg.scenario is not None:
        sem = scenario(cfg.scenario, **cfg.scenario_params)
        ds = sample(sem, cfg.n, cfg.seed)
        stamps = {v: s for v, s in sem.dag.stamps.items() if v in ds.names}
        source = f"scenario {cfg.scenario}"
    else:
        sem = None
        ds = load_csv(cfg.data)
        stamps = {}
        source = str(cfg.data)
    stamps.update(cfg.stamps)
    if cfg.response not in ds.names:
        raise DataError(f"response column {cfg.response!r} not in data (columns: {', '.join(ds.names)})")
    for v in list(stamps) + list(cfg.latent) + list(cfg.log):
        if v not in ds.names:
            raise DataError(f"column {v!r} named in the config is not in the data")
    for a, b in cfg.forbid:
        for v in (a, b):
            if v not in ds.names:
                raise DataError(f"forbidden edge mentions unknown column {v!r}")
    return sem, ds, stamps, source


def _select_all(cfg: PipelineConfig, ds: Dataset, cands: list[str], seed_base: int) -> dict:
    y = ds.column(cfg.response)
    X = ds.matrix(cands)
    out = {}
    out["solar"] = solar(y, X, K=cfg.solar_K, subsample_fraction=cfg.solar_fraction, c=cfg.solar_c,
                         seed=_child_seed(cfg.seed, seed_base), names=cands)
    out["cv-lasso"] = cv_select(y, X, "lasso", folds=cfg.cv_folds, seed=_child_seed(cfg.seed, seed_base + 1),
                                names=cands, n_lambda=cfg.n_lambda)
    out["cv-en"] = cv_select(y, X, "elastic_net", folds=cfg.cv_folds, alphas=cfg.en_alphas,
                             seed=_child_seed(cfg.seed, seed_base + 1), names=cands, n_lambda=cfg.n_lambda)
    return out


def _bic_selection(ds: Dataset, target: str, preds: list[str]) -> list[str]:
    if not preds:
        return []
    steps = min(len(preds), ds.n - 2)
    path = lars_path(ds.column(target), ds.matrix(preds), max_steps=steps, names=preds)
    return sorted(path.selected_names(), key=preds.index)


def learn_graph(ds: Dataset, vertices: list[str], stamps: Mapping[str, int],
                forbid=(), latent=()) -> Dag:
    """Orient the Markov-blanket graph by timestamps.

    Each vertex is regressed (LARS, BIC-optimal prefix) on the vertices whose
    stamp is not later than its own. A selected earlier vertex becomes a
    parent; a selected vertex with an equal or missing stamp gives an
    undirected edge. Forbidden edges are never proposed.
    """
    forbid = set(map(tuple, forbid))
    directed, undirected = set(), set()
    for v in vertices:
        sv = stamps.get(v)
        preds = []
        for u in vertices:
            if u == v or (u, v) in forbid:
                continue
            su = stamps.get(u)
            if sv is not None and su is not None and su > sv:
                continue
            preds.append(u)
        for u in _bic_selection(ds, v, preds):
            su = stamps.get(u)
            if sv is not None and su is not None and su < sv:
                directed.add((u, v))
            elif (v, u) not in forbid:
                undirected.add(tuple(sorted((u, v))))
    st = {v: stamps[v] for v in vertices if v in stamps}
    return Dag(vertices, sorted(directed), sorted(undirected), st, [v for v in latent if v in vertices])


def _chains(g: Dag):
    for m in g.vertices:
        for a in sorted(g.parents(m)):
            for c in sorted(g.children(m)):
                if not {a, m, c} & g.latent:
                    yield a, m, c


def _mb_vertex_set(cfg, ds, cands, final_mb, warnings):
    y = cfg.response
    S = [y] + [v for v in cands if v in final_mb]
    if len(S) > cfg.subset_cap:
        raise BoundExceeded(f"Markov blanket of {y!r} has {len(S) - 1} members; subset cap is {cfg.subset_cap}")
    pool = [v for v in ds.names if v not in cfg.latent]
    extra = []
    for m in S[1:]:
        for u in _bic_selection(ds, m, [v for v in pool if v != m]):
            if u not in S and u not in extra:
                extra.append(u)
    room = cfg.subset_cap - len(S)
    if len(extra) > room:
        warnings.append(f"graph vertex set truncated to the subset cap {cfg.subset_cap}; dropped {extra[room:]}")
        extra = extra[:room]
    order = {v: i for i, v in enumerate(ds.names)}
    return sorted(S + extra, key=order.__getitem__)


def run_pipeline(cfg: PipelineConfig) -> PipelineReport:
    timings: dict[str, float] = {}
    warnings: list[str] = []
    y = cfg.response

    with _stage("ingest", timings):
        sem, ds0, stamps, source = _load(cfg)
        ds = standardize(ds0) if cfg.standardize else ds0
        logged = None
        if cfg.log:
            logged = log_transform(ds0, cfg.log)
            if cfg.standardize:
                logged = standardize(logged)
        for v in ds0.names:
            col = ds0.column(v)
            if ds0.n >= 3 and col.std() > 0 and abs(skewness(col)) > 2 and v not in cfg.log:
                warnings.append(f"|skewness| of {v!r} exceeds 2; consider a log transform")
        cands = [v for v in ds.names if v != y and v not in cfg.latent]
        summary = {"source": source, "n": ds.n, "p": ds.p, "columns": list(ds.names),
                   "logged_columns": list(cfg.log), "standardized": cfg.standardize}

    selections: dict[str, dict | None] = {"linear": None, "logged": None}
    with _stage("screen", timings):
        if cands and len(cands) >= ds.n / 2:
            scr = isis_bootstrap(ds.column(y), ds.matrix(cands), B=cfg.isis_B,
                                 inclusion_threshold=cfg.isis_threshold,
                                 seed=_child_seed(cfg.seed, 1), names=cands)
            selections["screen"] = {"isis": scr}
            cands = list(scr.selected)
            if not cands:
                warnings.append("screening kept no variables")

    with _stage("select", timings):
        if cands:
            selections["linear"] = _select_all(cfg, ds, cands, 10)
            if logged is not None:
                selections["logged"] = _select_all(cfg, logged, cands, 20)
        lin = selections["linear"]["solar"].selected if selections["linear"] else []
        if selections["logged"] is not None:
            lg = set(selections["logged"]["solar"].selected)
            if cfg.mb_rule == "intersection":
                mb = [v for v in lin if v in lg]
            else:
                mb = [v for v in cands if v in lg or v in lin]
        else:
            mb = list(lin)

    groups, rectified = [], None
    with _stage("rectify", timings):
        if mb:
            groups = [grouping_diagnostic(ds, v, cfg.grouping_cutoff, cands) for v in mb]
            groups = [gr for gr in groups if gr.members]
            base = SelectionResult("final-mb", list(cands), list(mb), {}, {"rule": cfg.mb_rule})
            rectified = rectify(base, groups)
            if cfg.rectify_mb:
                mb = [v for v in rectified.selected if v != y]

    meta = {
        "seed": cfg.seed,
        "versions": {"package": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    try:
        import scipy
        meta["versions"]["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover
        pass

    if not mb:
        return PipelineReport(cfg, summary, selections, [], groups, rectified, None, [], [], [], [],
                              "no selection", warnings, meta, timings)

    with _stage("orient", timings):
        if cfg.graph == "learn":
            S = _mb_vertex_set(cfg, ds, cands, mb, warnings)
            g = learn_graph(ds, S, stamps, cfg.forbid, cfg.latent)
        elif cfg.graph == "scenario":
            if sem is None:
                raise UsageError("graph = scenario needs a scenario input")
            g = sem.graph()
        else:
            try:
                g = parse_graph(Path(cfg.graph).read_text())
            except OSError as e:
                raise UsageError(f"cannot read graph {cfg.graph}: {e.strerror}") from None
        if y not in g.vertices:
            raise GraphError(f"response {y!r} is not a vertex of the graph")
        if not g.is_directed():
            warnings.append("graph has unoriented edges: " + ", ".join(f"{a}--{b}" for a, b in g.undirected_edges))

    simult = []
    with _stage("simultaneity", timings):
        sy = stamps.get(y)
        down = [w for w in g.vertices if w not in g.latent and w in ds.names and w != y
                and sy is not None and stamps.get(w) is not None and stamps[w] > sy]
        for k, w in enumerate(down):
            preds = [v for v in ds.names if v != w and v not in cfg.latent]
            r = solar(ds.column(w), ds.matrix(preds), K=cfg.solar_K, subsample_fraction=cfg.solar_fraction,
                      c=cfg.solar_c, seed=_child_seed(cfg.seed, 100 + k), names=preds)
            if y in r.selected:
                simult.append({"variable": w, "selected": list(r.selected),
                               "equation": f"{w} ~ " + " + ".join(r.selected)})

    backdoor = []
    with _stage("backdoor", timings):
        if g.is_directed():
            for a, m, c in _chains(g):
                if not all(v in ds.names for v in (a, m, c)):
                    continue
                ctrl = sorted(v for v in g.parents(c) if v not in (a, m) and v not in g.latent)
                backdoor.append(compare_backdoor(ds, a, m, c, ctrl))
                warnings.extend(f"backdoor {a}->{m}->{c}: {w}" for w in backdoor[-1].warnings)

    cand_blocks, iv_out = [], []
    with _stage("instruments", timings):
        if g.is_directed():
            targets = [(x, y) for x in sorted(g.parents(y)) if x not in g.latent]
            for s in simult:
                if g.has_edge(y, s["variable"]):
                    targets.append((y, s["variable"]))
            for x, t in targets:
                reps = iv_candidates(g, x, t, subset_cap=cfg.subset_cap)
                cand_blocks.append({"endogenous": x, "response": t, "reports": [r.to_dict() for r in reps]})
                for r in reps:
                    if r.verdict not in ("valid", "conditional"):
                        continue
                    z = r.candidate
                    exog = [v for v in sorted(g.parents(t) | set(r.required_controls))
                            if v not in (x, z) and v not in g.latent]
                    if not all(v in ds.names for v in exog + [z, x, t]):
                        continue
                    rep = endogeneity_tests(
                        ds.column(t), ds.matrix(exog) if exog else None, ds.column(x), ds.column(z),
                        exog_names=exog, endog_name=x, instrument_names=[z], response_name=t,
                    )
                    if rep.weak_instrument_flag:
                        warnings.append(f"{z} is a weak instrument for {x} (first-stage F {rep.first_stage_F:.3g})")
                    iv_out.append({
                        "response": t, "endogenous": x, "instrument": z, "controls": exog,
                        "verdict": r.verdict,
                        "endogeneity": bool(rep.test("durbin").p_value < ENDOGENEITY_ALPHA),
                        "report": rep.to_dict(),
                    })
        else:
            warnings.append("instrument stage skipped: graph not fully oriented")

    verdict = "ok"
    if any(t["endogeneity"] for t in iv_out):
        verdict = "endogeneity detected"
    rep = PipelineReport(cfg, summary, selections, mb, groups, rectified, g, simult, backdoor,
                         cand_blocks, iv_out, verdict, warnings, meta, timings)
    if cfg.out:
        rep.write(cfg.out)
    return rep
