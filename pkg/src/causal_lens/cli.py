"""Command-line front end: ``causal-lens {generate,reconstruct,compare,plotdata,selftest}``.

Exit codes: 0 ok, 2 configuration, 3 model, 4 data, 5 reconstruction
conflict, 6 I/O. CAUSAL_LENS_THREADS caps BLAS threads (applied at package
import).
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import warnings
from dataclasses import dataclass, field

# -- configuration -------------------------------------------------------------

_BOOL_KEYS = {"blind", "no_weingarten", "data_only", "no_hypothesis_check", "quiet"}


def read_config(path):
    """``key=value`` lines; '#' starts a comment. Keys use flag names."""
    from .errors import ConfigError, IOFailure

    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    out = {}
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.lstrip("-").replace("-", "_")] = v
    return out


def _apply_config(parser, sub, argv):
    """Parse argv; values from --config become defaults so flags win."""
    from .errors import ConfigError

    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    cfg = read_config(args.config)
    known = {a.dest for a in sub[args.command]._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for k in _BOOL_KEYS & set(cfg):
        val = cfg[k].lower()
        if val not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"config key {k} needs a boolean, got {cfg[k]!r}")
        cfg[k] = val in ("true", "1", "yes")
    sub[args.command].set_defaults(**cfg)
    return parser.parse_args(argv)


@dataclass
class RunConfig:
    """Validated run settings shared by the subcommands."""

    model: str = "minkowski-block"
    n: int = 3
    model_params: dict = field(default_factory=dict)
    seed: int = 0
    points: int = 10
    fan: int = 16
    fan_light: int | None = None
    ladder: int = 8
    plain: int = 4
    kinds: tuple = ("time_probe",)
    blind: bool = False
    weingarten: bool = True
    chart_aware: bool = True
    tolerances: dict = field(default_factory=dict)

    def validate(self):
        from .errors import ConfigError

        for name in ("points", "fan", "ladder"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fan_light is not None and self.fan_light < 1:
            raise ConfigError("fan_light must be >= 1")
        if self.plain < 0:
            raise ConfigError("plain must be >= 0")
        for k, v in self.tolerances.items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be > 0")
        return self

    def build_model(self):
        from .models import make_model

        return make_model(self.model, n=self.n, **self.model_params)


def _model_params(args):
    p = {}
    for key in ("T", "amp", "axis", "cap"):
        val = getattr(args, key, None)
        if val is not None:
            p[key] = val
    return p


def _parse_params(items):
    from .errors import ConfigError

    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"model parameter {item!r} is not key=value")
        k, v = item.split("=", 1)
        try:
            out[k] = int(v) if k == "axis" else float(v)
        except ValueError as exc:
            raise ConfigError(f"model parameter {k} needs a number, got {v!r}") from exc
    return out


# -- output helpers ----------------------------------------------------------


def _write_lines(path, objs):
    from .errors import IOFailure

    text = "".join(json.dumps(o, allow_nan=False, sort_keys=False) + "\n" for o in objs)
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def _floats(a):
    import numpy as np

    return None if a is None else np.asarray(a, dtype=float).tolist()


def _vec(bv):
    return {"x": _floats(bv.x), "v": _floats(bv.v)}


# -- generate ----------------------------------------------------------------------


def cmd_generate(args):
    from .data import GenConfig, count_discards, export, generate

    rc = RunConfig(
        model=args.model, n=args.n, model_params=_model_params(args), seed=args.seed, points=args.points,
        fan=args.fan, fan_light=args.fan_light, ladder=args.ladder, plain=args.plain,
        kinds=tuple(k.strip() for k in args.kinds.split(",") if k.strip()), blind=args.blind,
        weingarten=not args.no_weingarten,
    ).validate()
    model = rc.build_model()
    cfg = GenConfig(
        points=rc.points, fan=rc.fan, fan_light=rc.fan_light, ladder=rc.ladder, plain=rc.plain,
        kinds=rc.kinds, seed=rc.seed, weingarten=rc.weingarten,
    )
    with count_discards() as box:
        ds, _ = generate(model, cfg)
    if args.output in (None, "-"):
        from .data import dumps

        sys.stdout.write(dumps(ds, rc.blind))
    else:
        export(ds, args.output, rc.blind)
    counts = {}
    for r in ds.records:
        counts[r.kind] = counts.get(r.kind, 0) + 1
    summary = ", ".join(f"{k}={counts.get(k, 0)}" for k in cfg.kinds)
    print(f"generated {summary}; discarded nontransverse rays={box['discarded']}", file=sys.stderr)
    return 0


# -- reconstruct -------------------------------------------------------------


def _group_lines(res, index):
    out = []
    for pt in res.points:
        d = {
            "kind": "group",
            "label": pt.label,
            "size": len(pt.members),
            "fitted_g": _floats(pt.fitted_g),
            "residual": pt.residual,
            "x": _floats(pt.x),
        }
        if pt.provenance:
            d["point_ids"] = sorted(pt.provenance)
        out.append(d)
    for c in res.conflicts:
        out.append({"kind": "conflict", "groups": list(c.groups), "jaccard": c.jaccard, "reason": c.reason})
    return out


def _reconstruct_time_probe(model, records, args):
    from .timeprobe import build_index, group_points

    index = build_index(model, records, tol=args.match_tol)
    res = group_points(index, model, chart_aware=not args.data_only, knn=args.knn, fit=False)
    if not args.data_only:
        from .timeprobe import fit_metric
        from .errors import InconsistentFanError, UnderdeterminedError

        for pt in res.points:
            try:
                pt.fitted_g, pt.residual = fit_metric(pt.tangent_fan, args.fit_tol)
            except (UnderdeterminedError, InconsistentFanError) as exc:
                warnings.warn(f"group {pt.label}: {exc}", RuntimeWarning)
                pt.fitted_g, pt.residual = None, None
    for c in res.conflicts:
        warnings.warn(f"groups {c.groups} overlap (Jaccard {c.jaccard:.2f}): {c.reason}", RuntimeWarning)
    return _group_lines(res, index), len(res.points)


def _reconstruct_scatter(model, records, args):
    from .cliques import check_hypotheses, relation_graph, maximal_cliques

    if not args.no_hypothesis_check:
        check_hypotheses(model)
    unbroken = [r for r in records if r.sub == "unbroken"]
    broken = [r for r in records if r.sub == "broken"]
    owner = {id(r.xi): r.point_id for r in unbroken + broken}
    adj, rep = relation_graph(model, unbroken, broken, args.match_tol)
    cliques = [c for c in maximal_cliques(adj, args.clique_budget) if len(c) >= 2]
    out = []
    for k, c in enumerate(cliques):
        d = {"kind": "shadow", "shadow_id": k, "source": "clique", "size": len(c), "vectors": [_vec(rep[i]) for i in c]}
        ids = sorted({owner[id(rep[i])] for i in c if owner.get(id(rep[i])) is not None})
        if ids:
            d["point_ids"] = ids
        out.append(d)
    return out, len(cliques)


def _reconstruct_shadow(model, records, args):
    """Apex of each shadow sample from its vectors and Weingarten maps."""
    import numpy as np

    from .errors import DataError
    from .skyshadow import riccati_blowup_batch

    out = []
    for k, sh in enumerate(records):
        x, v = sh.arrays()
        if sh.b is None or any(b is None for b in sh.b):
            raise DataError(f"shadow record {k} lacks Weingarten maps; regenerate without --no-weingarten")
        res = riccati_blowup_batch(model, x, v, np.array(sh.b, dtype=float))
        if not res.ok.all():
            from .errors import NoApexError

            raise NoApexError(f"shadow record {k}: {int((~res.ok).sum())} vectors reach the boundary without an apex")
        E = model.embed(res.x)
        spread = float(np.max(np.linalg.norm(E - E.mean(0), axis=1)))
        i = int(np.argmin(np.linalg.norm(E - E.mean(0), axis=1)))
        d = {"kind": "apex", "shadow_id": k, "x": _floats(res.x[i]), "spread": spread, "size": len(x)}
        if sh.point_id is not None:
            d["point_ids"] = [sh.point_id]
        out.append(d)
    return out, len(out)


def cmd_reconstruct(args):
    from .data import Dataset, dumps, load
    from .errors import DataError
    from .models import make_model

    ds = load(args.data)
    model = ds.model
    if args.model is not None:
        override = make_model(args.model, n=ds.header["n"], **_parse_params(args.model_param))
        if override.n != model.n:
            raise DataError("model dimension does not match the data file")
        model = override
    RunConfig(tolerances={"match_tol": args.match_tol, "fit_tol": args.fit_tol,
                          "ladder_tol": args.ladder_tol, "link_tol": args.link_tol}).validate()
    kinds = set(ds.kinds())
    if {"time_probe", "lens"} <= kinds:
        raise DataError("file mixes time_probe and lens records; reconstruct them separately")
    header = {"kind": "report", "model": model.describe(), "n": model.n, "source_kinds": sorted(kinds)}
    lines = [header]
    summary = []
    if "lens" in kinds:
        from .timeprobe import lens_to_time_probe

        tp = lens_to_time_probe(
            model, ds.of_kind("lens"), ladder_tol=args.ladder_tol, link_tol=args.link_tol, tol=args.match_tol
        )
        if args.time_probe_out:
            from .errors import IOFailure

            derived = Dataset(dict(ds.header), tp)
            try:
                with open(args.time_probe_out, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(dumps(derived, blind=True))
            except OSError as exc:
                raise IOFailure(f"cannot write {args.time_probe_out}: {exc}") from exc
        for r in tp:
            r.point_id = None
        g, k = _reconstruct_time_probe(model, tp, args)
        lines += g
        summary.append(f"lens limits={len(tp)} groups={k}")
    if "time_probe" in kinds:
        g, k = _reconstruct_time_probe(model, ds.of_kind("time_probe"), args)
        lines += g
        summary.append(f"groups={k}")
    if "scatter" in kinds:
        s, k = _reconstruct_scatter(model, ds.of_kind("scatter"), args)
        lines += s
        summary.append(f"cliques={k}")
    if "shadow" in kinds:
        s, k = _reconstruct_shadow(model, ds.of_kind("shadow"), args)
        lines += s
        summary.append(f"apexes={k}")
    _write_lines(args.output, lines)
    print("reconstructed " + "; ".join(summary), file=sys.stderr)
    return 0


# -- compare -----------------------------------------------------------------


def _shadow_dicts(records):
    import numpy as np

    from .errors import DataError

    out = []
    for k, sh in enumerate(records):
        if sh.b is None or any(b is None for b in sh.b):
            raise DataError(f"shadow record {k} lacks Weingarten maps")
        x, v = sh.arrays()
        out.append({"x": x, "v": v, "b": np.array(sh.b, dtype=float)})
    return out


def cmd_compare(args):
    import numpy as np

    from .data import GenConfig, gen_sky_shadows, load, sample_interior
    from .errors import DataError, FiberDisagreementError
    from .models import make_model
    from .skyshadow import build_conformal_map

    ds = load(args.data)
    model1 = ds.model
    shadows1 = ds.of_kind("shadow")
    if not shadows1:
        raise DataError("compare needs shadow records")
    model2 = make_model(args.model2, n=ds.header["n"], **_parse_params(args.model2_param))
    RunConfig(tolerances={"map_tol": args.map_tol, "match_tol": args.match_tol}).validate()
    if args.data2:
        shadows2 = load(args.data2).of_kind("shadow")
    else:
        gen = ds.header.get("gen")
        if not gen:
            raise DataError("data header lacks generation parameters; pass --data2")
        cfg = GenConfig(points=gen["points"], fan=gen["fan"], fan_light=gen.get("fan_light"), seed=ds.header["seed"],
                        margin=gen.get("margin", 0.05))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pts = sample_interior(model2, cfg.points, cfg.seed, cfg.margin)
            shadows2 = gen_sky_shadows(model2, pts, cfg.light, cfg.seed)
    header = {"kind": "report", "model1": model1.describe(), "model2": model2.describe(), "map_tol": args.map_tol}
    try:
        pairs = build_conformal_map(
            model1, model2, _shadow_dicts(shadows1), _shadow_dicts(shadows2), args.map_tol, args.match_tol
        )
    except FiberDisagreementError as exc:
        diag = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in exc.diagnostics.items()}
        _write_lines(args.output, [header, {"kind": "summary", "status": "FAIL", "reason": str(exc), "diagnostics": diag}])
        print(f"FAIL: {exc}", file=sys.stderr)
        raise
    lines = [header]
    for p in pairs:
        lines.append({"kind": "pair", "p1": _floats(p.p1), "p2": _floats(p.p2), "factor": p.factor,
                      "spread": p.spread, "factor_spread": p.factor_spread})
    fac = np.array([p.factor for p in pairs])
    spread = max((p.spread for p in pairs), default=0.0)
    lines.append({"kind": "summary", "status": "PASS", "pairs": len(pairs), "factor_mean": float(fac.mean()),
                  "factor_min": float(fac.min()), "factor_max": float(fac.max()), "max_spread": spread})
    _write_lines(args.output, lines)
    print(f"PASS: {len(pairs)} matched points, max spread {spread:.3g} <= {args.map_tol:g}", file=sys.stderr)
    return 0


# -- plotdata ----------------------------------------------------------------

PLOT_KINDS = ("group", "shadow", "pair", "apex")


def report_to_rows(lines, kind):
    """Flatten report lines of one kind into (header, rows)."""
    from .errors import ParseError

    recs = [(i, d) for i, d in lines if d.get("kind") == kind]
    if not recs:
        raise ParseError(f"report has no {kind!r} lines", 1)
    try:
        if kind == "group":
            n = len(next(d["x"] for _, d in recs if d.get("x") is not None))
            head = ["label", "size"] + [f"x{k + 1}" for k in range(n)]
            rows = [[d["label"], d["size"]] + (d["x"] or [""] * n) for _, d in recs]
        elif kind == "apex":
            n = len(recs[0][1]["x"])
            head = ["shadow_id", "spread"] + [f"x{k + 1}" for k in range(n)]
            rows = [[d["shadow_id"], d["spread"]] + d["x"] for _, d in recs]
        elif kind == "shadow":
            n = len(recs[0][1]["vectors"][0]["x"])
            head = ["shadow_id"] + [f"x{k + 1}" for k in range(n)] + [f"v{k + 1}" for k in range(n)]
            rows = [[d["shadow_id"]] + v["x"] + v["v"] for _, d in recs for v in d["vectors"]]
        else:
            n = len(recs[0][1]["p1"])
            head = [f"p1_{k + 1}" for k in range(n)] + [f"p2_{k + 1}" for k in range(n)] + ["factor"]
            rows = [d["p1"] + d["p2"] + [d["factor"]] for _, d in recs]
    except (KeyError, TypeError, IndexError, StopIteration) as exc:
        raise ParseError(f"{kind} lines do not match the report schema ({exc!r})", recs[0][0]) from exc
    return head, rows


def cmd_plotdata(args):
    from .errors import IOFailure, ParseError

    try:
        with open(args.report, encoding="utf-8") as fh:
            raw = fh.read().splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read {args.report}: {exc}") from exc
    lines = []
    for i, s in enumerate(raw, start=1):
        try:
            d = json.loads(s)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", i) from exc
        if not isinstance(d, dict) or "kind" not in d:
            raise ParseError("report line lacks 'kind'", i)
        lines.append((i, d))
    kind = args.kind
    if kind is None:
        present = sorted({d["kind"] for _, d in lines} & set(PLOT_KINDS))
        if len(present) != 1:
            raise ParseError(f"report holds {present or 'no plottable'} lines; choose one with --kind", 1)
        kind = present[0]
    head, rows = report_to_rows(lines, kind)
    try:
        fh = sys.stdout if args.output in (None, "-") else open(args.output, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise IOFailure(f"cannot write {args.output}: {exc}") from exc
    with fh if fh is not sys.stdout else contextlib.nullcontext(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        w.writerows(rows)
    return 0


# -- selftest ----------------------------------------------------------------


def cmd_selftest(args):
    from .selftest import run

    results = run(args.only, stream=print)
    failed = [r for r in results if not r.ok]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    if not results:
        from .errors import ConfigError

        raise ConfigError("no checks selected")
    return 5 if failed else 0


# -- parser ------------------------------------------------------------------


def build_parser():
    from .cliques import NODE_BUDGET
    from .matching import MATCH_TOL
    from .models import MODEL_NAMES
    from .skyshadow import MAP_TOL
    from .timeprobe import FIT_TOL, KNN, LADDER_TOL, LINK_TOL

    p = argparse.ArgumentParser(prog="causal-lens", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="show warnings from the library")
    sp = p.add_subparsers(dest="command", required=True)
    sub = {}

    g = sub["generate"] = sp.add_parser("generate", help="generate boundary data from hidden interior points")
    g.add_argument("--config", help="key=value file; command-line flags take precedence")
    g.add_argument("--model", default="minkowski-block", choices=MODEL_NAMES)
    g.add_argument("--n", type=int, default=3, help="dimension")
    g.add_argument("--T", type=float, help="cylinder height")
    g.add_argument("--amp", type=float, help="conformal factor slope")
    g.add_argument("--axis", type=int, help="conformal factor axis")
    g.add_argument("--cap", type=float, help="boundary function cap")
    g.add_argument("--points", type=int, default=10)
    g.add_argument("--fan", type=int, default=16, help="timelike fan size per point")
    g.add_argument("--fan-light", type=int, help="lightlike fan size per point (default: --fan)")
    g.add_argument("--ladder", type=int, default=8, help="lens approach ladder depth")
    g.add_argument("--plain", type=int, default=4, help="plain timelike second legs per lens point")
    g.add_argument("--kinds", default="time_probe", help="comma list of time_probe,lens,scatter,shadow")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--blind", action="store_true", help="strip provenance ids and ladder indices")
    g.add_argument("--no-weingarten", action="store_true", help="omit Weingarten maps on shadow vectors")
    g.add_argument("-o", "--output", help="output file (default stdout)")
    g.set_defaults(func=cmd_generate)

    r = sub["reconstruct"] = sp.add_parser("reconstruct", help="run the reconstruction pipelines on a data file")
    r.add_argument("data")
    r.add_argument("--config")
    r.add_argument("--model", choices=MODEL_NAMES, help="override the model named in the header")
    r.add_argument("--model-param", action="append", metavar="KEY=VALUE")
    r.add_argument("--match-tol", type=float, default=MATCH_TOL)
    r.add_argument("--fit-tol", type=float, default=FIT_TOL)
    r.add_argument("--ladder-tol", type=float, default=LADDER_TOL)
    r.add_argument("--link-tol", type=float, default=LINK_TOL)
    r.add_argument("--knn", type=int, default=KNN)
    r.add_argument("--clique-budget", type=int, default=NODE_BUDGET)
    r.add_argument("--data-only", action="store_true", help="group without chart tangents or metric fits")
    r.add_argument("--no-hypothesis-check", action="store_true", help="skip the refocusing check for scatter data")
    r.add_argument("--time-probe-out", help="write time-probe triples recovered from lens data")
    r.add_argument("-o", "--output", help="report file (default stdout)")
    r.set_defaults(func=cmd_reconstruct)

    c = sub["compare"] = sp.add_parser("compare", help="build the conformal map between two models")
    c.add_argument("data")
    c.add_argument("--config")
    c.add_argument("--model2", required=True, choices=MODEL_NAMES)
    c.add_argument("--model2-param", action="append", metavar="KEY=VALUE")
    c.add_argument("--data2", help="shadow file of the second model (default: regenerate from the header)")
    c.add_argument("--map-tol", type=float, default=MAP_TOL)
    c.add_argument("--match-tol", type=float, default=MATCH_TOL)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_compare)

    q = sub["plotdata"] = sp.add_parser("plotdata", help="flatten a report into CSV")
    q.add_argument("report")
    q.add_argument("--kind", choices=PLOT_KINDS)
    q.add_argument("--config")
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_plotdata)

    s = sub["selftest"] = sp.add_parser("selftest", help="run the invariant suites")
    s.add_argument("--only", action="append", help="substring filter on check names")
    s.add_argument("--config")
    s.set_defaults(func=cmd_selftest)
    return p, sub


def main(argv=None):
    from .errors import CausalLensError

    try:
        parser, sub = build_parser()
        args = _apply_config(parser, sub, argv)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except CausalLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
