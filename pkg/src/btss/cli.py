"""``btss`` command-line entry point.

Exit status: 0 on success, 1 when an input fails validation or a stage
fails, 2 on usage errors. Every output file is written to a temporary
sibling and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analytics import (au_type_table, crosstab, fit_lognormal, threshold_summary)
from .config import ConfigError, RunConfig, load_config
from .gaze import GazeGeometry, classify_gaze, pattern_durations
from .render import document_json, export_progression, render_svg
from .segmentation import SegmentHierarchy, au_table, segment
from .session import (SessionFormatError, parse_session, serialize_alignment,
                      serialize_session, validate_session)
from .simulator import (GeneratorParams, default_params, simulate_corpus,
                        simulate_with_trace)
from .states import HofRules, detect_phases, drafting_end, label_hof
from .styles import (FEATURES, RawFeatureStats, constrained_kmeans, population_stats,
                     relative_icv, session_features, StyleFeatureVector)
from .thresholds import ThresholdError, ThresholdSet, derive_thresholds, exclusion_reason

log = logging.getLogger("btss")


class CliError(Exception):
    """A failure reported to the user with exit status 1."""


# -- output helpers -------------------------------------------------------------

def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(v)


def tsv(columns, rows) -> str:
    lines = ["\t".join(columns)]
    lines += ["\t".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def dump_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n"


def read_tsv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CliError(f"{path}: empty file")
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]


def session_files(path) -> list[Path]:
    """A single session file, or the ``*.tsv`` session files of a directory."""
    p = Path(path)
    if p.is_file():
        return [p]
    if p.is_dir():
        files = sorted(f for f in p.glob("*.tsv") if not f.name.endswith(".align.tsv"))
        if not files:
            raise CliError(f"{p}: no session files (*.tsv) found")
        return files
    raise CliError(f"{p}: no such file or directory")


# -- per-session processing -----------------------------------------------------

@dataclass
class SessionResult:
    id: str
    path: str
    status: str = "ok"
    message: str = ""
    translator: str = ""
    session: object = None
    thresholds: ThresholdSet | None = None
    hierarchy: SegmentHierarchy | None = None
    runs: list = field(default_factory=list)
    spans: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    drafting_approximated: bool = False
    features: RawFeatureStats | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def process_session(path: str, cfg: dict, stage: str = "label",
                    fixed: tuple | None = None) -> SessionResult:
    """Run one session through validation, thresholds, segmentation and
    (for ``stage='label'``) gaze, HOF and phase labelling.

    ``fixed`` = (kbi_ms, pub_ms) bypasses threshold derivation and filtering.
    """
    res = SessionResult(id=Path(path).stem, path=path)
    try:
        s = parse_session(path)
    except (OSError, SessionFormatError) as e:
        res.status, res.message = "invalid", str(e)
        return res
    res.id = s.id
    res.translator = s.translator or s.id
    res.session = s
    diags = validate_session(s)
    if diags:
        res.status = "invalid"
        res.message = "; ".join(str(d) for d in diags[:5])
        res.diagnostics = [str(d) for d in diags]
        return res
    try:
        if fixed is not None:
            t = ThresholdSet.from_values(*fixed)
        else:
            t = derive_thresholds(s, cfg["include_deletions"])
    except ThresholdError as e:
        res.status, res.message = "no-thresholds", str(e)
        return res
    res.thresholds = t
    if fixed is None and cfg["filter"]:
        reason = exclusion_reason(t, cfg["max_kbi"], cfg["max_pub"])
        if reason:
            res.status = f"excluded:{reason}"
            return res
    if stage == "thresholds":
        return res
    h = segment(s, t)
    res.hierarchy = h
    res.features = session_features(h, res.translator)
    if stage == "segment":
        return res
    geom = GazeGeometry(**{k: cfg[k] for k in GazeGeometry.keys()})
    gaze_diags = []
    res.runs = classify_gaze(h.aus, geom, gaze_diags)
    res.diagnostics = [str(d) for d in gaze_diags]
    res.spans = label_hof(h, res.runs, HofRules(cfg["theta_o"], cfg["theta_h"], cfg["theta_p"]))
    res.phases = detect_phases(s, h)
    res.drafting_approximated = drafting_end(s)[1]
    return res


def _process_star(args):
    return process_session(*args)


def run_sessions(paths, cfg: RunConfig, stage: str, jobs: int = 1,
                 fixed: tuple | None = None) -> list[SessionResult]:
    """Session-level fan-out; results come back sorted by session id."""
    semantic = cfg.semantic_dict()
    work = [(str(p), semantic, stage, fixed) for p in paths]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_process_star, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_process_star(w) for w in work]
    ids = [r.id for r in results]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise CliError(f"duplicate session ids: {', '.join(dupes)}")
    return sorted(results, key=lambda r: r.id)


def _report(results) -> int:
    bad = 0
    for r in results:
        if r.status in ("invalid", "no-thresholds"):
            bad += 1
            print(f"btss: {r.path}: session {r.id}: {r.status}: {r.message}", file=sys.stderr)
    return 1 if bad else 0


# -- serialisation of per-session products --------------------------------------

def label_fields(r: SessionResult) -> dict:
    return {
        "gaze_runs": [{"au": g.au_id, "pattern": g.pattern, "start": g.start, "dur": g.dur,
                       "n_fix": g.n_fix, "window": g.window} for g in r.runs],
        "hof": [{"state": s.state, "start": s.start, "dur": s.dur, "pu_ids": list(s.pu_ids),
                 "pause_ids": list(s.pause_ids)} for s in r.spans],
        "phases": [{"phase": p.kind, "start": p.start, "end": p.end} for p in r.phases],
        "drafting_end_approximated": r.drafting_approximated,
        "diagnostics": r.diagnostics,
    }


def segments_json(r: SessionResult, labelled: bool) -> str:
    d = r.hierarchy.to_dict()
    if labelled:
        d.update(label_fields(r))
    return dump_json(d)


def au_table_tsv(r: SessionResult) -> str:
    cols, rows = au_table(r.hierarchy, pattern_durations(r.runs) if r.runs else None)
    return tsv(cols, rows)


THRESHOLD_COLUMNS = ("session", "kbi_ms", "pub_ms", "kept", "reason", "translator",
                     "median_within_iki", "median_between_iki", "n_within", "n_between")


def thresholds_tsv(results) -> str:
    rows = []
    for r in results:
        t = r.thresholds
        reason = r.status.split(":", 1)[-1] if not r.ok else ""
        if r.status in ("invalid", "no-thresholds"):
            reason = r.status
        rows.append([r.id, t.kbi_ms if t else None, t.pub_ms if t else None, r.ok, reason,
                     r.translator] +
                    ([t.median_within_iki, t.median_between_iki, t.n_within, t.n_between]
                     if t else [None] * 4))
    return tsv(THRESHOLD_COLUMNS, rows)


FEATURE_COLUMNS = ("session", "translator", "n_typing", "ins_mean", "ins_std", "del_mean",
                   "del_std", "dur_mean", "dur_std", "kbi", "pub", "degenerate") + \
    tuple(f"rel_{f}" for f in FEATURES)


def features_tsv(results) -> tuple[str, list[StyleFeatureVector]]:
    raws = [r.features for r in results if r.ok and r.features is not None]
    if not raws:
        return tsv(FEATURE_COLUMNS, []), []
    pop = population_stats(raws)
    vecs = [relative_icv(x, pop) for x in raws]
    rows = [[x.session_id, x.translator, x.n_typing, x.ins_mean, x.ins_std, x.del_mean,
             x.del_std, x.dur_mean, x.dur_std, x.kbi, x.pub, x.degenerate, *v.rel_icv]
            for x, v in zip(raws, vecs)]
    return tsv(FEATURE_COLUMNS, rows), vecs


def cluster_outputs(vecs, k: int, seed: int) -> dict[str, str]:
    assignments, km = constrained_kmeans(vecs, k=k, seed=seed)
    styles = tsv(("session", "translator", "cluster", "label"),
                 [[a.session_id, a.translator, a.cluster, a.label] for a in assignments])
    label_of = {a.cluster: a.label for a in assignments}
    cents = tsv(("cluster", "label", "n_sessions") + FEATURES,
                [[c, label_of.get(c, ""), int((km.labels_ == c).sum()),
                  *map(float, km.cluster_centers_[c])] for c in range(k)])
    return {"styles.tsv": styles, "centroids.tsv": cents}


def analyze_outputs(results) -> dict[str, str]:
    ok = [r for r in results if r.ok and r.hierarchy is not None]
    if not ok:
        raise CliError("no analysable sessions")
    hs = [r.hierarchy for r in ok]
    pds = [pattern_durations(r.runs if r.runs else classify_gaze(r.hierarchy.aus)) for r in ok]
    table = au_type_table(hs, pds)
    out = {"au_types.tsv": tsv(table.COLUMNS, table.as_rows())}

    summ = threshold_summary(r.thresholds for r in ok)
    out["thresholds_summary.tsv"] = tsv(
        ("measure", "n", "mean", "min", "median", "max", "std"),
        [[k, v.n, v.mean, v.min, v.median, v.max, v.std] for k, v in summ.items()])

    rows = []
    labelled = [(r.hierarchy, r.spans, r.phases) for r in ok if r.spans]
    if labelled:
        for name, tab in zip(("hof_by_au_type", "phase_by_hof"), crosstab(labelled)):
            props = tab.proportions()
            for row in tab.rows:
                for col in tab.cols:
                    d = tab.duration_summary(row, col)
                    rows.append([name, row, col, tab.counts.get((row, col), 0),
                                 props[row][col], d.mean if d else None,
                                 d.median if d else None])
    out["crosstabs.tsv"] = tsv(("table", "row", "col", "count", "proportion",
                                "dur_mean", "dur_median"), rows)

    fit_rows = []

    def add_fits(scope, items):
        groups = {"au_dur": [], "kbi_pause": [], "pub_pause": [], "dur_L": [], "dur_R": [],
                  "dur_S": []}
        for r, pd in items:
            h = r.hierarchy
            groups["au_dur"] += [a.dur for a in h.aus]
            groups["kbi_pause"] += [p.dur for p in h.pauses if p.kind == "KBI"]
            groups["pub_pause"] += [p.dur for p in h.pauses if p.kind == "PUB"]
            for lrs in pd.values():
                for name, v in zip(("dur_L", "dur_R", "dur_S"), lrs):
                    if v > 1:
                        groups[name].append(v)
        for name, vals in groups.items():
            vals = [v for v in vals if v > 0]
            if len(vals) < 2:
                fit_rows.append([scope, name, len(vals), None, None, None])
                continue
            f = fit_lognormal(vals)
            fit_rows.append([scope, name, f.n, f.mu, f.sigma, f.degenerate])

    add_fits("population", list(zip(ok, pds)))
    for r, pd in zip(ok, pds):
        add_fits(r.id, [(r, pd)])
    out["fits.tsv"] = tsv(("scope", "measure", "n", "mu", "sigma", "degenerate"), fit_rows)
    return out


# -- subcommands -------------------------------------------------------------------

def _config(args) -> RunConfig:
    overrides = {"input": getattr(args, "input", None), "output": getattr(args, "output", None),
                 "seed": getattr(args, "seed", None), "k": getattr(args, "k", None)}
    return load_config(getattr(args, "config", None), overrides)


def _fixed(args):
    if getattr(args, "kbi", None) is None and getattr(args, "pub", None) is None:
        return None
    if args.kbi is None or args.pub is None:
        raise CliError("--kbi and --pub must be given together")
    return (args.kbi, args.pub)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    rows = []
    status = 0
    for p in session_files(cfg.input):
        try:
            s = parse_session(p)
        except SessionFormatError as e:
            rows.append([p.stem, p.name, "invalid", str(e)])
            print(f"btss: {p}: {e}", file=sys.stderr)
            status = 1
            continue
        diags = validate_session(s)
        if diags:
            rows.append([s.id, p.name, "invalid", "; ".join(str(d) for d in diags)])
            print(f"btss: {p}: session {s.id}: {len(diags)} validation error(s)",
                  file=sys.stderr)
            status = 1
            continue
        write_atomic(out / f"{s.id}.tsv", serialize_session(s))
        if s.alignment:
            write_atomic(out / f"{s.id}.align.tsv", serialize_alignment(s.alignment))
        rows.append([s.id, p.name, "ok", ""])
    rows.sort(key=lambda r: r[0])
    write_atomic(out / "ingest.tsv", tsv(("session", "file", "status", "message"), rows))
    return status


def cmd_thresholds(args) -> int:
    cfg = _config(args)
    results = run_sessions(session_files(cfg.input), cfg, "thresholds", args.jobs)
    write_atomic(Path(cfg.output) / "thresholds.tsv", thresholds_tsv(results))
    return _report(results)


def _per_session_dir(cfg: RunConfig, r: SessionResult) -> Path:
    out = Path(cfg.output)
    return out if Path(cfg.input).is_file() else out / r.id


def cmd_segment(args) -> int:
    cfg = _config(args)
    results = run_sessions(session_files(cfg.input), cfg, "segment", args.jobs, _fixed(args))
    for r in results:
        if r.hierarchy is not None:
            d = _per_session_dir(cfg, r)
            write_atomic(d / "segments.json", segments_json(r, labelled=False))
            write_atomic(d / "au_table.tsv", au_table_tsv(r))
    return _report(results)


def cmd_label(args) -> int:
    cfg = _config(args)
    results = run_sessions(session_files(cfg.input), cfg, "label", args.jobs, _fixed(args))
    for r in results:
        if r.hierarchy is not None:
            d = _per_session_dir(cfg, r)
            write_atomic(d / "segments.json", segments_json(r, labelled=True))
            write_atomic(d / "au_table.tsv", au_table_tsv(r))
    return _report(results)


def cmd_features(args) -> int:
    cfg = _config(args)
    results = run_sessions(session_files(cfg.input), cfg, "segment", args.jobs)
    text, _ = features_tsv(results)
    write_atomic(Path(cfg.output) / "features.tsv", text)
    return _report(results)


def cmd_cluster(args) -> int:
    cfg = _config(args)
    rows = read_tsv(args.features)
    try:
        vecs = [StyleFeatureVector(r["session"], r["translator"],
                                   tuple(float(r[f"rel_{f}"]) for f in FEATURES)) for r in rows]
    except (KeyError, ValueError) as e:
        raise CliError(f"{args.features}: malformed features table ({e})") from None
    try:
        outs = cluster_outputs(vecs, cfg.k, cfg.effective_seed())
    except ValueError as e:
        raise CliError(str(e)) from None
    for name, text in outs.items():
        write_atomic(Path(cfg.output) / name, text)
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    results = run_sessions(session_files(cfg.input), cfg, "label", args.jobs)
    for name, text in analyze_outputs(results).items():
        write_atomic(Path(cfg.output) / name, text)
    return _report(results)


def cmd_render(args) -> int:
    cfg = _config(args)
    paths = session_files(cfg.input)
    if len(paths) != 1:
        raise CliError("render takes a single session file")
    [r] = run_sessions(paths, cfg, "label", 1, _fixed(args))
    if r.hierarchy is None:
        return _report([r])
    doc = export_progression(r.hierarchy, tuple(args.window) if args.window else None,
                             r.session, r.spans)
    out = Path(cfg.output)
    write_atomic(out / "progression.json", document_json(doc))
    write_atomic(out / "progression.svg", render_svg(doc))
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = cfg.effective_seed()
    if args.params:
        try:
            p = GeneratorParams.from_dict(json.loads(Path(args.params).read_text("utf-8")))
        except (OSError, KeyError, TypeError, ValueError) as e:
            raise CliError(f"{args.params}: invalid generator parameters ({e})") from None
    else:
        p = default_params()
    if args.params_out:
        write_atomic(args.params_out, p.to_json())
    if args.steps < 1:
        raise CliError("--steps must be >= 1")
    out = Path(args.out)
    if args.sessions is None:
        s, trace = simulate_with_trace(p, args.steps, seed, session_id=out.stem)
        write_atomic(out, serialize_session(s))
        write_atomic(out.with_name(out.stem + ".trace.json"), trace.to_json())
        return 0
    corpus = simulate_corpus(p, args.sessions, args.steps, seed=seed,
                             translators=args.translators,
                             correlation=None if args.correlation == 0 else args.correlation)
    for s, trace in corpus:
        write_atomic(out / f"{s.id}.tsv", serialize_session(s))
        write_atomic(out / "traces" / f"{s.id}.trace.json", trace.to_json())
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    results = run_sessions(session_files(cfg.input), cfg, "label", args.jobs)
    for r in results:
        if r.hierarchy is not None:
            d = out / "sessions" / r.id
            write_atomic(d / "segments.json", segments_json(r, labelled=True))
            write_atomic(d / "au_table.tsv", au_table_tsv(r))
    write_atomic(out / "thresholds.tsv", thresholds_tsv(results))
    text, vecs = features_tsv(results)
    write_atomic(out / "features.tsv", text)
    stages = {}
    translators = {v.translator or v.session_id for v in vecs}
    if len(translators) >= cfg.k:
        for name, t in cluster_outputs(vecs, cfg.k, cfg.effective_seed()).items():
            write_atomic(out / name, t)
        stages["cluster"] = "ok"
    else:
        stages["cluster"] = f"skipped: {len(translators)} translators < k={cfg.k}"
    if any(r.ok for r in results):
        for name, t in analyze_outputs(results).items():
            write_atomic(out / name, t)
        stages["analyze"] = "ok"
    else:
        stages["analyze"] = "skipped: no analysable sessions"
    manifest = {
        "tool": "btss", "version": __version__,
        "config_hash": cfg.hash(), "config": cfg.semantic_dict(),
        "stages": stages,
        "sessions": [{"id": r.id, "file": Path(r.path).name, "status": r.status,
                      "message": r.message} for r in results],
    }
    write_atomic(out / "manifest.json", dump_json(manifest))
    return _report(results)


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--jobs", type=int, default=1, help="parallel sessions (default 1)")
    common.add_argument("--seed", type=int, help="random seed (fallback: $BTSS_SEED, then 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    io = argparse.ArgumentParser(add_help=False)
    io.add_argument("--in", dest="input", required=True, help="session file or directory")
    io.add_argument("--out", dest="output", required=True, help="output directory")

    fixed = argparse.ArgumentParser(add_help=False)
    fixed.add_argument("--kbi", type=float, help="use this KBI threshold (ms)")
    fixed.add_argument("--pub", type=float, help="use this PUB threshold (ms)")

    p = argparse.ArgumentParser(prog="btss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"btss {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("ingest", parents=[common, io],
                   help="validate sessions and write canonical copies").set_defaults(fn=cmd_ingest)
    sub.add_parser("thresholds", parents=[common, io],
                   help="derive KBI/PUB thresholds").set_defaults(fn=cmd_thresholds)
    sub.add_parser("segment", parents=[common, io, fixed],
                   help="build the AU/KB/PU hierarchy").set_defaults(fn=cmd_segment)
    sub.add_parser("label", parents=[common, io, fixed],
                   help="gaze patterns, HOF states and phases").set_defaults(fn=cmd_label)
    sub.add_parser("features", parents=[common, io],
                   help="style features and relative ICVs").set_defaults(fn=cmd_features)
    c = sub.add_parser("cluster", parents=[common], help="constrained K-means styles")
    c.add_argument("--features", required=True, help="features.tsv from `btss features`")
    c.add_argument("--out", dest="output", required=True)
    c.add_argument("--k", type=int, help="number of clusters (default 5)")
    c.set_defaults(fn=cmd_cluster)
    sub.add_parser("analyze", parents=[common, io],
                   help="corpus tables and lognormal fits").set_defaults(fn=cmd_analyze)
    r = sub.add_parser("render", parents=[common, io, fixed], help="progression graph")
    r.add_argument("--window", type=int, nargs=2, metavar=("START", "END"))
    r.set_defaults(fn=cmd_render)
    s = sub.add_parser("simulate", parents=[common], help="generate synthetic sessions")
    s.add_argument("--params", help="generator parameters (JSON); defaults if omitted")
    s.add_argument("--params-out", help="also write the parameters used to this path")
    s.add_argument("--steps", type=int, required=True, help="HOF steps per session")
    s.add_argument("--out", required=True,
                   help="session file, or a directory when --sessions is given")
    s.add_argument("--sessions", type=int, help="generate a corpus of this many sessions")
    s.add_argument("--translators", type=int, help="number of distinct translators in a corpus")
    s.add_argument("--correlation", type=float, default=0.72,
                   help="log KBI/PUB correlation across a corpus; 0 keeps thresholds fixed")
    s.set_defaults(fn=cmd_simulate)
    pl = sub.add_parser("pipeline", parents=[common, io], help="run every stage")
    pl.add_argument("--k", type=int, help="number of clusters (default 5)")
    pl.set_defaults(fn=cmd_pipeline)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="btss: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("btss: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"btss: config error: {e}", file=sys.stderr)
        return 2
    except (CliError, ValueError, OSError) as e:
        print(f"btss: error: {e}", file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(run(argv))
