"""File formats and the ``jivekit`` command line.

Exit codes: 0 success, 2 parse/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .ajive import (AjiveConfig, DecompositionError, MultiBlockDataset, SegmentationConfig,
                    decompose)
from .metrics import MetricRecord, VarianceProportions, variance_explained
from .robust_svd import DegenerateFitError, HuberConfig
from .simulation import (AdaptiveDistribution, FixedDistribution, GeneratorConfig,
                         OutlierConfig, StudyConfig, StudyError, StudyReport, aggregate,
                         generate_multiblock, inject_outliers, run_study)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
ORIENTATIONS = ("variables-in-rows", "variables-in-columns")


class InputError(ValueError):
    """Bad file, field or value supplied by the user (exit code 2)."""


# ------------------------------------------------------------------ writing

def atomic_write(path, text: str):
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


def dumps(obj) -> str:
    """JSON with shortest round-trip floats; refuses NaN and infinities."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def fmt6(x) -> str:
    return format(float(x), ".6g")


def write_tsv(path, header, rows):
    lines = ["\t".join(header)]
    lines += ["\t".join(str(c) for c in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def _matrix_csv(M, row_ids, col_ids) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(col_ids))
    for rid, row in zip(row_ids, M):
        w.writerow([rid] + [repr(float(x)) for x in row])
    return buf.getvalue()


# ----------------------------------------------------------- config objects

def _load_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from None
    if not isinstance(obj, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return obj


def _check_version(obj, path):
    v = obj.get("schema_version")
    if v != SCHEMA_VERSION:
        raise InputError(f"{path}: schema_version {v!r} is not supported "
                         f"(expected {SCHEMA_VERSION!r})")


def _build(cls, d, where, convert=None):
    """Instantiate a dataclass from a dict, naming unknown or bad fields."""
    if not isinstance(d, dict):
        raise InputError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(d) - names - {"kind", "schema_version"}
    if extra:
        raise InputError(f"{where}: unknown field(s) {sorted(extra)}")
    kwargs = {k: v for k, v in d.items() if k in names}
    for k, fn in (convert or {}).items():
        if k in kwargs:
            kwargs[k] = fn(kwargs[k], f"{where}.{k}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from None


def huber_to_dict(h: HuberConfig):
    return dataclasses.asdict(h)


def ajive_to_dict(cfg: AjiveConfig):
    return {"initial_ranks": list(cfg.initial_ranks), "backend": cfg.backend,
            "huber": huber_to_dict(cfg.huber), "joint_rank_override": cfg.joint_rank_override,
            "segmentation": dataclasses.asdict(cfg.segmentation)}


def ajive_from_dict(d, where="ajive") -> AjiveConfig:
    return _build(AjiveConfig, d, where, {
        "initial_ranks": lambda v, w: tuple(v),
        "huber": lambda v, w: _build(HuberConfig, v, w),
        "segmentation": lambda v, w: _build(SegmentationConfig, v, w),
    })


def generator_to_dict(g: GeneratorConfig):
    d = dataclasses.asdict(g)
    d["p"], d["individual_ranks"] = list(g.p), list(g.individual_ranks)
    return d


def generator_from_dict(d, where="generator") -> GeneratorConfig:
    return _build(GeneratorConfig, d, where)


def _distribution_from_dict(d, where):
    if not isinstance(d, dict) or d.get("kind") not in ("fixed", "adaptive"):
        raise InputError(f"{where}: distribution needs kind 'fixed' or 'adaptive'")
    cls = FixedDistribution if d["kind"] == "fixed" else AdaptiveDistribution
    return _build(cls, d, where)


def outliers_to_dict(o: OutlierConfig):
    d = dataclasses.asdict(o)
    d["configuration"] = o.configuration.value
    return d


def outliers_from_dict(d, where="outliers") -> OutlierConfig:
    return _build(OutlierConfig, d, where, {"distribution": _distribution_from_dict})


def study_to_dict(cfg: StudyConfig):
    return {"schema_version": SCHEMA_VERSION,
            "generator": generator_to_dict(cfg.generator),
            "outliers": [outliers_to_dict(o) for o in cfg.outliers],
            "replications": cfg.replications,
            "ajive": ajive_to_dict(cfg.ajive),
            "methods": list(cfg.methods),
            "parallel_workers": cfg.parallel_workers}


def study_from_dict(d, where="study") -> StudyConfig:
    outs = d.get("outliers", [{}])
    if isinstance(outs, dict):
        outs = [outs]
    return _build(StudyConfig, d, where, {
        "generator": generator_from_dict,
        "outliers": lambda v, w: tuple(outliers_from_dict(o, f"{w}[{i}]")
                                       for i, o in enumerate(outs)),
        "ajive": ajive_from_dict,
        "methods": lambda v, w: tuple(v),
    })


def load_study_config(path) -> StudyConfig:
    d = _load_json(path, "study config")
    _check_version(d, path)
    if "replications" in d and (not isinstance(d["replications"], int)
                                or d["replications"] < 1):
        raise InputError(f"{path}: replications must be a positive integer, "
                         f"got {d['replications']!r}")
    return study_from_dict(d, str(path))


def load_ajive_config(path) -> AjiveConfig:
    d = _load_json(path, "decomposition config")
    _check_version(d, path)
    return ajive_from_dict({k: v for k, v in d.items() if k != "schema_version"}, str(path))


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _metadata(cfg_dict, seed):
    return {"config_hash": config_hash(cfg_dict), "seed": seed,
            "versions": {"jivekit": __version__, "numpy": np.__version__}}


# ----------------------------------------------------------------- manifest

@dataclass
class BlockEntry:
    name: str
    csv_path: str
    orientation: str = "variables-in-rows"


@dataclass
class DatasetManifest:
    blocks: list
    missing_token: str = "NA"
    center_rows: bool = False
    scale_rows: bool = False
    base_dir: str = "."


@dataclass
class LoadedData:
    data: MultiBlockDataset
    variable_ids: list
    subject_ids: list


def read_manifest(path) -> DatasetManifest:
    d = _load_json(path, "manifest")
    _check_version(d, path)
    blocks = d.get("blocks")
    if not isinstance(blocks, list) or len(blocks) < 2:
        raise InputError(f"{path}: 'blocks' must list at least two block entries")
    entries = []
    for i, b in enumerate(blocks):
        e = _build(BlockEntry, b, f"{path}: blocks[{i}]")
        if e.orientation not in ORIENTATIONS:
            raise InputError(f"{path}: blocks[{i}].orientation must be one of {ORIENTATIONS}")
        entries.append(e)
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise InputError(f"{path}: duplicate block names")
    rest = {k: v for k, v in d.items() if k not in ("blocks", "schema_version")}
    m = _build(DatasetManifest, {"blocks": entries, **rest}, str(path))
    m.base_dir = str(Path(path).resolve().parent)
    return m


def read_block_csv(path, missing_token="NA"):
    """Parse one matrix CSV; returns (values, observed mask, row ids, column ids)."""
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"data file not found: {path}") from None
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise InputError(f"{path}: needs a header row and at least one data row")
    header = [h.strip() for h in rows[0][1:]]
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise InputError(f"{path}: duplicate column header {dup!r}")
    ncol = len(header)
    vals = np.empty((len(rows) - 1, ncol))
    mask = np.ones(vals.shape, dtype=bool)
    row_ids = []
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != ncol + 1:
            raise InputError(f"{path}, line {line}: expected {ncol + 1} fields, got {len(row)}")
        row_ids.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == missing_token:
                mask[i, j] = False
                vals[i, j] = 0.0
                continue
            try:
                vals[i, j] = float(cell)
            except ValueError:
                raise InputError(f"{path}, line {line}, column {header[j]!r}: "
                                 f"non-numeric value {cell!r}") from None
            if not math.isfinite(vals[i, j]):
                raise InputError(f"{path}, line {line}, column {header[j]!r}: "
                                 f"non-finite value {cell!r}")
    return vals, mask, row_ids, header


def _standardize(X, mask, center, scale, var_ids, block):
    X = X.copy()
    for i in range(X.shape[0]):
        obs = mask[i]
        if obs.sum() == 0:
            raise InputError(f"block {block!r}: variable {var_ids[i]!r} has no observed values")
        if center:
            X[i, obs] -= X[i, obs].mean()
        if scale:
            if obs.sum() < 2:
                raise InputError(f"block {block!r}: variable {var_ids[i]!r} has a single value")
            sd = X[i, obs].std(ddof=1)
            if sd == 0:
                raise InputError(f"block {block!r}: variable {var_ids[i]!r} has zero variance")
            X[i, obs] /= sd
    X[~mask] = 0.0
    return X


def load_manifest(path) -> LoadedData:
    """Read all blocks of a manifest into the internal variables-by-subjects layout."""
    m = read_manifest(path) if not isinstance(path, DatasetManifest) else path
    blocks, masks, var_ids, subj = [], [], [], None
    for e in m.blocks:
        p = Path(e.csv_path)
        if not p.is_absolute():
            p = Path(m.base_dir) / p
        X, M, rids, cids = read_block_csv(p, m.missing_token)
        if e.orientation == "variables-in-columns":
            X, M, rids, cids = X.T.copy(), M.T.copy(), cids, rids
            if len(set(rids)) != len(rids):
                raise InputError(f"block {e.name!r}: duplicate variable ids")
        elif len(set(cids)) != len(cids):
            raise InputError(f"block {e.name!r}: duplicate subject ids")
        if subj is None:
            subj = cids
        elif len(cids) != len(subj):
            raise InputError(f"block {e.name!r} has {len(cids)} subjects, "
                             f"expected {len(subj)} (from block {m.blocks[0].name!r})")
        elif cids != subj:
            raise InputError(f"block {e.name!r}: subject ids differ from block "
                             f"{m.blocks[0].name!r}")
        if m.center_rows or m.scale_rows:
            X = _standardize(X, M, m.center_rows, m.scale_rows, rids, e.name)
        blocks.append(X)
        masks.append(M)
        var_ids.append(rids)
    data = MultiBlockDataset(blocks, masks=masks, block_names=[e.name for e in m.blocks])
    return LoadedData(data, var_ids, subj)


def write_manifest_bundle(out_dir, data: MultiBlockDataset, subject_ids=None,
                          variable_ids=None, name="manifest.json"):
    """Write blocks as variables-in-rows CSVs plus a manifest referencing them."""
    out = Path(out_dir)
    subj = subject_ids or [f"s{j + 1}" for j in range(data.n)]
    entries = []
    for k, X in enumerate(data.blocks):
        bname = data.name(k)
        rids = variable_ids[k] if variable_ids else [f"{bname}_v{i + 1}" for i in range(X.shape[0])]
        mask = data.mask(k)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(subj))
        for i, row in enumerate(X):
            cells = [repr(float(x)) if mask is None or mask[i, j] else "NA"
                     for j, x in enumerate(row)]
            w.writerow([rids[i]] + cells)
        atomic_write(out / f"{bname}.csv", buf.getvalue())
        entries.append({"name": bname, "csv_path": f"{bname}.csv",
                        "orientation": "variables-in-rows"})
    manifest = {"schema_version": SCHEMA_VERSION, "blocks": entries, "missing_token": "NA",
                "center_rows": False, "scale_rows": False}
    atomic_write(out / name, dumps(manifest))
    return out / name


# ------------------------------------------------------- decomposition report

def _finite(x):
    x = float(x)
    if not math.isfinite(x):
        raise DecompositionError("report", "non-finite value in output")
    return x


def decomposition_report(result, data: MultiBlockDataset, cfg: AjiveConfig):
    var = variance_explained(result, data)
    blocks = []
    for k, blk in enumerate(result.per_block):
        # relative Frobenius error over observed cells
        mask = data.mask(k)
        diff = data.blocks[k] - blk.joint - blk.individual - blk.noise
        X = data.blocks[k]
        if mask is not None:
            diff, X = diff[mask], X[mask]
        add = float(np.linalg.norm(diff) / max(np.linalg.norm(X), 1e-300))
        blocks.append({"name": data.name(k), "individual_rank": int(blk.individual_rank),
                       "joint_fraction": _finite(var.joint[k]),
                       "individual_fraction": _finite(var.individual[k]),
                       "residual_fraction": _finite(var.residual[k]),
                       "additivity_relative_error": _finite(add)})
    diag = result.segmentation_diagnostics
    add_ok = all(b["additivity_relative_error"] < 1e-8 for b in blocks)
    return {"joint_rank": int(result.joint_rank), "backend": result.backend,
            "individual_ranks": [int(r) for r in result.individual_ranks],
            "blocks": blocks, "additivity_check": bool(add_ok),
            "segmentation": {"sv_squared": [_finite(s) for s in diag.sv_squared],
                             "threshold": _finite(diag.threshold),
                             "null_threshold": _finite(diag.null_threshold),
                             "floor": _finite(diag.floor), "clamped": bool(diag.clamped),
                             "warnings": list(diag.warnings)}}


def run_decompose(manifest_path, config_path, out_dir, seed=None, backend=None):
    loaded = load_manifest(manifest_path)
    cfg = load_ajive_config(config_path)
    if seed is not None:
        cfg = replace(cfg, segmentation=replace(cfg.segmentation, seed=seed))
    if backend is not None:
        cfg = replace(cfg, backend=backend)
    try:
        cfg.check_against(loaded.data)
    except ValueError as exc:
        raise InputError(f"{config_path}: {exc}") from None
    data = loaded.data
    result = decompose(data, cfg)
    out = Path(out_dir)
    files = []
    for k, blk in enumerate(result.per_block):
        for label, M in (("joint", blk.joint), ("individual", blk.individual),
                         ("noise", blk.noise)):
            fname = f"{data.name(k)}_{label}.csv"
            atomic_write(out / fname, _matrix_csv(M, loaded.variable_ids[k], loaded.subject_ids))
            files.append(fname)
    r = result.joint_rank
    atomic_write(out / "joint_scores.csv",
                 _matrix_csv(result.joint_scores, loaded.subject_ids,
                             [f"joint{i + 1}" for i in range(r)]))
    files.append("joint_scores.csv")
    summary = decomposition_report(result, data, cfg)
    rows = []
    for b in summary["blocks"]:
        for comp in ("joint", "individual", "residual"):
            rows.append((b["name"], comp, fmt6(b[f"{comp}_fraction"])))
    write_tsv(out / "variance_explained.tsv", ("block", "component", "fraction"), rows)
    files.append("variance_explained.tsv")
    cfg_dict = ajive_to_dict(cfg)
    report = {"schema_version": SCHEMA_VERSION, "kind": "decomposition",
              "metadata": _metadata(cfg_dict, cfg.segmentation.seed),
              "config": cfg_dict, "result": summary, "files": files + ["report.json"]}
    atomic_write(out / "report.json", dumps(report))
    return report


# --------------------------------------------------------------- study report

def study_report_to_dict(rep: StudyReport):
    cfg = study_to_dict(rep.config)
    records = []
    for (scenario, method), by_rep in rep.records.items():
        for i in sorted(by_rep):
            records.append({"scenario": scenario, "method": method, "replication": i,
                            "metrics": by_rep[i].to_dict()})
    records.sort(key=lambda r: (r["scenario"], r["method"], r["replication"]))
    aggs = []
    for (scenario, method), stats in rep.aggregates.items():
        for name, (med, q1, q3) in stats.items():
            aggs.append({"scenario": scenario, "method": method, "metric": name,
                         "median": med, "q1": q1, "q3": q3})
    return {"schema_version": SCHEMA_VERSION, "kind": "study",
            "metadata": _metadata(cfg, rep.config.generator.seed), "config": cfg,
            "records": records,
            "failures": [dataclasses.asdict(f) for f in rep.failures],
            "aggregates": aggs}


def study_report_from_dict(d, where="report") -> StudyReport:
    from .simulation import ReplicationFailure
    _check_version(d, where)
    if d.get("kind") != "study":
        raise InputError(f"{where}: not a study report")
    try:
        cfg = study_from_dict(d["config"], f"{where}: config")
        records = {(s, m): {} for s in cfg.scenario_labels() for m in cfg.methods}
        for r in d["records"]:
            key = (r["scenario"], r["method"])
            if key not in records:
                raise InputError(f"{where}: record for unknown scenario/method {key}")
            records[key][int(r["replication"])] = MetricRecord.from_dict(r["metrics"])
        failures = [ReplicationFailure(**f) for f in d["failures"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"{where}: malformed study report ({exc})") from None
    return StudyReport(config=cfg, records=records, failures=failures,
                       aggregates=aggregate(records))


def write_study_tables(rep: StudyReport, out_dir):
    out = Path(out_dir)
    K = len(rep.config.generator.p)
    rows = []
    for scenario in rep.config.scenario_labels():
        for method in rep.config.methods:
            st = rep.aggregates.get((scenario, method), {})
            if not st:
                rows.append([method, scenario] + ["NA"] * (K + 1))
                continue
            rows.append([method, scenario, fmt6(st["joint_rank"][0])]
                        + [fmt6(st[f"individual_rank_{k + 1}"][0]) for k in range(K)])
    write_tsv(out / "ranks_median.tsv",
              ["method", "scenario", "joint"] + [f"individual_{k + 1}" for k in range(K)], rows)
    long_sre, long_auc, long_var = [], [], []
    for scenario in rep.config.scenario_labels():
        for method in rep.config.methods:
            by_rep = rep.records[(scenario, method)]
            for i in sorted(by_rep):
                rec = by_rep[i]
                long_sre.append((scenario, method, i, fmt6(rec.sre)))
                long_auc.append((scenario, method, i, fmt6(rec.auc)))
                v = rec.variance
                for k in range(len(v.joint)):
                    for comp, vals in (("joint", v.joint), ("individual", v.individual),
                                       ("residual", v.residual)):
                        long_var.append((scenario, method, i, k + 1, comp, fmt6(vals[k])))
    head = ("scenario", "method", "replication")
    write_tsv(out / "sre.tsv", head + ("sre",), long_sre)
    write_tsv(out / "auc.tsv", head + ("auc",), long_auc)
    write_tsv(out / "variance.tsv", head + ("block", "component", "fraction"), long_var)
    return ["ranks_median.tsv", "sre.tsv", "auc.tsv", "variance.tsv"]


def run_simulate(study_path, out_dir, workers=None, seed=None, backend=None,
                 replications=None):
    cfg = load_study_config(study_path)
    if seed is not None:
        cfg = replace(cfg, generator=replace(cfg.generator, seed=seed),
                      outliers=tuple(replace(o, seed=seed) for o in cfg.outliers),
                      ajive=replace(cfg.ajive, segmentation=replace(cfg.ajive.segmentation,
                                                                    seed=seed)))
    if backend is not None:
        cfg = replace(cfg, methods=(backend,))
    if replications is not None:
        if replications < 1:
            raise InputError("--replications must be at least 1")
        cfg = replace(cfg, replications=replications)
    rep = run_study(cfg, workers=workers)
    out = Path(out_dir)
    d = study_report_to_dict(rep)
    files = write_study_tables(rep, out)
    atomic_write(out / "study_report.json", dumps(d))
    return rep, files


def run_report(report_path, out_dir):
    d = _load_json(report_path, "study report")
    rep = study_report_from_dict(d, str(report_path))
    return write_study_tables(rep, out_dir)


# -------------------------------------------------------- synthetic datasets

def run_generate(config_path, out_dir, seed=None):
    """Write clean and contaminated CSV bundles from a synthetic-dataset config.

    The config holds ``generator``, optional ``outliers`` and optional
    ``ajive`` (used to pick the contaminated blocks).
    """
    d = _load_json(config_path, "dataset config")
    _check_version(d, config_path)
    gen = generator_from_dict(d.get("generator"), f"{config_path}: generator")
    if seed is not None:
        gen = replace(gen, seed=seed)
    data, truth = generate_multiblock(gen)
    names = d.get("block_names")
    if names:
        data = MultiBlockDataset(data.blocks, block_names=list(names))
    out = Path(out_dir)
    paths = {"clean": write_manifest_bundle(out / "clean", data)}
    if "outliers" in d:
        oc = outliers_from_dict(d["outliers"], f"{config_path}: outliers")
        if seed is not None:
            oc = replace(oc, seed=seed)
        ranks = (ajive_from_dict(d["ajive"]).initial_ranks if "ajive" in d
                 else tuple(gen.joint_rank + r for r in gen.individual_ranks))
        paths["contaminated"] = write_manifest_bundle(
            out / "contaminated", inject_outliers(data, truth, oc, ranks))
    if "ajive" in d:
        atomic_write(out / "ajive.json",
                     dumps({"schema_version": SCHEMA_VERSION, **d["ajive"]}))
    return paths


# ---------------------------------------------------------------------- CLI

def _default_workers():
    env = os.environ.get("JIVEKIT_WORKERS")
    if env is None:
        return None
    try:
        n = int(env)
    except ValueError:
        raise InputError(f"JIVEKIT_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("JIVEKIT_WORKERS must be at least 1")
    return n


def build_parser():
    ap = argparse.ArgumentParser(prog="jivekit",
                                 description="Robust angle-based joint and individual "
                                             "variation decomposition.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--backend", choices=("classical", "robust"),
                       help="override the configured backend")

    p = sub.add_parser("decompose", help="decompose a multi-block dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    common(p)

    p = sub.add_parser("simulate", help="run a replicated simulation study")
    p.add_argument("--study", required=True)
    p.add_argument("--workers", type=int, help="worker processes (default JIVEKIT_WORKERS)")
    p.add_argument("--replications", type=int, help="override the replication count")
    common(p)

    p = sub.add_parser("report", help="rebuild TSV tables from a study_report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV files and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "decompose":
            rep = run_decompose(args.manifest, args.config, args.out, args.seed, args.backend)
            r = rep["result"]
            print(f"joint rank {r['joint_rank']}, individual ranks {r['individual_ranks']}")
        elif args.command == "simulate":
            workers = args.workers if args.workers is not None else _default_workers()
            if workers is not None and workers < 1:
                raise InputError("--workers must be at least 1")
            rep, _ = run_simulate(args.study, args.out, workers, args.seed, args.backend,
                                  args.replications)
            if rep.failures:
                print(f"{len(rep.failures)} replication task(s) failed", file=sys.stderr)
        elif args.command == "report":
            run_report(args.input, args.out)
        elif args.command == "generate":
            run_generate(args.config, args.out, args.seed)
    except InputError as exc:
        print(f"jivekit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DecompositionError, DegenerateFitError, StudyError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        phase = getattr(exc, "phase", None)
        prefix = f"numerical failure in {phase}" if phase else "numerical failure"
        print(f"jivekit: {prefix}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
