"""Command line front end: validated experiment configs in, JSON records out.

    ginchaos run --config exp.yaml --output out/
    ginchaos compare out/record.json
    ginchaos plot out/record.json
    ginchaos validate-config exp.yaml
    ginchaos list-kinds
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import yaml

__all__ = [
    "KINDS",
    "CONFIG_SCHEMA",
    "RECORD_SCHEMA",
    "ConfigError",
    "ResumeMismatch",
    "KindMismatch",
    "UnsupportedKind",
    "load_config",
    "resolve_config",
    "config_digest",
    "run",
    "compare",
    "plot",
    "dump_record",
    "load_record",
    "main",
]

SCHEMA_VERSION = 1
RECORD_NAME = "record.json"
PROGRESS_NAME = "progress.jsonl"


class ConfigError(ValueError):
    pass


class ResumeMismatch(RuntimeError):
    pass


class KindMismatch(ValueError):
    pass


class UnsupportedKind(ValueError):
    pass


def artifact_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# schema

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_REGION = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["disc", "half-disc"]},
        "radius": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.95},
    },
    "additionalProperties": False,
}

# per-kind parameters with their defaults; None marks a required field
DEFAULTS: dict[str, dict] = {
    "kpoint": {"points": None, "exponents": None, "eta": 0.0, "samples": 1000},
    "onepoint": {"point": [0.0, 0.0], "gamma": 2.0, "eta": 0.0, "samples": 1000},
    "field-scan": {"region": {"kind": "disc", "radius": 0.5}, "resolution": 32, "draws": 16, "method": "eig"},
    "clt": {"points": None, "draws": 200},
    "thick-points": {"region": {"kind": "disc", "radius": 0.5}, "resolution": 64, "draws": 16, "nu": 0.4,
                     "sizes": None},
    "free-energy": {"region": {"kind": "disc", "radius": 0.5}, "resolution": 64, "draws": 16, "gamma": 1.0},
    "dbm-local-factor": {"omega1": 0.2, "q1": 0.5, "b_frak": 0.6, "delta_m": 0.5, "steps": 200, "lambda": 1.0,
                         "paths": 400, "method": "matrix", "a1": 1000.0, "dump_paths": 0},
    "gmc-sample": {"region": {"kind": "disc", "radius": 0.5}, "epsilon": 0.1, "gamma": 1.0, "draws": 100},
    "mde-report": {"z": [0.0, 0.0], "resolution": 256, "quantiles": 0},
}
KINDS = tuple(DEFAULTS)

_PARAMS = {
    "kpoint": {
        "points": {"type": "array", "items": _POINT, "minItems": 1},
        "exponents": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "eta": {"type": "number", "minimum": 0},
        "samples": {"type": "integer", "minimum": 2},
    },
    "onepoint": {
        "point": _POINT,
        "gamma": {"type": "number", "minimum": 0},
        "eta": {"type": "number", "minimum": 0},
        "samples": {"type": "integer", "minimum": 2},
    },
    "field-scan": {
        "region": _REGION,
        "resolution": {"type": "integer", "minimum": 2},
        "draws": {"type": "integer", "minimum": 1},
        "method": {"enum": ["eig", "svd"]},
    },
    "clt": {
        "points": {"type": "array", "items": _POINT, "minItems": 1},
        "draws": {"type": "integer", "minimum": 32},
    },
    "thick-points": {
        "region": _REGION,
        "resolution": {"type": "integer", "minimum": 2},
        "draws": {"type": "integer", "minimum": 1},
        "nu": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.7071067811865476},
        "sizes": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 2}},
    },
    "free-energy": {
        "region": _REGION,
        "resolution": {"type": "integer", "minimum": 2},
        "draws": {"type": "integer", "minimum": 1},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
    },
    "dbm-local-factor": {
        "omega1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "q1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "b_frak": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "delta_m": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 2},
        "lambda": {"type": "number", "minimum": 0, "maximum": 3},
        "paths": {"type": "integer", "minimum": 100},
        "method": {"enum": ["matrix", "sde", "hybrid"]},
        "a1": {"type": "number", "exclusiveMinimum": 0},
        "dump_paths": {"type": "integer", "minimum": 0},
    },
    "gmc-sample": {
        "region": _REGION,
        "epsilon": {"type": "number", "minimum": 0.001, "maximum": 0.31622776601683794},
        "gamma": {"type": "number", "minimum": 0},
        "draws": {"type": "integer", "minimum": 1},
    },
    "mde-report": {
        "z": _POINT,
        "resolution": {"type": "integer", "minimum": 8},
        "quantiles": {"type": "integer", "minimum": 0},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ginchaos experiment",
    "type": "object",
    "required": ["kind", "ensemble"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
        "ensemble": {
            "type": "object",
            "required": ["n"],
            "properties": {
                "beta": {"enum": [1, 2]},
                "law": {"enum": ["gaussian", "symmetric-bernoulli", "uniform", "two-point"]},
                "parameters": {"type": "array", "items": {"type": "number"}},
                "n": {"type": "integer", "minimum": 2},
                "kappa4": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "params": {"type": "object"},
    },
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": k}}},
            "then": {"properties": {"params": {"type": "object", "properties": p, "additionalProperties": False}}},
        }
        for k, p in _PARAMS.items()
    ],
}

RECORD_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ginchaos result record",
    "type": "object",
    "required": ["schema_version", "artifact_version", "config", "config_digest", "timestamps", "overrides",
                 "payload", "flags"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "artifact_version": {"type": "string"},
        "config": CONFIG_SCHEMA,
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "timestamps": {
            "type": "object",
            "required": ["started", "finished"],
            "properties": {"started": {"type": "number"}, "finished": {"type": "number"}},
        },
        "overrides": {"type": "object"},
        "payload": {"type": "object"},
        "flags": {"type": "object"},
    },
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# config handling

def load_config(path) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def _validate(instance, schema, what: str) -> None:
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what} invalid at {loc}: {exc.message}") from None


def resolve_config(raw: dict) -> dict:
    """Validate and expand defaults; the result is what records embed."""
    _validate(raw, CONFIG_SCHEMA, "config")
    cfg = copy.deepcopy(raw)
    kind = cfg["kind"]
    cfg["schema_version"] = SCHEMA_VERSION
    cfg.setdefault("master_seed", 0)
    cfg.setdefault("workers", 1)
    ens = cfg["ensemble"]
    ens.setdefault("beta", 2)
    ens.setdefault("law", "gaussian")
    ens.setdefault("parameters", [])
    ens.pop("kappa4", None) if ens.get("kappa4") is None else None
    params = cfg.setdefault("params", {})
    for key, val in DEFAULTS[kind].items():
        if key not in params:
            if val is None and not (kind == "thick-points" and key == "sizes"):
                raise ConfigError(f"params.{key} is required for kind {kind}")
            params[key] = copy.deepcopy(val)
    if "region" in params:
        params["region"] = {"kind": "disc", "radius": 0.5, **params["region"]}
    if kind == "kpoint" and len(params["points"]) != len(params["exponents"]):
        raise ConfigError("params.points and params.exponents differ in length")
    if kind == "thick-points" and params["sizes"] is None:
        params["sizes"] = [ens["n"]]
    # the law must be constructible, and kappa4 consistent if given
    from .ensembles import EnsembleSpec

    try:
        spec = EnsembleSpec.from_dict(ens)
    except Exception as exc:  # noqa: BLE001 - reported as a config error
        raise ConfigError(f"ensemble invalid: {exc}") from None
    ens["kappa4"] = spec.kappa4
    _validate(cfg, CONFIG_SCHEMA, "resolved config")
    return cfg


def config_digest(cfg: dict) -> str:
    """sha256 of the resolved config, excluding fields that cannot change the payload."""
    core = {k: v for k, v in cfg.items() if k not in ("workers", "output")}
    return hashlib.sha256(json.dumps(core, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# JSON helpers

def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _cplx(z) -> list:
    z = complex(z)
    return [_num(z.real), _num(z.imag)]


def _arr(a) -> list:
    a = np.asarray(a, dtype=float)
    return [_num(v) for v in a.reshape(-1)]


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_record(path) -> dict:
    record = json.loads(Path(path).read_text())
    _validate(record, RECORD_SCHEMA, "record")
    return record


# ---------------------------------------------------------------------------
# experiment kinds

def _spec(cfg):
    from .ensembles import EnsembleSpec

    return EnsembleSpec.from_dict(cfg["ensemble"])


def _moment_payload(cfg, points, exponents, eta, samples, progress, workers):
    from .mc import estimate_kpoint
    from .predict import KPointQuery, kpoint_predict
    from .special import ginibre_exact_moment

    spec = _spec(cfg)
    pts = tuple(complex(*p) for p in points)
    q = KPointQuery(spec.n, pts, tuple(float(g) for g in exponents), spec.cls, spec.kappa4)
    est = estimate_kpoint(q, eta, samples, cfg["master_seed"], spec.law, workers, progress)
    payload = {
        "n": spec.n,
        "points": [_cplx(p) for p in pts],
        "exponents": [float(g) for g in exponents],
        "eta": float(eta),
        "samples": samples,
        "log_mean": _num(est.log_mean),
        "std_error": _num(est.std_error),
        "ess": _num(est.ess),
        "rejected": est.rejected,
        "estimate": _num(math.exp(est.log_mean)) if est.log_mean < 700 else None,
    }
    flags = {"ess_warning": bool(est.flagged), "rejected": est.rejected}
    try:
        pred = kpoint_predict(q)
        payload["log_prediction"] = _num(complex(pred.centered_log_value).real)
        payload["prediction"] = _num(math.exp(payload["log_prediction"]))
        payload["prediction_parts"] = {k: _num(complex(v).real) for k, v in pred.parts.items()}
        flags.update({k: (bool(v) if isinstance(v, bool) else _num(v)) for k, v in pred.flags.items()})
    except Exception as exc:  # noqa: BLE001 - reported in the record
        payload["log_prediction"] = None
        flags["prediction_error"] = f"{type(exc).__name__}: {exc}"
    # exact one-point oracle: complex Gaussian at z = 0 without regularization
    if (len(pts) == 1 and pts[0] == 0 and eta == 0 and spec.cls.beta == 2
            and spec.law.kind.value == "gaussian"):
        g = float(exponents[0])
        payload["log_exact"] = _num(float(ginibre_exact_moment(spec.n, g)) + g * spec.n / 2.0)
    return payload, flags


def _kind_kpoint(cfg, workers, progress):
    p = cfg["params"]
    return _moment_payload(cfg, p["points"], p["exponents"], p["eta"], p["samples"], progress, workers)


def _kind_onepoint(cfg, workers, progress):
    p = cfg["params"]
    return _moment_payload(cfg, [p["point"]], [p["gamma"]], p["eta"], p["samples"], progress, workers)


def _region(p):
    from .mc import Region

    return Region(p["region"]["kind"], p["region"]["radius"])


def _kind_field_scan(cfg, workers, progress):
    from .mc import scan_field

    p = cfg["params"]
    scan = scan_field(_spec(cfg), _region(p), p["resolution"], p["draws"], cfg["master_seed"], p["method"],
                      workers, progress)
    finite = np.isfinite(scan.values)
    return {
        "n": scan.n,
        "points": [_cplx(z) for z in scan.points],
        "cell_area": _arr(scan.cell_area),
        "spacing": scan.spacing,
        "mean": _arr(np.mean(scan.values, axis=0)),
        "variance": _arr(np.var(scan.values, axis=0, ddof=1)) if scan.draws > 1 else None,
        "max_per_draw": _arr(np.max(scan.values, axis=1)),
    }, {"nonfinite": int((~finite).sum())}


def _kind_clt(cfg, workers, progress):
    from .mc import clt_test

    p = cfg["params"]
    rep = clt_test(_spec(cfg), [complex(*z) for z in p["points"]], p["draws"], cfg["master_seed"], workers, progress)
    return {
        "n": rep.n,
        "points": [_cplx(z) for z in rep.points],
        "draws": rep.draws,
        "sample_cov": [_arr(r) for r in rep.sample_cov],
        "predicted_cov": [_arr(r) for r in rep.predicted_cov],
        "sample_corr": [_arr(r) for r in rep.sample_corr()],
        "predicted_corr": [_arr(r) for r in rep.predicted_corr()],
        "skewness": _arr(rep.skewness),
        "excess_kurtosis": _arr(rep.excess_kurtosis),
        "separation_exponent": _num(rep.separation_exponent),
    }, {}


def _kind_thick_points(cfg, workers, progress):
    from .ensembles import EnsembleSpec
    from .mc import scan_field, thick_points

    p = cfg["params"]
    base = _spec(cfg)
    areas = []
    for n in p["sizes"]:
        spec = EnsembleSpec(base.cls, base.law, n)
        scan = scan_field(spec, _region(p), p["resolution"], p["draws"], cfg["master_seed"], "eig", workers, progress)
        areas.append(thick_points(scan, p["nu"]))
    out = {"sizes": list(p["sizes"]), "areas": _arr(areas), "nu": p["nu"], "predicted_slope": -2 * p["nu"] ** 2}
    flags = {}
    if len(areas) > 1 and all(a > 0 for a in areas):
        slope = float(np.polyfit(np.log(p["sizes"]), np.log(areas), 1)[0])
        out["slope"] = slope
    elif len(areas) > 1:
        out["slope"] = None
        flags["empty_area"] = True
    return out, flags


def _kind_free_energy(cfg, workers, progress):
    from .mc import free_energy, free_energy_prediction, scan_field

    p = cfg["params"]
    scan = scan_field(_spec(cfg), _region(p), p["resolution"], p["draws"], cfg["master_seed"], "eig", workers,
                      progress)
    fe = free_energy(scan, p["gamma"], per_draw=True)
    return {
        "n": scan.n,
        "gamma": p["gamma"],
        "estimate": _num(np.mean(fe)),
        "std_error": _num(np.std(fe, ddof=1) / math.sqrt(fe.size)) if fe.size > 1 else None,
        "prediction": free_energy_prediction(p["gamma"]),
    }, {}


def _kind_dbm(cfg, workers, progress):
    from .dbm import DbmConfig, local_factor

    p = cfg["params"]
    dc = DbmConfig.from_exponents(cfg["ensemble"]["n"], p["omega1"], p["q1"], p["b_frak"], p["delta_m"],
                                  steps=p["steps"], a1=p["a1"])
    res = local_factor(dc, p["lambda"], p["paths"], cfg["master_seed"], p["method"], workers, progress)
    v = res.variables
    return {
        "dbm": {k: (_num(x) if isinstance(x, float) else x) for k, x in dc.to_dict().items()},
        "estimate": _num(res.estimate),
        "std_error": _num(res.std_error),
        "prediction": _num(res.prediction),
        "ratio": _num(res.ratio),
        "ess": _num(res.ess),
        "variable_means": _arr(v.mean(axis=0)),
        "variable_std": _arr(v.std(axis=0, ddof=1)),
    }, {"window_violations": res.window_violations}


def dump_dbm_paths(cfg: dict, out_dir) -> list[Path]:
    """Write the first ``dump_paths`` paths of a dbm-local-factor config as
    ``paths/path_XXXXX.npz`` under ``out_dir``."""
    from .dbm import DbmConfig, local_path

    p = cfg["params"]
    dc = DbmConfig.from_exponents(cfg["ensemble"]["n"], p["omega1"], p["q1"], p["b_frak"], p["delta_m"],
                                  steps=p["steps"], a1=p["a1"])
    target = Path(out_dir) / "paths"
    target.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(min(p["dump_paths"], p["paths"])):
        path, _ = local_path(dc, cfg["master_seed"], i, p["method"])
        f = target / f"path_{i:05d}.npz"
        path.save(f)
        files.append(f)
    return files


def _kind_gmc(cfg, workers, progress):
    from .ensembles import SymmetryClass
    from .gmcfield import FieldGrid, chaos_measure, regularized_covariance, sample_fields, total_masses

    p = cfg["params"]
    ens = cfg["ensemble"]
    grid = FieldGrid(_region(p), p["epsilon"], SymmetryClass(ens["beta"]), ens["kappa4"])
    fact = regularized_covariance(grid)
    fields = sample_fields(fact, p["draws"], cfg["master_seed"])
    totals = total_masses(fact, fields, p["gamma"])
    first = chaos_measure(fact, fields[0], p["gamma"])
    if progress:
        progress(p["draws"], p["draws"])
    return {
        "grid": grid.to_dict(),
        "points": [_cplx(z) for z in grid.points],
        "area": grid.region.area(),
        "totals": _arr(totals),
        "mean_total": _num(np.mean(totals)),
        "std_error": _num(np.std(totals, ddof=1) / math.sqrt(totals.size)) if totals.size > 1 else None,
        "first_masses": _arr(first.masses),
        "first_total": _num(first.total),
    }, {"clip_mass": fact.clip_mass}


def _kind_mde(cfg, workers, progress):
    from . import mde

    p = cfg["params"]
    z = complex(*p["z"])
    prof = mde.density(z, p["resolution"])
    out = {
        "z": _cplx(z),
        "edge": prof.edge,
        "rho0": float(mde.rho(z, 0.0)),
        "x": _arr(prof.grid[:, 0]),
        "rho": _arr(prof.grid[:, 1]),
        "centering": mde.centering_integral(z, 0.0).integral,
    }
    if p["quantiles"]:
        out["quantiles"] = _arr(mde.quantiles(prof, p["quantiles"]))
    if progress:
        progress(1, 1)
    return out, {}


_DISPATCH = {
    "kpoint": _kind_kpoint,
    "onepoint": _kind_onepoint,
    "field-scan": _kind_field_scan,
    "clt": _kind_clt,
    "thick-points": _kind_thick_points,
    "free-energy": _kind_free_energy,
    "dbm-local-factor": _kind_dbm,
    "gmc-sample": _kind_gmc,
    "mde-report": _kind_mde,
}


# ---------------------------------------------------------------------------
# verbs

def run(raw_config: dict, output=None, workers: int | None = None, seed: int | None = None,
        resume: bool = False, progress_stream=None) -> dict:
    """Validate, dispatch, and write ``record.json`` atomically into ``output``."""
    overrides: dict = {}
    raw = copy.deepcopy(raw_config)
    if seed is not None:
        raw["master_seed"] = int(seed)
        overrides["seed"] = int(seed)
    if workers is not None:
        raw["workers"] = int(workers)
        overrides["workers"] = int(workers)
    env = os.environ.get("GINCHAOS_WORKERS")
    if env is not None and workers is None:
        raw["workers"] = int(env)
        overrides["env:GINCHAOS_WORKERS"] = env
    if output is not None:
        raw["output"] = str(output)
    cfg = resolve_config(raw)
    digest = config_digest(cfg)
    out_dir = Path(cfg["output"]) if "output" in cfg else None

    if out_dir is not None:
        rec_path, prog_path = out_dir / RECORD_NAME, out_dir / PROGRESS_NAME
        existing = None
        if rec_path.exists():
            existing = json.loads(rec_path.read_text()).get("config_digest")
        elif prog_path.exists():
            first = prog_path.read_text().splitlines()[:1]
            existing = json.loads(first[0]).get("config_digest") if first else None
        if existing is not None and resume:
            if existing != digest:
                raise ResumeMismatch(f"{out_dir} holds output for config {existing[:12]}, not {digest[:12]}")
            if rec_path.exists():
                return load_record(rec_path)
        out_dir.mkdir(parents=True, exist_ok=True)
        prog_fh = open(prog_path, "w")
    else:
        prog_fh = None

    def emit(event: dict) -> None:
        line = json.dumps({"config_digest": digest, **event}, sort_keys=True)
        for fh in (prog_fh, progress_stream):
            if fh is not None:
                fh.write(line + "\n")
                fh.flush()

    started = time.time()
    emit({"event": "start", "kind": cfg["kind"], "time": started})
    try:
        payload, flags = _DISPATCH[cfg["kind"]](
            cfg, cfg["workers"], lambda done, total: emit({"event": "progress", "done": done, "total": total})
        )
        finished = time.time()
        record = {
            "schema_version": SCHEMA_VERSION,
            "artifact_version": artifact_version(),
            "config": cfg,
            "config_digest": digest,
            "timestamps": {"started": started, "finished": finished},
            "overrides": overrides,
            "payload": json.loads(json.dumps(payload, allow_nan=False)),
            "flags": json.loads(json.dumps(flags, allow_nan=False)),
        }
        _validate(record, RECORD_SCHEMA, "record")
        if out_dir is not None and cfg["kind"] == "dbm-local-factor" and cfg["params"]["dump_paths"]:
            dump_dbm_paths(cfg, out_dir)
        if out_dir is not None:
            _atomic_write(out_dir / RECORD_NAME, dump_record(record))
        emit({"event": "done", "time": finished})
    finally:
        if prog_fh is not None:
            prog_fh.close()
    return record


def compare(record: dict) -> list[dict]:
    """Per-query comparison rows for kpoint/onepoint records."""
    kind = record["config"]["kind"]
    if kind not in ("kpoint", "onepoint"):
        raise KindMismatch(f"compare needs a kpoint or onepoint record, got {kind}")
    p = record["payload"]
    ref = p.get("log_exact", p.get("log_prediction"))
    row = {
        "n": p["n"],
        "points": p["points"],
        "exponents": p["exponents"],
        "ln_mc": p["log_mean"],
        "ln_prediction": ref,
        "reference": "exact" if "log_exact" in p else "asymptotic",
        "ess": p["ess"],
    }
    if ref is None or p["log_mean"] is None:
        row["z"] = None
        row["flagged"] = True
    else:
        diff = p["log_mean"] - ref
        se = p["std_error"] or 0.0
        row["z"] = 0.0 if diff == 0 else (diff / se if se > 0 else math.copysign(math.inf, diff))
        row["flagged"] = bool(abs(row["z"]) > 3 or record["flags"].get("ess_warning", False))
    return [row]


def trend(records: list[dict]) -> list[dict]:
    """ln(MC/prediction) across a set of records sorted by N."""
    rows = sorted((compare(r)[0] for r in records), key=lambda r: r["n"])
    return [{"n": r["n"], "ln_ratio": None if r["ln_prediction"] is None else r["ln_mc"] - r["ln_prediction"]}
            for r in rows]


def plot(record: dict, out_dir, style: str = "png") -> list[Path]:
    """Static plot files for a record."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind = record["config"]["kind"]
    p = record["payload"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    if kind == "mde-report":
        ax.plot(p["x"], p["rho"])
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        ax.set_title(f"z = {p['z'][0]:g}{p['z'][1]:+g}i, edge {p['edge']:.4f}")
        name = "density"
    elif kind == "thick-points":
        ax.loglog(p["sizes"], p["areas"], "o")
        if p.get("slope") is not None:
            ns = np.asarray(p["sizes"], dtype=float)
            c = np.exp(np.mean(np.log(p["areas"]) - p["slope"] * np.log(ns)))
            ax.loglog(ns, c * ns ** p["slope"], "-")
            ax.annotate(f"slope {p['slope']:.3f}", xy=(0.05, 0.05), xycoords="axes fraction")
        ax.set_xlabel("N")
        ax.set_ylabel("thick-point area")
        name = "thick_points"
    elif kind in ("gmc-sample", "field-scan"):
        pts = np.array(p["points"])
        vals = p["first_masses"] if kind == "gmc-sample" else p["mean"]
        sc = ax.scatter(pts[:, 0], pts[:, 1], c=vals, s=8, marker="s")
        fig.colorbar(sc, ax=ax)
        ax.set_aspect("equal")
        if kind == "gmc-sample":
            ax.set_title(f"total mass {p['first_total']:.6g}")
        name = "heatmap"
    elif kind in ("kpoint", "onepoint"):
        row = compare(record)[0]
        ax.errorbar([0], [row["ln_mc"]], yerr=[p["std_error"] or 0.0], fmt="o", label="MC")
        if row["ln_prediction"] is not None:
            ax.axhline(row["ln_prediction"], color="k", lw=1, label=row["reference"])
        ax.legend()
        name = "moment"
    else:
        plt.close(fig)
        raise UnsupportedKind(f"no plot for kind {kind}")
    path = out_dir / f"{name}.{style}"
    fig.tight_layout()
    # keep svg text as text so annotations stay searchable
    with matplotlib.rc_context({"svg.fonttype": "none"}):
        fig.savefig(path)
    plt.close(fig)
    return [path]


# ---------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ginchaos", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--output")
    r.add_argument("--resume", action="store_true")
    c = sub.add_parser("compare", help="compare an MC record with its prediction")
    c.add_argument("records", nargs="+")
    pl = sub.add_parser("plot", help="emit plot files for a record")
    pl.add_argument("record")
    pl.add_argument("--output")
    pl.add_argument("--style", default="png", choices=["png", "svg", "pdf"])
    v = sub.add_parser("validate-config", help="check a config against the schema")
    v.add_argument("config", nargs="?")
    v.add_argument("--config", dest="config_flag")
    sub.add_parser("list-kinds", help="list experiment kinds")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-kinds":
            for k in KINDS:
                print(k)
        elif args.verb == "validate-config":
            path = args.config or args.config_flag
            if path is None:
                raise ConfigError("no config given")
            cfg = resolve_config(load_config(path))
            print(json.dumps({"valid": True, "config_digest": config_digest(cfg)}))
        elif args.verb == "run":
            rec = run(load_config(args.config), args.output, args.workers, args.seed, args.resume,
                      progress_stream=sys.stderr)
            print(json.dumps({"config_digest": rec["config_digest"], "payload_keys": sorted(rec["payload"])}))
        elif args.verb == "compare":
            recs = [load_record(p) for p in args.records]
            for rec in recs:
                for row in compare(rec):
                    print(json.dumps(row, sort_keys=True))
            if len(recs) > 1:
                for row in trend(recs):
                    print(json.dumps(row, sort_keys=True))
        elif args.verb == "plot":
            rec = load_record(args.record)
            out = args.output or str(Path(args.record).parent)
            for path in plot(rec, out, args.style):
                print(path)
    except (ConfigError, ResumeMismatch, KindMismatch, UnsupportedKind, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
