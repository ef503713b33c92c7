"""Configuration documents, path CSVs, checkpoints and run directories."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from pathlib import Path

import numpy as np
import yaml

from .errors import CheckpointError, ConfigurationError
from .models import MODELS
from .nets import FeedForwardNet, GruNet
from .solvers import Networks, TrainingPlan
from .stochastics import TimeGrid

OUTPUT_ENV = "MVFBSDE_OUTPUT_DIR"
CHECKPOINT_FORMAT = "mvfbsde-checkpoint"
PATHS_HEADER = ("path_id", "t", "W", "W0", "X", "Y", "Z", "Z0", "S")

# section -> key -> (RunConfig/TrainingPlan attribute, type)
SCHEMA = {
    "model": {"name": ("model", str), "params": ("model_params", dict)},
    "grid": {"T": ("T", float), "N": ("N", int)},
    "sampling": {"M": ("M", int), "seed": ("seed", int)},
    "training": {
        "E_Y": ("plan.epochs_Y", int),
        "E_Z0": ("plan.epochs_Z0", int),
        "E_S": ("plan.epochs_S", int),
        "I": ("plan.batch_size", int),
        "lr": ("plan.lr", float),
        "decay": ("plan.decay", float),
        "decay_every": ("plan.decay_every", int),
        "p_T_weight": ("plan.terminal_weight", float),
        "dtype": ("plan.dtype", str),
        "picard_tol": ("plan.picard_tol", float),
        "picard_max_inner": ("plan.picard_max_inner", int),
    },
    "loop": {
        "K": ("K", int),
        "delta": ("delta", float),
        "tolerance": ("tolerance", float),
        "warm_start": ("plan.warm_start", bool),
    },
    "output": {"dir": ("output_dir", str), "checkpoint_every": ("checkpoint_every", int)},
}
REQUIRED = ("model.name",)


# ---------------------------------------------------------------- config ---


def _coerce(value, kind, key):
    if value is None and key in ("training.p_T_weight", "output.dir"):
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key} must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind is dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise ConfigurationError(f"{key} must be a mapping")
        return dict(value)
    if not isinstance(value, str):
        raise ConfigurationError(f"{key} must be a string, got {value!r}")
    return value


def _check_model_params(name: str, params: dict) -> None:
    if name not in MODELS:
        raise ConfigurationError(f"model.name: unknown model {name!r}; choose from {sorted(MODELS)}")
    allowed = {f.name for f in dataclasses.fields(MODELS[name][0])} - {"T"}
    if name == "quantile_interaction":
        allowed.add("alpha")
    for key, value in params.items():
        if key not in allowed:
            raise ConfigurationError(f"unknown key model.params.{key}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"model.params.{key} must be a number")


def config_from_dict(doc: dict):
    """Validate a nested mapping against the schema and build a RunConfig."""
    from .orchestrator import RunConfig

    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration must be a mapping of sections")
    top: dict = {}
    plan: dict = {}
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown key {section}")
        if body is None:
            body = {}
        if not isinstance(body, dict):
            raise ConfigurationError(f"section {section} must be a mapping")
        for key, value in body.items():
            full = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {full}")
            attr, kind = SCHEMA[section][key]
            value = _coerce(value, kind, full)
            if attr.startswith("plan."):
                plan[attr[5:]] = value
            else:
                top[attr] = value
    for key in REQUIRED:
        section, name = key.split(".")
        if name not in (doc.get(section) or {}):
            raise ConfigurationError(f"missing required key {key}")
    _check_model_params(top["model"], top.get("model_params", {}))
    try:
        top["plan"] = TrainingPlan(**plan)
    except ValueError as exc:
        raise ConfigurationError(f"training: {exc}") from None
    if top["plan"].dtype not in ("float32", "float64"):
        raise ConfigurationError("training.dtype must be float32 or float64")
    try:
        return RunConfig(**top)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None


def parse_config(text: str):
    """Parse a YAML document into a validated RunConfig."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from None
    return config_from_dict(doc)


def load_config(path) -> object:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def config_to_dict(config) -> dict:
    out: dict = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (attr, _) in keys.items():
            obj = config
            for part in attr.split("."):
                obj = getattr(obj, part)
            out[section][key] = dict(obj) if isinstance(obj, dict) else obj
    return out


def dump_config(config) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


# ------------------------------------------------------------------ paths ---


def write_paths_csv(path, state) -> int:
    """One row per (path, node) sorted by (path_id, t); returns the row count."""
    if state.noise is None:
        raise ConfigurationError("state carries no noise; cannot write W and W0")
    grid = state.grid
    M, J = state.M, grid.N + 1
    cols = [
        np.repeat(np.arange(M), J).astype(np.float64),
        np.tile(grid.times, M),
    ]
    for batch in (state.noise.W, state.noise.W0, state.X, state.Y, state.Z, state.Z0, state.S):
        cols.append(batch.values[..., 0].reshape(-1))
    table = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(PATHS_HEADER) + "\n")
        np.savetxt(fh, table, fmt=["%d"] + ["%.9g"] * 8, delimiter=",")
    return M * J


def read_paths_csv(path) -> dict[str, np.ndarray]:
    """Columns of a paths file keyed by header name."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != PATHS_HEADER:
            raise ConfigurationError(f"unexpected paths header {header}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


# ------------------------------------------------------------- checkpoint ---


def _net_to_dict(net) -> dict:
    d = {"kind": net.kind, "dtype": str(net.dtype)}
    if net.kind == "feedforward":
        d.update(in_dim=net.in_dim, out_dim=net.out_dim, hidden=list(net.hidden),
                 activation=net.activation)
    else:
        d.update(in_dim=net.in_dim, hidden_dim=net.hidden_dim, out_dim=net.out_dim,
                 extra_dim=net.extra_dim, activation="gru")
    d["input_shift"] = net.shift.tolist()
    d["input_scale"] = net.scale.tolist()
    # float32 -> float64 is exact, and json writes shortest round-trip reprs
    d["params"] = [
        {"shape": list(p.value.shape), "data": p.value.astype(np.float64).ravel().tolist()}
        for p in net.params
    ]
    return d


def _net_from_dict(d: dict, name: str):
    dtype = np.dtype(d["dtype"])
    if d["kind"] == "feedforward":
        net = FeedForwardNet(d["in_dim"], d["out_dim"], tuple(d["hidden"]), d["activation"],
                             dtype=dtype)
    elif d["kind"] == "gru":
        net = GruNet(d["in_dim"], d["hidden_dim"], d["out_dim"], d["extra_dim"], dtype=dtype)
    else:
        raise CheckpointError(f"network {name}: unknown kind {d['kind']!r}")
    params = net.params
    if len(params) != len(d["params"]):
        raise CheckpointError(f"network {name}: expected {len(params)} tensors")
    values = []
    for p, stored in zip(params, d["params"]):
        shape = tuple(stored["shape"])
        if shape != p.value.shape:
            raise CheckpointError(f"network {name}: shape {shape} != declared {p.value.shape}")
        arr = np.asarray(stored["data"], dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"network {name}: wrong number of weights")
        values.append(arr.reshape(shape).astype(dtype))
    for p, v in zip(params, values):
        p.value = v
    if "input_shift" in d:
        try:
            net.set_normalization(d["input_shift"], d["input_scale"])
        except Exception as exc:
            raise CheckpointError(f"network {name}: {exc}") from None
    return net


def save_checkpoint(path, networks: Networks, metadata: dict) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "metadata": metadata,
        "networks": {name: _net_to_dict(net) for name, net in networks.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, default=_jsonable))
    os.replace(tmp, path)


def load_checkpoint(path, model: str | None = None) -> tuple[Networks, dict]:
    """Rebuild (U, S, V) and return them with the stored metadata.

    ``model`` guards against loading a checkpoint trained on another model.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint")
    meta = doc.get("metadata", {})
    if model is not None and meta.get("model") != model:
        raise CheckpointError(
            f"checkpoint was trained on model {meta.get('model')!r}, not {model!r}"
        )
    try:
        nets = {name: _net_from_dict(doc["networks"][name], name) for name in ("U", "S", "V")}
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc!r}") from None
    return Networks(nets["U"], nets["S"], nets["V"]), meta


def resolve_checkpoint(path) -> Path:
    """Accept either a checkpoint file or a run directory containing one."""
    path = Path(path)
    return path / "checkpoint.json" if path.is_dir() else path


# ------------------------------------------------------------------ runs ---


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def write_report(out_dir, report) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    write_json(out / "timings.json", {"wall_times": report.wall_times})
    return out / "report.json"


def write_run(out_dir, result) -> Path:
    """config.yaml, report.json, timings.json, checkpoint.json and paths.csv."""
    from .orchestrator import _meta

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(result.config))
    write_report(out, result.report)
    save_checkpoint(out / "checkpoint.json", result.networks,
                    _meta(result.config, result.model, len(result.report.records)))
    write_paths_csv(out / "paths.csv", result.state)
    return out


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.9g}" if isinstance(v, (float, np.floating)) else v for v in row])


def grid_from_meta(meta: dict) -> TimeGrid:
    g = meta["config"]["grid"]
    return TimeGrid(g["T"], g["N"])
