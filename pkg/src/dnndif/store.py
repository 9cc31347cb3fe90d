"""File formats: response and label vectors, model documents, study configs.

Response and label files are single-column CSVs with header ``x`` and one
``0``/``1`` value per line, the layout R's ``write.csv`` produces for a bare
vector.  Readers also accept the quoted header ``"x"`` and CRLF line endings
so corpora written by the original R script load unchanged.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .simgen import ResponseDataset

_ACCEPTED_HEADERS = (b"x", b'"x"')


def _write_binary_vector(vector, path) -> None:
    vector = np.asarray(vector)
    if vector.size and not np.isin(vector, (0, 1)).all():
        raise FormatError(f"{path}: values must be 0 or 1")
    buf = np.empty(2 * vector.size, dtype=np.uint8)
    buf[0::2] = vector.astype(np.uint8) + ord("0")
    buf[1::2] = ord("\n")
    with open(path, "wb") as fh:
        fh.write(b"x\n")
        fh.write(buf.tobytes())


def _read_binary_vector(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if b"\r" in raw:
        raw = raw.replace(b"\r\n", b"\n")
    head, sep, body = raw.partition(b"\n")
    if head.strip() not in _ACCEPTED_HEADERS:
        raise FormatError(f"{path}:1: expected header 'x', got {head[:20]!r}")
    if body and not body.endswith(b"\n"):
        body += b"\n"
    arr = np.frombuffer(body, dtype=np.uint8)
    if arr.size % 2 == 0 and (arr[1::2] == ord("\n")).all():
        values = arr[0::2] - ord("0")
        bad = np.flatnonzero(values > 1)
        if bad.size == 0:
            return values.astype(np.uint8)
        line = int(bad[0]) + 2
        raise FormatError(f"{path}:{line}: value must be 0 or 1, got {chr(arr[2 * bad[0]])!r}")
    # irregular layout: fall back to line-by-line parsing
    values = []
    for lineno, text in enumerate(body.split(b"\n")[:-1], start=2):
        token = text.strip().strip(b'"')
        if token not in (b"0", b"1"):
            raise FormatError(f"{path}:{lineno}: value must be 0 or 1, got {text[:20]!r}")
        values.append(token == b"1")
    return np.asarray(values, dtype=np.uint8)


def write_response_file(dataset: ResponseDataset, path) -> None:
    _write_binary_vector(dataset.flatten(), path)


def read_response_file(path, n_groups: int, n_items: int, n_per_group: int) -> ResponseDataset:
    vector = read_response_vector(path, n_groups * n_items * n_per_group)
    return ResponseDataset.from_flat(vector, n_groups, n_items, n_per_group)


def read_response_vector(path, expected_length: int) -> np.ndarray:
    """Flat response vector in file order, checked against ``expected_length``."""
    vector = _read_binary_vector(path)
    if vector.size != expected_length:
        raise ShapeError(f"{path}: expected {expected_length} values, found {vector.size}")
    return vector


def write_label_file(labels, path) -> None:
    labels = np.asarray(labels)
    if labels.size % 2:
        raise ShapeError("label vector must have even length (threshold half + loading half)")
    _write_binary_vector(labels, path)


def read_label_file(path, n_groups: int, n_items: int) -> np.ndarray:
    labels = _read_binary_vector(path)
    expected = 2 * n_groups * n_items
    if labels.size != expected:
        raise ShapeError(f"{path}: expected {expected} labels, found {labels.size}")
    return labels


def split_labels(labels, target: str) -> np.ndarray:
    """Threshold or loading half of a label vector (or a stack of them)."""
    labels = np.asarray(labels)
    half = labels.shape[-1] // 2
    if target == "thresholds":
        return labels[..., :half]
    if target == "loadings":
        return labels[..., half:]
    raise ConfigError(f"target must be 'thresholds' or 'loadings', got {target!r}")


# ---------------------------------------------------------------- JSON documents

def _fmt_array(arr) -> str:
    flat = np.asarray(arr, dtype=np.float64).ravel()
    return "[" + ",".join(["%.17g" % v for v in flat.tolist()]) + "]"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_model(net, path, metadata: dict | None = None, cutpoint: float | None = None) -> None:
    """Serialize a :class:`dnndif.dnn.Network` as a versioned JSON document."""
    from .dnn import MODEL_VERSION

    arch = net.architecture.to_dict()
    meta = json.dumps(metadata or {}, sort_keys=True)
    parts = ['{"version":%d' % MODEL_VERSION,
             '"architecture":' + json.dumps(arch, sort_keys=True),
             '"training":' + meta,
             '"cutpoint":' + ("null" if cutpoint is None else "%.17g" % cutpoint),
             '"dropout":%.17g' % net.dropout,
             '"bn_momentum":%.17g' % net.bn_momentum,
             '"bn_epsilon":%.17g' % net.bn_eps]
    layers = ",".join('{"shape":[%d,%d],"weights":%s}' % (w.shape[0], w.shape[1], _fmt_array(w))
                      for w in net.weights)
    parts.append('"layers":[' + layers + "]")
    bn = {"gamma": net.bn_gamma, "beta": net.bn_beta,
          "running_mean": net.bn_mean, "running_var": net.bn_var}
    parts.append('"batch_norm":{' + ",".join('"%s":%s' % (k, _fmt_array(v)) for k, v in bn.items()) + "}")
    atomic_write_text(path, ",".join(parts) + "}\n")


def read_model(path):
    """Load a model document; returns ``(network, training_metadata, cutpoint)``."""
    from .dnn import MODEL_VERSION, Architecture, Network

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: malformed model document: {exc.msg}") from exc
    try:
        if doc["version"] != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version {doc['version']}")
        arch = Architecture.from_dict(doc["architecture"])
        weights = []
        for k, layer in enumerate(doc["layers"]):
            rows, cols = layer["shape"]
            w = np.asarray(layer["weights"], dtype=np.float64)
            if w.size != rows * cols:
                raise FormatError(f"{path}: layers[{k}] has {w.size} weights, shape says {rows}x{cols}")
            weights.append(w.reshape(rows, cols))
        bn = {k: np.asarray(v, dtype=np.float64) for k, v in doc["batch_norm"].items()}
        net = Network(
            architecture=arch,
            weights=weights,
            bn_gamma=bn["gamma"],
            bn_beta=bn["beta"],
            bn_mean=bn["running_mean"],
            bn_var=bn["running_var"],
            dropout=doc["dropout"],
            bn_momentum=doc["bn_momentum"],
            bn_eps=doc["bn_epsilon"],
        )
    except KeyError as exc:
        raise FormatError(f"{path}: model document missing field {exc}") from exc
    net.check()
    return net, doc.get("training", {}), doc.get("cutpoint")


# ---------------------------------------------------------------- study configs

CONFIG_SECTIONS = ("simulation", "train", "architecture", "condition")


def read_config(path) -> dict:
    """Parse and validate a study config document.

    Returns a dict with whichever of ``simulation`` (SimulationConfig),
    ``train`` (TrainConfig), ``architecture`` (profile/width overrides) and
    ``condition`` (StudyCondition overrides) are present.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: malformed config: {exc.msg}") from exc
    return parse_config(doc, source=str(path))


def parse_config(doc: dict, source: str = "<config>") -> dict:
    from .dnn import TrainConfig
    from .pipeline import StudyCondition
    from .simgen import SimulationConfig

    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")
    out = {}
    try:
        if "simulation" in doc:
            out["simulation"] = SimulationConfig.from_dict(doc["simulation"])
        if "train" in doc:
            out["train"] = TrainConfig.from_dict(doc["train"])
        if "architecture" in doc:
            arch = dict(doc["architecture"])
            bad = set(arch) - {"profile", "hidden_widths"}
            if bad:
                raise ConfigError(f"unknown architecture keys {sorted(bad)}")
            out["architecture"] = arch
        if "condition" in doc:
            out["condition"] = StudyCondition.from_dict(doc["condition"])
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return out


def write_config(config: dict, path) -> None:
    doc = {}
    for key, value in config.items():
        if key not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown section {key!r}")
        doc[key] = value.to_dict() if hasattr(value, "to_dict") else value
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_flag_csv(flags, path) -> None:
    """Baseline flags, one row per (replication, group, item)."""
    lines = ["replication,group,item,threshold_flag,loading_flag"]
    for r, fm in enumerate(flags, start=1):
        if fm is None:
            continue
        for g in range(fm.threshold_flags.shape[0]):
            for i in range(fm.threshold_flags.shape[1]):
                lines.append(f"{r},{g + 1},{i + 1},{int(fm.threshold_flags[g, i])},{int(fm.loading_flags[g, i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_flag_csv(path, n_replications: int, n_groups: int, n_items: int) -> list:
    """Inverse of :func:`write_flag_csv`; replications without rows come back as ``None``."""
    from .logitdif import FlagMatrix

    lines = Path(path).read_text().replace("\r\n", "\n").splitlines()
    if not lines or lines[0].strip() != "replication,group,item,threshold_flag,loading_flag":
        raise FormatError(f"{path}:1: unexpected header")
    thr = np.zeros((n_replications, n_groups, n_items), dtype=bool)
    load = np.zeros_like(thr)
    seen = np.zeros(n_replications, dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            r, g, i, t, lo = (int(v) for v in line.split(","))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected five integers, got {line[:40]!r}") from None
        if not (1 <= r <= n_replications and 1 <= g <= n_groups and 1 <= i <= n_items) or t not in (0, 1) \
                or lo not in (0, 1):
            raise FormatError(f"{path}:{lineno}: value out of range: {line!r}")
        thr[r - 1, g - 1, i - 1] = t
        load[r - 1, g - 1, i - 1] = lo
        seen[r - 1] = True
    return [FlagMatrix(thr[k], load[k]) if seen[k] else None for k in range(n_replications)]
