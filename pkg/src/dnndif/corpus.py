"""Simulated corpora on disk: one response file and one label file per replication.

Layout, relative to the corpus directory (names follow the original R script)::

    manifest.json
    rep/rep1.csv    out/out1.csv
    rep/rep2.csv    out/out2.csv
    ...

Replication ``i`` (1-based) is generated from ``replication_rng(master_seed, i)``
so any replication can be regenerated on its own.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import store
from .errors import DnnDifError, FormatError
from .simgen import SimulationConfig, replication_rng, simulate_replication

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


class CorpusError(DnnDifError):
    """Failure while writing or reading a corpus, tagged with the replication index."""

    def __init__(self, index, message):
        super().__init__(f"replication {index}: {message}")
        self.index = index


@dataclass
class Corpus:
    root: Path
    config: SimulationConfig
    master_seed: int
    files: list

    @property
    def n_replications(self) -> int:
        return len(self.files)

    @property
    def n_groups(self) -> int:
        return self.config.n_groups

    @property
    def n_items(self) -> int:
        return self.config.n_items

    @property
    def n_per_group(self) -> int:
        return self.config.n_per_group

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    @property
    def n_cells(self) -> int:
        return self.config.n_cells

    def response_path(self, k: int) -> Path:
        return self.root / self.files[k]["responses"]

    def label_path(self, k: int) -> Path:
        return self.root / self.files[k]["labels"]

    def read(self, k: int):
        """``(ResponseDataset, labels)`` of replication ``k`` (0-based)."""
        c = self.config
        data = store.read_response_file(self.response_path(k), c.n_groups, c.n_items, c.n_per_group)
        return data, store.read_label_file(self.label_path(k), c.n_groups, c.n_items)

    def load_arrays(self):
        """All replications as ``(X, labels)``: uint8 arrays of flattened responses and labels."""
        X = np.empty((self.n_replications, self.input_dim), dtype=np.uint8)
        Y = np.empty((self.n_replications, 2 * self.n_cells), dtype=np.uint8)
        for k in range(self.n_replications):
            try:
                X[k] = store.read_response_vector(self.response_path(k), self.input_dim)
                Y[k] = store.read_label_file(self.label_path(k), self.n_groups, self.n_items)
            except (OSError, ValueError) as exc:
                raise CorpusError(k + 1, exc) from exc
        return X, Y

    def manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "n_groups": self.n_groups,
            "n_items": self.n_items,
            "n_per_group": self.n_per_group,
            "n_replications": self.n_replications,
            "master_seed": self.master_seed,
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "files": self.files,
        }

    def write_manifest(self) -> Path:
        path = self.root / MANIFEST
        store.atomic_write_text(path, json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return path


def _file_entry(index: int) -> dict:
    return {"responses": f"rep/rep{index}.csv", "labels": f"out/out{index}.csv"}


def write_replication(config: SimulationConfig, root, master_seed: int, index: int) -> dict:
    """Generate and write replication ``index`` (1-based)."""
    root = Path(root)
    entry = _file_entry(index)
    try:
        _, data, labels = simulate_replication(config, replication_rng(master_seed, index))
        for sub in ("rep", "out"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        store.write_response_file(data, root / entry["responses"])
        store.write_label_file(labels, root / entry["labels"])
    except OSError as exc:
        raise CorpusError(index, exc) from exc
    return entry


def _write_chunk(args):
    config_dict, root, master_seed, indices = args
    config = SimulationConfig.from_dict(config_dict)
    return [write_replication(config, root, master_seed, i) for i in indices]


def generate_corpus(config: SimulationConfig, n_replications: int, output_location, master_seed: int,
                    workers: int = 1) -> Corpus:
    """Write ``n_replications`` replications plus a manifest; return the corpus.

    Output is identical for any ``workers`` value since each replication has
    its own derived stream.
    """
    root = Path(output_location)
    indices = list(range(1, n_replications + 1))
    if workers > 1:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_write_chunk, [(config.to_dict(), str(root), master_seed, c) for c in chunks]))
        files = [_file_entry(i) for i in indices]
    else:
        files = [write_replication(config, root, master_seed, i) for i in indices]
    corpus = Corpus(root, config, int(master_seed), files)
    corpus.write_manifest()
    return corpus


def open_corpus(location) -> Corpus:
    root = Path(location)
    path = root / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{root}: no {MANIFEST}; use open_r_corpus for bare R output") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('version')}")
    config = SimulationConfig.from_dict(doc["config"])
    if doc["config_hash"] != config.digest():
        raise FormatError(f"{path}: config hash does not match config")
    return Corpus(root, config, int(doc["master_seed"]), doc["files"])


def open_r_corpus(location, n_groups: int, n_items: int, n_per_group: int) -> Corpus:
    """Wrap a directory of ``rep/repN.csv`` + ``out/outN.csv`` files written by the R script."""
    root = Path(location)
    n = 0
    while (root / "rep" / f"rep{n + 1}.csv").exists():
        n += 1
    if n == 0:
        raise FormatError(f"{root}: no rep/rep1.csv found")
    config = SimulationConfig(n_groups=n_groups, n_items=n_items, n_per_group=n_per_group)
    return Corpus(root, config, -1, [_file_entry(i) for i in range(1, n + 1)])
