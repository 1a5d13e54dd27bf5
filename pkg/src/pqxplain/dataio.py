"""Dataset container and on-disk formats.

One binary file per split: a fixed little-endian header carrying the
format version, geometry and synthesis settings, then per record the
class id, the fixed-width parameter slots and the three addends
(observed x, clean reference x0, disturbance component d) as float32.
A JSON-lines export mirrors the same fields for inspection.
"""

from dataclasses import dataclass
import json
import struct
from pathlib import Path

import numpy as np

from . import signals
from .seeding import spawn_rng
from .signals import (
    CLASS_NAMES,
    N_CLASSES,
    N_PARAM_SLOTS,
    DisturbanceParams,
    SignalConfig,
    Waveform,
)

MAGIC = b"PQD1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIddddBI")
_RECORD_HEAD = struct.Struct("<H")

EXTERNAL_CLASS_ID = 0xFFFF  # ingested records without ground truth


class DataIOError(RuntimeError):
    """Raised when a dataset file cannot be written or read."""


@dataclass
class SplitData:
    """All records of one split plus the config they were generated with."""

    config: SignalConfig
    split_id: int
    records: list

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) views for training/evaluation; X is (n, N) float64."""
        x = np.stack([w.x for w in self.records]).astype(np.float64)
        y = np.array([w.class_id for w in self.records], dtype=np.int64)
        return x, y

    def class_histogram(self) -> dict:
        counts = {}
        for w in self.records:
            counts[w.class_id] = counts.get(w.class_id, 0) + 1
        return counts


def generate_split(
    config: SignalConfig, class_counts: dict, split_id: int, seed: int
) -> SplitData:
    """Synthesize one split; deterministic given seed.

    ``class_counts`` maps class id -> record count. Records appear in
    class-id order; each record draws from its own derived RNG stream,
    so per-record synthesis is order-independent.
    """
    records = []
    for class_id in sorted(class_counts):
        if not 0 <= class_id < N_CLASSES:
            raise signals.ConfigurationError(f"invalid class id {class_id}")
        count = class_counts[class_id]
        if count <= 0:
            raise signals.ConfigurationError("class counts must be positive")
        for i in range(count):
            rng = spawn_rng(seed, "record", class_id, i)
            w = signals.synthesize_random(class_id, config, rng)
            w.split_id = split_id
            records.append(w)
    return SplitData(config=config, split_id=split_id, records=records)


def write_split(split: SplitData, path) -> None:
    path = Path(path)
    cfg = split.config
    try:
        with open(path, "wb") as fh:
            fh.write(
                _HEADER.pack(
                    MAGIC,
                    FORMAT_VERSION,
                    cfg.n_samples,
                    len(split.records),
                    cfg.cycles,
                    cfg.amplitude,
                    cfg.phase,
                    cfg.snr_db,
                    cfg.epsilon,
                    1 if cfg.random_phase else 0,
                    split.split_id,
                )
            )
            for w in split.records:
                fh.write(_RECORD_HEAD.pack(w.class_id))
                fh.write(w.params.to_slots().astype("<f4").tobytes())
                for arr in (w.x, w.x0, w.d):
                    fh.write(np.asarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write split file {path}: {exc}") from exc


def read_split(path) -> SplitData:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read split file {path}: {exc}") from exc
    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise DataIOError(f"{path} is not a dataset split file")
    (_, version, n, n_records, cycles, amplitude, phase, snr_db, epsilon,
     random_phase, split_id) = _HEADER.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise DataIOError(f"{path}: unsupported format version {version}")
    config = SignalConfig(
        n_samples=n,
        cycles=cycles,
        amplitude=amplitude,
        phase=phase,
        snr_db=snr_db,
        epsilon=epsilon,
        random_phase=bool(random_phase),
    )
    offset = _HEADER.size
    rec_bytes = _RECORD_HEAD.size + 4 * N_PARAM_SLOTS + 3 * 4 * n
    if len(blob) != offset + n_records * rec_bytes:
        raise DataIOError(f"{path}: truncated or oversized payload")
    records = []
    for _ in range(n_records):
        (class_id,) = _RECORD_HEAD.unpack_from(blob, offset)
        offset += _RECORD_HEAD.size
        slots = np.frombuffer(blob, dtype="<f4", count=N_PARAM_SLOTS, offset=offset)
        offset += 4 * N_PARAM_SLOTS
        arrays = []
        for _ in range(3):
            arrays.append(
                np.frombuffer(blob, dtype="<f4", count=n, offset=offset).astype(np.float64)
            )
            offset += 4 * n
        records.append(
            Waveform(
                x=arrays[0],
                x0=arrays[1],
                d=arrays[2],
                class_id=class_id,
                params=DisturbanceParams.from_slots(slots),
                split_id=split_id,
            )
        )
    return SplitData(config=config, split_id=split_id, records=records)


def write_split_jsonl(split: SplitData, path) -> None:
    """Inspection-friendly mirror of the binary format."""
    cfg = split.config
    try:
        with open(path, "w") as fh:
            header = {
                "format_version": FORMAT_VERSION,
                "n_samples": cfg.n_samples,
                "n_records": len(split.records),
                "cycles": cfg.cycles,
                "amplitude": cfg.amplitude,
                "phase": cfg.phase,
                "snr_db": cfg.snr_db,
                "epsilon": cfg.epsilon,
                "random_phase": cfg.random_phase,
                "split_id": split.split_id,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for w in split.records:
                rec = {
                    "class_id": int(w.class_id),
                    "class_name": CLASS_NAMES[w.class_id]
                    if w.class_id < N_CLASSES
                    else "external",
                    "params": [float(v) for v in w.params.to_slots()],
                    "x": np.asarray(w.x, dtype=np.float32).tolist(),
                    "x0": np.asarray(w.x0, dtype=np.float32).tolist(),
                    "d": np.asarray(w.d, dtype=np.float32).tolist(),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write jsonl file {path}: {exc}") from exc


def generate_dataset(
    config: SignalConfig,
    out_dir,
    seed: int,
    train_per_class: int = 1000,
    val_per_class: int = 100,
    test_per_class: int = 100,
    n_test_splits: int = 5,
    jsonl: bool = False,
) -> dict:
    """Write train/val/test split files; returns the manifest dict.

    Test splits contain every class (the normal class is used for
    accuracy only; localisation metrics skip it).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_classes = {cid: None for cid in range(N_CLASSES)}
    plan = [("train", 0, {c: train_per_class for c in all_classes})]
    if val_per_class > 0:
        plan.append(("val", 1, {c: val_per_class for c in all_classes}))
    for k in range(n_test_splits):
        plan.append((f"test_{k:02d}", 2 + k, {c: test_per_class for c in all_classes}))

    manifest = {
        "seed": seed,
        "config": {
            "n_samples": config.n_samples,
            "cycles": config.cycles,
            "amplitude": config.amplitude,
            "phase": config.phase,
            "snr_db": config.snr_db,
            "epsilon": config.epsilon,
            "random_phase": config.random_phase,
        },
        "splits": {},
    }
    for name, split_id, counts in plan:
        split = generate_split(config, counts, split_id, spawn_rng_seed(seed, name))
        path = out_dir / f"{name}.pqd"
        write_split(split, path)
        if jsonl:
            write_split_jsonl(split, out_dir / f"{name}.jsonl")
        manifest["splits"][name] = {
            "file": path.name,
            "n_records": len(split),
            "per_class": {CLASS_NAMES[c]: counts[c] for c in sorted(counts)},
        }
    with open(out_dir / "dataset_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def spawn_rng_seed(seed: int, name: str) -> int:
    from .seeding import child_seed

    return child_seed(seed, "split", name)


def load_dataset(data_dir) -> dict:
    """Load every split listed in a dataset manifest."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "dataset_manifest.json"
    if not manifest_path.exists():
        raise DataIOError(f"no dataset manifest in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    return {
        name: read_split(data_dir / info["file"])
        for name, info in manifest["splits"].items()
    }
