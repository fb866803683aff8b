"""Batch generation of (feature, echo-time) records with reproducible
seeding, pruning, splits, and binary persistence.

Every record is a pure function of (master_seed, index): the scene, the
source excerpt, and any added noise all derive their generators from those
two integers, so files are byte-identical across runs and worker counts.
Records whose image-pair time difference falls below 1e-6 s are pruned:
at that point the feature-to-time mapping stops being unique.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import (
    FEATURE_DIM,
    Signal,
    add_noise_snr,
    convolve,
    features,
    peak_normalize,
    read_wav,
    stft,
    white_noise,
)
from .errors import FormatError
from .geometry import echo_times
from .roomsim import SceneSpec, rt60_sabine, sample_scene, simulate_rir

log = logging.getLogger(__name__)

DATASET_MAGIC = b"MIRD"
DATASET_VERSION = 1
PRUNE_THRESHOLD = 1e-6  # s, on |itdoa|

RECORD_DTYPE = np.dtype([
    ("x", "<f4", (FEATURE_DIM,)),
    ("v", "<f8", (3,)),
    ("rt60", "<f8"),
])

CONDITIONS = ("wn", "wn+n", "sp", "sp+n")
NOISE_SNR_DB = 10.0


def condition_params(condition: str) -> tuple[str, float | None]:
    """Map a condition name to (source_kind, snr_db)."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    kind = "white" if condition.startswith("wn") else "wav"
    snr = NOISE_SNR_DB if condition.endswith("+n") else None
    return kind, snr


def derive_seeds(master_seed: int, index: int, condition_salt: int = 0):
    """Scene/source/noise seeds for one record. The scene and source depend
    only on (master_seed, index) so conditions share them; noise is salted."""
    st = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(
        2, np.uint64)
    nst = np.random.SeedSequence(
        [int(master_seed), int(index), 7919 + int(condition_salt)]
    ).generate_state(2, np.uint64)
    return int(st[0]), int(st[1]), (int(nst[0]), int(nst[1]))


def synthesize_audio(scene: SceneSpec, source_kind: str, source_seed: int,
                     noise_seeds, snr_db: float | None,
                     wav_path: str | None = None) -> tuple[Signal, Signal]:
    """Both microphone signals for a scene, reproducible from the seeds."""
    fs = scene.constants.fs
    if source_kind == "white":
        src = white_noise(1.0, source_seed, fs=fs)
    elif source_kind == "wav":
        if wav_path is None:
            raise ValueError("wav source requested but no file given")
        src = peak_normalize(read_wav(wav_path, target_fs=fs))
    else:
        raise ValueError(f"unknown source kind {source_kind!r}")
    sigs = []
    for mic_index, noise_seed in zip((1, 2), noise_seeds):
        rir = simulate_rir(scene, mic_index)
        sig = convolve(src, rir)
        if snr_db is not None and np.isfinite(snr_db):
            sig = add_noise_snr(sig, snr_db, noise_seed)
        sigs.append(sig)
    return sigs[0], sigs[1]


def record_from_scene(scene: SceneSpec, source_kind: str, source_seed: int,
                      noise_seeds, snr_db: float | None,
                      wav_path: str | None = None):
    """Feature/target record for one scene, or None when pruned."""
    v = echo_times(scene.mics, scene.source, scene.room, scene.close_face,
                   scene.constants)
    if abs(v.itdoa) < PRUNE_THRESHOLD:
        return None
    sig1, sig2 = synthesize_audio(scene, source_kind, source_seed, noise_seeds,
                                  snr_db, wav_path)
    x = features(stft(sig1), stft(sig2))
    rec = np.zeros((), dtype=RECORD_DTYPE)
    rec["x"] = x.astype("<f4")
    rec["v"] = v.as_array()
    rec["rt60"] = rt60_sabine(scene)
    return rec


def generate_record(master_seed: int, index: int, source_kind: str = "white",
                    snr_db: float | None = None, wav_files=None,
                    condition_salt: int = 0):
    """One (meta, record) pair; record is None when pruned or failed."""
    scene_seed, source_seed, noise_seeds = derive_seeds(master_seed, index,
                                                        condition_salt)
    scene = sample_scene(scene_seed)
    wav_path = None
    if source_kind == "wav":
        if not wav_files:
            raise ValueError("wav source kind needs a non-empty file list")
        wav_path = str(wav_files[index % len(wav_files)])
    meta = {
        "index": int(index),
        "scene": scene.to_dict(),
        "source_kind": source_kind,
        "snr_db": None if snr_db is None else float(snr_db),
        "source_seed": source_seed,
        "noise_seeds": list(noise_seeds),
        "wav": wav_path,
    }
    try:
        rec = record_from_scene(scene, source_kind, source_seed, noise_seeds,
                                snr_db, wav_path)
    except Exception:
        log.exception("record %d failed; skipping", index)
        meta["failed"] = True
        return meta, None
    return meta, rec


def _worker(args):
    return generate_record(*args)


def _map_records(tasks, parallelism: int):
    if parallelism <= 1:
        return [_worker(t) for t in tasks]
    with multiprocessing.Pool(parallelism) as pool:
        return pool.map(_worker, tasks, chunksize=4)


@dataclass
class Dataset:
    """In-memory view of a dataset file."""

    x: np.ndarray      # (n, FEATURE_DIM) float64
    v: np.ndarray      # (n, 3) float64, (tdoa, itdoa, tdoe) seconds
    rt60: np.ndarray   # (n,)
    entries: list | None = None  # scene sidecar, aligned with rows

    def __len__(self):
        return self.x.shape[0]


def _rt60_stats(rt60s) -> dict:
    a = np.asarray(rt60s, dtype=float)
    if a.size == 0:
        return {"count": 0}
    return {
        "count": int(a.size),
        "min": float(a.min()),
        "max": float(a.max()),
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "frac_in_20_300_ms": float(np.mean((a >= 0.02) & (a <= 0.30))),
    }


def write_dataset(out_path, metas: list, records: list) -> dict:
    """Binary record file plus `.scenes.json` and `.stats.json` sidecars."""
    out_path = Path(out_path)
    arr = np.stack(records) if records else np.empty(0, dtype=RECORD_DTYPE)
    with open(out_path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", DATASET_VERSION, len(records), FEATURE_DIM))
        fh.write(arr.astype(RECORD_DTYPE, copy=False).tobytes())
    with open(f"{out_path}.scenes.json", "w") as fh:
        json.dump(metas, fh, indent=1, sort_keys=True)
    stats = {
        "kept": len(records),
        "rt60": _rt60_stats([float(r["rt60"]) for r in records]),
    }
    return stats


def generate_dataset(n: int, master_seed: int, out_path,
                     parallelism: int = 1, source_kind: str = "white",
                     snr_db: float | None = None, wav_dir=None,
                     condition_salt: int = 0, exact_n: bool = False) -> dict:
    """Generate `n` records (attempts, unless exact_n) into a dataset file.

    Pruned attempts are excluded from the file and counted in the stats; in
    exact-n mode further indices are drawn until `n` records are kept.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    wav_files = _list_wavs(wav_dir) if source_kind == "wav" else None
    if source_kind == "wav" and not wav_files:
        raise ValueError(f"no WAV files found in {wav_dir!r}")

    metas, records = [], []
    attempted = pruned = failed = 0
    next_index = 0
    while True:
        want = n - (len(records) if exact_n else attempted)
        if want <= 0:
            break
        tasks = [(master_seed, i, source_kind, snr_db, wav_files, condition_salt)
                 for i in range(next_index, next_index + want)]
        next_index += want
        for meta, rec in _map_records(tasks, parallelism):
            attempted += 1
            if rec is None:
                if meta.get("failed"):
                    failed += 1
                else:
                    pruned += 1
                continue
            metas.append(meta)
            records.append(rec)
        if not exact_n:
            break

    stats = write_dataset(out_path, metas, records)
    stats.update({
        "attempted": attempted,
        "pruned": pruned,
        "failed": failed,
        "prune_rate": pruned / attempted if attempted else 0.0,
        "master_seed": int(master_seed),
        "source_kind": source_kind,
        "snr_db": None if snr_db is None else float(snr_db),
    })
    with open(f"{out_path}.stats.json", "w") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
    return stats


def load_dataset(path, with_scenes: bool = True, validate: bool = True) -> Dataset:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != DATASET_MAGIC:
            raise FormatError("not a dataset file (bad magic)")
        version, count, dim = struct.unpack("<III", head[4:16])
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        if dim != FEATURE_DIM:
            raise FormatError(f"dataset feature dim {dim} != {FEATURE_DIM}")
        body = fh.read()
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise FormatError(f"expected {count} records "
                          f"({count * RECORD_DTYPE.itemsize} bytes), "
                          f"found {len(body)} bytes")
    arr = np.frombuffer(body, dtype=RECORD_DTYPE)
    ds = Dataset(
        x=arr["x"].astype(float).reshape(count, FEATURE_DIM),
        v=arr["v"].astype(float).reshape(count, 3),
        rt60=arr["rt60"].astype(float).reshape(count),
    )
    if validate and count:
        if not np.all(np.isfinite(ds.x)):
            raise FormatError("dataset contains non-finite features")
        if np.min(np.abs(ds.v[:, 1])) < PRUNE_THRESHOLD:
            raise FormatError("dataset contains records below the prune "
                              "threshold on |itdoa|")
    if with_scenes:
        sidecar = Path(f"{path}.scenes.json")
        if sidecar.exists():
            with open(sidecar) as fh:
                ds.entries = json.load(fh)
            if len(ds.entries) != count:
                raise FormatError("scene sidecar length does not match record "
                                  "count")
    return ds


def split(n_records: int, fractions=(0.9, 0.1), seed: int = 0):
    """Disjoint covering index split by seeded shuffle."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if len(fractions) != 2:
        raise ValueError("exactly two fractions (train, val) are supported")
    perm = np.random.default_rng(seed).permutation(n_records)
    n_train = int(round(fractions[0] * n_records))
    train_idx, val_idx = perm[:n_train], perm[n_train:]
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError(f"split of {n_records} records leaves an empty side")
    return np.sort(train_idx), np.sort(val_idx)


def _list_wavs(wav_dir):
    if wav_dir is None:
        return []
    return sorted(str(p) for p in Path(wav_dir).glob("*.wav"))


def generate_testset(n: int = 200, master_seed: int = 0,
                     conditions=CONDITIONS, out_dir=".", wav_dir=None,
                     parallelism: int = 1) -> dict:
    """One dataset file per condition, all reusing the same scenes.

    White-noise and speech variants share scene and source seeds per index;
    only the added-noise stream is salted per condition. Speech files are
    taken round-robin from `wav_dir` (mono, peak-normalized, resampled to
    16 kHz when needed).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    needs_wavs = any(c.startswith("sp") for c in conditions)
    if needs_wavs and not _list_wavs(wav_dir):
        raise ValueError(f"speech conditions need WAV files; none in {wav_dir!r}")
    paths = {}
    for salt, cond in enumerate(CONDITIONS):
        if cond not in conditions:
            continue
        kind, snr = condition_params(cond)
        path = out_dir / f"test_{cond}.mird"
        generate_dataset(n, master_seed, path, parallelism=parallelism,
                         source_kind=kind, snr_db=snr, wav_dir=wav_dir,
                         condition_salt=salt)
        paths[cond] = path
    return paths
