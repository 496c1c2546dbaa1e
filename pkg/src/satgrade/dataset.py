"""Patch extraction and deterministic LR/HR training-set generation."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degradation import DegradeConfig, DegradeRecipe, as_image, degrade, mix_seed
from .errors import CorruptFile, InsufficientData, InvalidArgument
from .formats import decode_pair, encode_pair

DEFAULT_PATCH = 310
DEFAULT_COUNT = 20000
MANIFEST = "manifest.json"


def default_stride(patch: int) -> int:
    return max(1, patch // 4)


def patch_offsets(shape, patch: int, stride: int):
    h, w = shape[:2]
    if patch < 1 or stride < 1:
        raise InvalidArgument(f"patch and stride must be positive, got {patch}, {stride}")
    if patch > min(h, w):
        raise InvalidArgument(f"patch {patch} does not fit a {h}x{w} image")
    return [(r, c) for r in range(0, h - patch + 1, stride) for c in range(0, w - patch + 1, stride)]


def extract_patches(image, patch: int, stride: int) -> list[np.ndarray]:
    """All fully contained ``patch x patch`` windows on a ``stride`` lattice, row-major."""
    img = as_image(image)
    return [img[r : r + patch, c : c + patch].copy() for r, c in patch_offsets(img.shape, patch, stride)]


@dataclass(frozen=True)
class TrainingPair:
    lr: np.ndarray
    hr: np.ndarray
    recipe: DegradeRecipe

    def to_bytes(self) -> bytes:
        return encode_pair(self.lr, self.hr, self.recipe.to_json().encode())

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrainingPair":
        lr, hr, recipe = decode_pair(data)
        return cls(lr, hr, DegradeRecipe.from_json(recipe.decode()))

    def recipe_digest(self) -> str:
        return sha256(self.recipe.to_json().encode())


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def pair_name(i: int) -> str:
    return f"pair_{i:06d}.sgp"


# worker state for process pools; set once per worker by the initializer
_WORKER = {}


def _init_worker(sources, config, patch, master_seed, out_dir):
    _WORKER.update(sources=sources, config=config, patch=patch, master_seed=master_seed, out_dir=out_dir)


def _make_pair(task):
    i, (src, r, c) = task
    w = _WORKER
    p = w["patch"]
    # round to the stored precision first so a pair replays exactly from its own HR block
    hr = np.asarray(w["sources"][src][r : r + p, c : c + p], dtype=np.float32).astype(np.float64)
    lr, recipe = degrade(hr, w["config"], mix_seed(w["master_seed"], i))
    pair = TrainingPair(lr, hr, recipe)
    Path(w["out_dir"], pair_name(i)).write_bytes(pair.to_bytes())
    return pair.recipe_digest()


def generate_dataset(sources, config: DegradeConfig, count: int = DEFAULT_COUNT, patch: int = DEFAULT_PATCH,
                     master_seed: int = 0, out_dir=".", stride: int | None = None, jobs: int = 1,
                     holdout: float = 0.0, source_names=None) -> dict:
    """Cut, shuffle, degrade and serialise ``count`` pairs into ``out_dir``.

    Patches are enumerated over every source in order, shuffled with
    ``master_seed`` and the first ``count`` are kept.  Pair ``i`` is degraded
    with ``mix_seed(master_seed, i)``, so the output does not depend on
    ``jobs``.  The last ``round(holdout * count)`` pairs are marked as
    holdout in the manifest.  Returns the manifest dictionary.
    """
    if count < 0:
        raise InvalidArgument(f"count must be >= 0, got {count}")
    if not 0.0 <= holdout < 1.0:
        raise InvalidArgument(f"holdout fraction must lie in [0, 1), got {holdout}")
    stride = default_stride(patch) if stride is None else int(stride)
    sources = [as_image(s) for s in sources]
    if any(s.ndim != 3 or s.shape[2] != 3 for s in sources):
        raise InvalidArgument("dataset sources must be 3-channel images")
    if source_names is None:
        source_names = [f"source{i}" for i in range(len(sources))]

    index = [
        (si, r, c)
        for si, s in enumerate(sources)
        if min(s.shape[:2]) >= patch
        for r, c in patch_offsets(s.shape, patch, stride)
    ]
    if count > len(index):
        raise InsufficientData(count, len(index))
    order = np.random.default_rng(master_seed).permutation(len(index))[:count]
    tasks = [(i, index[j]) for i, j in enumerate(order)]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    init_args = (sources, config, patch, master_seed, str(out_dir))
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=init_args) as pool:
            digests = list(pool.map(_make_pair, tasks, chunksize=max(1, count // (4 * jobs))))
    else:
        _init_worker(*init_args)
        digests = [_make_pair(t) for t in tasks]

    n_hold = int(round(holdout * count))
    manifest = {
        "version": 1,
        "count": count,
        "patch_size": patch,
        "stride": stride,
        "scale_nominal": config.scale_nominal,
        "master_seed": int(master_seed),
        "config_digest": sha256(config.to_json().encode()),
        "config": config.to_dict(),
        "holdout_count": n_hold,
        "pairs": [
            {
                "file": pair_name(i),
                "recipe_sha256": d,
                "source": source_names[index[j][0]],
                "row": index[j][1],
                "col": index[j][2],
                "split": "holdout" if i >= count - n_hold else "train",
            }
            for (i, j), d in zip(enumerate(order), digests)
        ],
    }
    (out_dir / MANIFEST).write_text(dump_manifest(manifest))
    return manifest


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=1) + "\n"


def load_manifest(out_dir, verify=True) -> dict:
    """Read ``manifest.json``; with ``verify`` check every pair file against it."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST).read_text())
    if manifest["count"] != len(manifest["pairs"]):
        raise CorruptFile(f"manifest lists {len(manifest['pairs'])} pairs but count is {manifest['count']}")
    if verify:
        on_disk = sorted(p.name for p in out_dir.glob("pair_*.sgp"))
        listed = sorted(e["file"] for e in manifest["pairs"])
        if on_disk != listed:
            raise CorruptFile("pair files on disk do not match the manifest")
        for entry in manifest["pairs"]:
            load_pair(out_dir / entry["file"], entry["recipe_sha256"])
    return manifest


def load_pair(path, expected_digest: str | None = None) -> TrainingPair:
    data = Path(path).read_bytes()
    lr, hr, recipe_bytes = decode_pair(data)
    if expected_digest is not None and sha256(recipe_bytes) != expected_digest:
        raise CorruptFile(f"{path}: recipe digest does not match the manifest")
    return TrainingPair(lr, hr, DegradeRecipe.from_json(recipe_bytes.decode()))


def load_pairs(out_dir, split: str | None = None) -> list[TrainingPair]:
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir, verify=False)
    return [
        load_pair(out_dir / e["file"], e["recipe_sha256"])
        for e in manifest["pairs"]
        if split is None or e.get("split", "train") == split
    ]


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("SATGRADE_THREADS", "1")))
    except ValueError:
        return 1
