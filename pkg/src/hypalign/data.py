"""Feature-file I/O, pair manifests, and the synthetic hierarchical dataset.

Feature file layout (little-endian): magic ``H2AR``, version u32 = 1,
rows u32, cols u32, then rows*cols f32 values row-major.

The manifest is a tab-separated text file, one record per line:
``text_feature_path<TAB>pc_feature_path<TAB>group_id``. Paths are relative
to the manifest's directory; records sharing a group id are mutual positives.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SynthSpec
from .encoder import FeatureSequence
from .errors import FormatError, UsageError

MAGIC = b"H2AR"
VERSION = 1
MANIFEST_NAME = "manifest.tsv"


def write_features(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise UsageError("write_features: expected an L x D matrix")
    header = MAGIC + struct.pack("<III", VERSION, matrix.shape[0], matrix.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.tobytes())


def read_features(path, modality: str = "text") -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 16)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    expected = 16 + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, got {len(raw)} (payload starts "
            f"at byte offset 16)")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(rows, cols)
    return FeatureSequence(tokens=data.astype(np.float64), modality=modality)


@dataclass(frozen=True)
class ManifestRecord:
    text_feature_path: str
    pc_feature_path: str
    group_id: str


@dataclass
class PairManifest:
    records: list[ManifestRecord]
    root: Path

    def __post_init__(self):
        if not self.records:
            raise UsageError("PairManifest: no records")

    def group_ids(self) -> list[str]:
        return [r.group_id for r in self.records]


def write_manifest(path, records: list[ManifestRecord]) -> None:
    lines = [f"{r.text_feature_path}\t{r.pc_feature_path}\t{r.group_id}"
             for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> PairManifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        records.append(ManifestRecord(*parts))
    manifest = PairManifest(records=records, root=path.parent)
    for r in records:
        for rel in (r.text_feature_path, r.pc_feature_path):
            if not (manifest.root / rel).exists():
                raise FormatError(f"{path}: feature file {rel!r} does not resolve")
    return manifest


@dataclass
class PairDataset:
    """Fully loaded dataset: aligned text/pc token stacks plus group ids.

    Distinct records may share the same point-cloud file (several captions per
    object); instances are mutual positives iff their group ids match.
    """

    text: np.ndarray        # (N, L_t, D)
    pc: np.ndarray          # (N, L_p, D)
    group_ids: list[str]

    def __post_init__(self):
        if self.text.shape[0] != self.pc.shape[0] or \
                self.text.shape[0] != len(self.group_ids):
            raise UsageError("PairDataset: misaligned record counts")
        if self.text.shape[0] == 0:
            raise UsageError("PairDataset: empty dataset")

    def __len__(self) -> int:
        return self.text.shape[0]

    @property
    def width(self) -> int:
        return self.text.shape[2]

    @staticmethod
    def load(data_dir) -> "PairDataset":
        manifest = read_manifest(Path(data_dir) / MANIFEST_NAME)
        texts, pcs = [], []
        for r in manifest.records:
            texts.append(read_features(manifest.root / r.text_feature_path,
                                       "text").tokens)
            pcs.append(read_features(manifest.root / r.pc_feature_path,
                                     "pointcloud").tokens)
        return PairDataset(text=np.stack(texts), pc=np.stack(pcs),
                           group_ids=manifest.group_ids())


def synth_dataset(spec: SynthSpec, out_dir) -> PairManifest:
    """Generate class-prototype features with additive noise at 1/snr scale.

    Each class gets one point-cloud instance and ``captions_per_class`` text
    instances, all sharing the class's group id. Token rows are the latent
    prototype plus Gaussian noise scaled by 1/snr; prototypes are unit-norm.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    records = []
    for cls in range(spec.n_classes):
        proto = rng.normal(size=spec.width)
        proto /= np.linalg.norm(proto)
        pc_name = f"class{cls:03d}_pc.h2ar"
        pc = proto[None, :] + rng.normal(size=(spec.L_p, spec.width)) / spec.snr
        write_features(out_dir / pc_name, pc)
        for cap in range(spec.captions_per_class):
            text = proto[None, :] + rng.normal(size=(spec.L_t, spec.width)) / spec.snr
            text_name = f"class{cls:03d}_text{cap}.h2ar"
            write_features(out_dir / text_name, text)
            records.append(ManifestRecord(text_name, pc_name, f"class{cls:03d}"))
    write_manifest(out_dir / MANIFEST_NAME, records)
    return PairManifest(records=records, root=out_dir)
