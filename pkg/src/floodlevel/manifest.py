"""Dataset manifests and the pair-label wire format.

A manifest is a JSON Lines file, one sample per line, with fields
``id``, ``image_uri``, ``depth_cm``, ``level`` and ``source_flooded``.
Strong manifests carry absolute depths; weak manifests carry only the
discrete level used to derive pairwise orderings.

Pair labels use a second JSONL format with fields ``id_a``, ``id_b``,
``sign`` (+1/-1) and an optional ``confidence`` in (0.5, 1.0].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .levels import MAX_DEPTH_CM, MAX_LEVEL, level_to_cm

# tolerated gap between a record's level anchor and its stated depth
LEVEL_DEPTH_TOLERANCE_CM = 0.5


class ManifestError(ValueError):
    """Raised when a manifest file or record is malformed."""


@dataclass
class SampleRecord:
    id: str
    image_uri: str
    depth_cm: Optional[float] = None
    level: Optional[int] = None
    source_flooded: bool = True

    def __post_init__(self):
        if not self.id:
            raise ManifestError("record id must be a non-empty string")
        if self.depth_cm is None and self.level is None:
            raise ManifestError(f"record {self.id!r} has neither depth_cm nor level")
        if self.level is not None:
            if self.level != int(self.level) or not 0 <= self.level <= MAX_LEVEL:
                raise ManifestError(
                    f"record {self.id!r}: level {self.level!r} not an integer in [0, 10]"
                )
            self.level = int(self.level)
        if self.depth_cm is not None:
            if not 0.0 <= self.depth_cm <= MAX_DEPTH_CM:
                raise ManifestError(
                    f"record {self.id!r}: depth {self.depth_cm!r} cm outside [0, {MAX_DEPTH_CM}]"
                )
            if self.level is not None:
                anchor = level_to_cm(self.level)
                if abs(anchor - self.depth_cm) > LEVEL_DEPTH_TOLERANCE_CM:
                    raise ManifestError(
                        f"record {self.id!r}: level {self.level} maps to {anchor} cm "
                        f"but depth_cm is {self.depth_cm}"
                    )

    def effective_level(self) -> int:
        """Discrete level for stratification: stored, else nearest to depth."""
        if self.level is not None:
            return self.level
        from .levels import cm_to_level

        return round(cm_to_level(self.depth_cm))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "image_uri": self.image_uri,
            "depth_cm": self.depth_cm,
            "level": self.level,
            "source_flooded": self.source_flooded,
        }


@dataclass
class DatasetManifest:
    name: str
    records: list[SampleRecord] = field(default_factory=list)
    label_kind: str = "strong"  # strong: absolute depths, weak: levels only

    def __post_init__(self):
        if self.label_kind not in ("strong", "weak"):
            raise ManifestError(f"unknown label_kind {self.label_kind!r}")
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, SampleRecord]:
        return {rec.id: rec for rec in self.records}

    def subset(self, ids: Iterable[str], name: str | None = None) -> "DatasetManifest":
        index = self.by_id()
        missing = [i for i in ids if i not in index]
        if missing:
            raise ManifestError(f"unknown record ids: {missing[:5]}")
        return DatasetManifest(
            name=name or self.name,
            records=[index[i] for i in ids],
            label_kind=self.label_kind,
        )


def with_absolute_labels(manifest: DatasetManifest, name: str | None = None) -> DatasetManifest:
    """Grant absolute depth labels to a level-annotated weak manifest.

    Used to build the fully supervised upper-bound training set: every
    record's depth becomes its level anchor.
    """
    records = []
    for rec in manifest.records:
        depth = rec.depth_cm if rec.depth_cm is not None else level_to_cm(rec.level)
        records.append(
            SampleRecord(
                id=rec.id,
                image_uri=rec.image_uri,
                depth_cm=depth,
                level=rec.level,
                source_flooded=rec.source_flooded,
            )
        )
    return DatasetManifest(name=name or f"{manifest.name}-abs", records=records,
                           label_kind="strong")


def merge_manifests(*manifests: DatasetManifest, name: str = "merged") -> DatasetManifest:
    """Concatenate manifests of the same label kind; ids must stay unique."""
    kinds = {m.label_kind for m in manifests}
    if len(kinds) != 1:
        raise ManifestError(f"cannot merge manifests of mixed label kinds {kinds}")
    records = [rec for m in manifests for rec in m.records]
    return DatasetManifest(name=name, records=records, label_kind=kinds.pop())


def load_manifest(path: str | Path, label_kind: str | None = None) -> DatasetManifest:
    """Read and validate a JSONL manifest; duplicate ids are rejected."""
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                records.append(
                    SampleRecord(
                        id=str(raw["id"]),
                        image_uri=str(raw.get("image_uri", "")),
                        depth_cm=raw.get("depth_cm"),
                        level=raw.get("level"),
                        source_flooded=bool(raw.get("source_flooded", True)),
                    )
                )
            except KeyError as exc:
                raise ManifestError(f"{path}:{lineno}: missing field {exc}") from exc
    kind = label_kind or ("strong" if any(r.depth_cm is not None for r in records) else "weak")
    return DatasetManifest(name=path.stem, records=records, label_kind=kind)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json()) + "\n")
    return path


@dataclass(frozen=True)
class PairLabel:
    id_a: str
    id_b: str
    sign: int
    confidence: Optional[float] = None

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ManifestError(f"pair sign must be +1 or -1, got {self.sign}")
        if self.confidence is not None and not 0.5 < self.confidence <= 1.0:
            raise ManifestError(f"confidence {self.confidence} outside (0.5, 1.0]")


def export_rank_dataset(manifest: DatasetManifest, path: str | Path) -> list[PairLabel]:
    """Emit all distinct ordered pairs implied by a weak manifest's levels.

    Equal-level pairs are omitted. Returns the labels that were written.
    """
    recs = manifest.records
    for rec in recs:
        if rec.level is None:
            raise ManifestError(f"record {rec.id!r} has no level; cannot derive pairs")
    labels = []
    for i in range(len(recs)):
        for j in range(i + 1, len(recs)):
            if recs[i].level > recs[j].level:
                labels.append(PairLabel(recs[i].id, recs[j].id, +1))
            elif recs[i].level < recs[j].level:
                labels.append(PairLabel(recs[i].id, recs[j].id, -1))
    save_pair_labels(labels, path)
    return labels


def save_pair_labels(labels: Iterable[PairLabel], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for lab in labels:
            row = {"id_a": lab.id_a, "id_b": lab.id_b, "sign": lab.sign}
            if lab.confidence is not None:
                row["confidence"] = lab.confidence
            fh.write(json.dumps(row) + "\n")
    return path


def load_pair_labels(path: str | Path) -> list[PairLabel]:
    labels = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            labels.append(
                PairLabel(
                    id_a=str(raw["id_a"]),
                    id_b=str(raw["id_b"]),
                    sign=int(raw["sign"]),
                    confidence=raw.get("confidence"),
                )
            )
    return labels
