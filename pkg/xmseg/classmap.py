"""
Class mapping tables.

Tables are tab-separated ``source<TAB>target`` rows under ``xmseg/tables`` with a
``# version:`` and a ``# classes:`` header. ``ignore`` as target drops the class;
ignored labels use the sentinel id ``C`` (one past the last class).
"""

import functools
import os
from dataclasses import dataclass

import numpy as np

from xmseg.errors import InvalidArgumentError, UnknownNameError

TABLES_DIR = os.path.join(os.path.dirname(__file__), "tables")
IGNORE = "ignore"


@dataclass(frozen=True)
class ClassMap:
    name: str
    classes: tuple
    entries: dict
    version: int = 1

    def __post_init__(self):
        unknown = {t for t in self.entries.values() if t is not None} - set(self.classes)
        if unknown:
            raise InvalidArgumentError(
                f"Class map `{self.name}` maps onto undeclared classes: {', '.join(sorted(unknown))}."
            )

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def ignore_id(self):
        return len(self.classes)

    @property
    def source_classes(self):
        return tuple(self.entries.keys())

    @classmethod
    def identity(cls, classes):
        classes = tuple(classes)
        return cls("identity", classes, {c: c for c in classes})

    def lookup_table(self):
        """Target id of every source class, in source order."""
        ids = {c: i for i, c in enumerate(self.classes)}
        return np.array(
            [self.ignore_id if t is None else ids[t] for t in self.entries.values()],
            dtype=np.int64,
        )


def parse_class_map(text, name):
    version, classes, entries = 1, None, {}
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            key = key.strip()
            if key == "version":
                version = int(value)
            elif key == "classes":
                classes = tuple(c.strip() for c in value.split(",") if c.strip())
            continue
        if not header_seen:
            header_seen = True
            if line.split("\t") == ["source", "target"]:
                continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise InvalidArgumentError(
                f"Class map `{name}` line {lineno}: expected two tab-separated columns."
            )
        source, target = fields[0].strip(), fields[1].strip()
        if source in entries:
            raise InvalidArgumentError(
                f"Class map `{name}` lists source class `{source}` more than once."
            )
        entries[source] = None if target == IGNORE else target

    if classes is None:
        raise InvalidArgumentError(f"Class map `{name}` has no `# classes:` header.")
    return ClassMap(name, classes, entries, version)


def available_class_maps():
    return sorted(
        os.path.splitext(f)[0] for f in os.listdir(TABLES_DIR) if f.endswith(".tsv")
    )


@functools.lru_cache(maxsize=None)
def load_class_map(name):
    path = os.path.join(TABLES_DIR, name + ".tsv")
    if not os.path.isfile(path):
        raise UnknownNameError("class map", name, available_class_maps())
    with open(path, "r", encoding="utf-8") as f:
        return parse_class_map(f.read(), name)


def map_classes(labels, cmap):
    """
    Maps source labels to target ids.

    ``labels`` holds source class names, or integer ids into ``cmap.source_classes``
    where ``len(source_classes)`` is the source ignore id and stays ignored.
    """
    labels = np.asarray(labels)

    if labels.dtype.kind in "USO":
        index = {c: i for i, c in enumerate(cmap.source_classes)}
        unknown = [str(l) for l in np.unique(labels) if str(l) not in index]
        if unknown:
            raise InvalidArgumentError(
                f"Class `{unknown[0]}` has no entry in class map `{cmap.name}`."
            )
        ids = np.array([index[str(l)] for l in labels.reshape(-1)], dtype=np.int64)
        ids = ids.reshape(labels.shape)
    elif labels.dtype.kind in "iu":
        ids = labels.astype(np.int64)
        source_ignore = len(cmap.source_classes)
        bad = (ids < 0) | (ids > source_ignore)
        if bad.any():
            raise InvalidArgumentError(
                f"Class id {int(ids[bad][0])} has no entry in class map `{cmap.name}`."
            )
    else:
        raise InvalidArgumentError(f"Labels must be class names or integer ids, got {labels.dtype}.")

    table = np.append(cmap.lookup_table(), cmap.ignore_id)
    return table[ids]
