import json
import os

import numpy as np

from xmseg.errors import ConfigError
from xmseg.logging import corrupt, warn

config_path = os.path.join(os.path.dirname(__file__), "config.json")

# load configuration
try:
    with open(config_path, "r") as f:
        config = json.load(f)
except json.decoder.JSONDecodeError:
    raise ConfigError("Invalid configuration file.")

MANIFEST_ATTRS_REQUIRED = {
    "scenario": str,
    "version": int,
    "source_profile": str,
    "target_profile": str,
    "classes": list,
    "splits": dict,
}


def write_json(path, obj):
    """Writes through a temporary file so readers never see a partial manifest."""
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=False)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def write_array(path, arr, dtype):
    """Flat little-endian binary, shape and dtype live in the sample's meta file."""
    np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tofile(path)


def read_array(path, dtype, shape):
    arr = np.fromfile(path, dtype=np.dtype(dtype).newbyteorder("<"))
    return arr.reshape(shape)


def scan_dataset_root(root=None):
    """
    Lists materialized scenarios below ``root`` together with their manifests.
    Manifests with missing or mistyped entries are reported but still listed.
    """
    root = root or config["dataset_root"]
    if not os.path.isdir(root):
        warn(f"{root} is not a valid directory. No local scenarios will be available.")
        return {}

    index = {}
    for entry in sorted(os.listdir(root)):
        manifest_path = os.path.join(root, entry, config["manifest_name"])
        if not os.path.isfile(manifest_path):
            continue
        try:
            manifest = read_json(manifest_path)
        except json.decoder.JSONDecodeError:
            corrupt(f"'{entry}' has an unreadable manifest.")
            continue
        check_manifest_attrs(manifest, entry)
        index[entry] = manifest
    return index


def check_manifest_attrs(manifest, name):
    missing_keys = MANIFEST_ATTRS_REQUIRED.keys() - manifest.keys()
    incorrect_types = {
        key: type(manifest[key])
        for key in MANIFEST_ATTRS_REQUIRED.keys() & manifest.keys()
        if not isinstance(manifest[key], MANIFEST_ATTRS_REQUIRED[key])
    }

    if missing_keys:
        warn(f"'{name}' is missing manifest entries: {', '.join(sorted(missing_keys))}")
    if incorrect_types:
        warn(
            f"'{name}' has manifest entries with wrong type: {', '.join(f'{key} (expected {MANIFEST_ATTRS_REQUIRED[key].__name__}, got {incorrect_types[key].__name__})' for key in incorrect_types)}"
        )
    return not (missing_keys or incorrect_types)
