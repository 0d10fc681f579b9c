"""
hdf5 checkpoints.

Layout::

    attrs   version, checkpoint_id, iteration, num_classes, model (JSON),
            config (JSON TrainConfig), metrics (JSON)
    params/<name>                  one little-endian dataset per parameter
    optim/<stream>/<i>/<key>       Adam moments per parameter index
    optim/<stream>.attrs           param_groups (JSON)
    rng/torch                      torch CPU generator state

Numpy randomness (shuffling, augmentation) is derived from the seed and the
iteration, so the torch generator is the only random state to persist.
"""

import json
import os
from dataclasses import dataclass, field

import h5py
import numpy as np
import torch

from xmseg.errors import InvalidArgumentError, ManifestViolationError
from xmseg.nets.model import XModalModel

CHECKPOINT_VERSION = 1


def _le(dtype):
    return np.dtype(dtype).newbyteorder("<")


def _native(arr):
    return torch.from_numpy(np.array(arr, dtype=arr.dtype.newbyteorder("=")))


def _to_numpy(tensor):
    arr = tensor.detach().cpu().numpy()
    return arr.astype(_le(arr.dtype))


@dataclass
class Checkpoint:
    checkpoint_id: str
    iteration: int
    num_classes: int
    model_config: dict
    config: dict
    params: dict
    optim_states: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    torch_rng: np.ndarray = None
    path: str = None

    def build_model(self):
        model = XModalModel(self.num_classes, **self.model_config)
        self.restore_model(model)
        return model

    def restore_model(self, model):
        state = model.state_dict()
        if set(state) != set(self.params):
            raise InvalidArgumentError(
                "Checkpoint parameters do not match the model: "
                f"{sorted(set(state) ^ set(self.params))[:5]}..."
            )
        model.load_state_dict(
            {
                k: _native(v).to(state[k].dtype)
                for k, v in self.params.items()
            }
        )
        return model

    def restore_optimizers(self, optimizers):
        for stream, opt in optimizers.items():
            if stream not in self.optim_states:
                raise InvalidArgumentError(f"Checkpoint holds no optimizer state for `{stream}`.")
            opt.load_state_dict(self.optim_states[stream])

    def restore_rng(self):
        if self.torch_rng is not None:
            torch.set_rng_state(torch.from_numpy(np.array(self.torch_rng, dtype=np.uint8)))


def save_checkpoint(
    path,
    model,
    iteration,
    config,
    model_config,
    optimizers=None,
    metrics=None,
    checkpoint_id=None,
):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    checkpoint_id = checkpoint_id or os.path.splitext(os.path.basename(path))[0]
    tmp = path + ".tmp"

    with h5py.File(tmp, "w") as f:
        f.attrs["version"] = CHECKPOINT_VERSION
        f.attrs["checkpoint_id"] = checkpoint_id
        f.attrs["iteration"] = int(iteration)
        f.attrs["num_classes"] = int(model.num_classes)
        f.attrs["model"] = json.dumps(model_config)
        f.attrs["config"] = json.dumps(config)
        f.attrs["metrics"] = json.dumps(metrics or {})

        params = f.create_group("params")
        for name, tensor in model.state_dict().items():
            params.create_dataset(name, data=_to_numpy(tensor))

        optim = f.create_group("optim")
        for stream, opt in (optimizers or {}).items():
            state = opt.state_dict()
            group = optim.create_group(stream)
            group.attrs["param_groups"] = json.dumps(state["param_groups"])
            for idx, values in state["state"].items():
                sub = group.create_group(str(idx))
                for key, value in values.items():
                    if torch.is_tensor(value):
                        sub.create_dataset(key, data=_to_numpy(value))
                    else:
                        sub.attrs[key] = value

        rng = f.create_group("rng")
        rng.create_dataset("torch", data=torch.get_rng_state().numpy())

    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    if not os.path.isfile(path):
        raise InvalidArgumentError(f"No checkpoint at {path}.")

    with h5py.File(path, "r") as f:
        version = int(f.attrs["version"])
        if version != CHECKPOINT_VERSION:
            raise ManifestViolationError(
                f"Unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}."
            )
        params = {name: ds[()] for name, ds in f["params"].items()}

        optim_states = {}
        for stream, group in f["optim"].items():
            state = {}
            for idx, sub in group.items():
                values = {key: _native(ds[()]) for key, ds in sub.items()}
                values.update({key: val for key, val in sub.attrs.items()})
                state[int(idx)] = values
            optim_states[stream] = {
                "state": state,
                "param_groups": json.loads(group.attrs["param_groups"]),
            }

        return Checkpoint(
            checkpoint_id=str(f.attrs["checkpoint_id"]),
            iteration=int(f.attrs["iteration"]),
            num_classes=int(f.attrs["num_classes"]),
            model_config=json.loads(f.attrs["model"]),
            config=json.loads(f.attrs["config"]),
            params=params,
            optim_states=optim_states,
            metrics=json.loads(f.attrs["metrics"]),
            torch_rng=f["rng/torch"][()],
            path=path,
        )
