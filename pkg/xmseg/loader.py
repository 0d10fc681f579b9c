import numpy as np
import torch
import torch.utils.data
from torch.utils.data import DataLoader as TorchDataLoader

from xmseg.dataset import SampleDataset, record_batch_reads
from xmseg.errors import EmptyBatchError, InvalidArgumentError
from xmseg.utilities import config


def collate_samples(batch):
    """
    Stacks images (equal size required) and concatenates the variable-size point
    clouds; ``batch_index`` maps every point to its sample.

    Returns:
        dict: image (B, 3, H, W), points (N, 3), uv (N, 2), batch_index (N,),
        labels (N,) or None, pseudo {kind: (N,)} or None, plus per-sample metadata.
    """
    if not batch:
        raise EmptyBatchError("Cannot collate an empty batch.")

    shapes = {item["image"].shape for item in batch}
    if len(shapes) != 1:
        raise InvalidArgumentError(
            f"Images of one batch must share a shape, got {sorted(shapes)}."
        )

    sizes = [len(item["points"]) for item in batch]
    image = torch.from_numpy(np.stack([item["image"] for item in batch])).permute(0, 3, 1, 2)

    labels = None
    if all(item["labels"] is not None for item in batch):
        labels = torch.from_numpy(np.concatenate([item["labels"] for item in batch])).long()

    pseudo = None
    if all(item["pseudo"] is not None for item in batch):
        pseudo = {
            kind: torch.from_numpy(np.concatenate([item["pseudo"][kind] for item in batch])).long()
            for kind in batch[0]["pseudo"]
        }

    return {
        "image": image.contiguous(),
        "points": torch.from_numpy(np.concatenate([item["points"] for item in batch])),
        "uv": torch.from_numpy(np.concatenate([item["uv"] for item in batch])),
        "batch_index": torch.repeat_interleave(
            torch.arange(len(batch)), torch.tensor(sizes, dtype=torch.long)
        ),
        "labels": labels,
        "pseudo": pseudo,
        "sizes": sizes,
        "domain": [item["domain"] for item in batch],
        "splits": [item["split"] for item in batch],
        "sample_ids": [item["sample_id"] for item in batch],
        "indices": [item["index"] for item in batch],
    }


class IterationBatchSampler(torch.utils.data.Sampler):
    """
    Batch of iteration ``i`` is a pure function of ``(seed, i)``: sample positions
    ``i * batch_size + j`` walk through one seeded permutation per epoch. Every
    index comes with a per-sample augmentation seed.
    """

    def __init__(
        self,
        num_samples,
        batch_size,
        seed,
        num_iterations,
        start_iteration=0,
        offset=0,
        stream=0,
    ):
        if num_samples < 1:
            raise InvalidArgumentError("Cannot sample batches from an empty split.")
        if batch_size < 1:
            raise InvalidArgumentError(f"Batch size must be at least 1, got {batch_size}.")
        self.num_samples = num_samples
        self.batch_size = batch_size
        self.seed = seed
        self.num_iterations = num_iterations
        self.start_iteration = start_iteration
        self.offset = offset
        self.stream = stream

    def _permutation(self, epoch):
        return np.random.default_rng([self.seed, self.stream, epoch]).permutation(
            self.num_samples
        )

    def batch_at(self, iteration):
        positions = iteration * self.batch_size + np.arange(self.batch_size)
        epochs = positions // self.num_samples
        indices = np.empty(self.batch_size, dtype=np.int64)
        for epoch in np.unique(epochs):
            sel = epochs == epoch
            indices[sel] = self._permutation(int(epoch))[positions[sel] % self.num_samples]

        aug_seeds = np.random.default_rng([self.seed, self.stream, iteration, 1]).integers(
            0, 2**31 - 1, size=self.batch_size
        )
        return [(int(i) + self.offset, int(s)) for i, s in zip(indices, aug_seeds)]

    def __iter__(self):
        for iteration in range(self.start_iteration, self.num_iterations):
            yield self.batch_at(iteration)

    def __len__(self):
        return max(self.num_iterations - self.start_iteration, 0)


class MixedDomainBatchSampler(torch.utils.data.Sampler):
    """
    Fixed source/target composition over ``ConcatDataset([source, target])``.
    Target indices are offset by the source length.
    """

    def __init__(
        self,
        num_source,
        num_target,
        batch_size,
        seed,
        num_iterations,
        target_fraction=0.5,
        start_iteration=0,
    ):
        if not 0 < target_fraction < 1:
            raise InvalidArgumentError(
                f"Target fraction must lie in (0, 1), got {target_fraction}."
            )
        num_target_items = int(round(batch_size * target_fraction))
        num_target_items = min(max(num_target_items, 1), batch_size - 1)

        self.num_source = num_source
        self.num_iterations = num_iterations
        self.start_iteration = start_iteration
        self.source = IterationBatchSampler(
            num_source, batch_size - num_target_items, seed, num_iterations, stream=0
        )
        self.target = IterationBatchSampler(
            num_target, num_target_items, seed, num_iterations, offset=num_source, stream=1
        )

    def batch_at(self, iteration):
        return self.source.batch_at(iteration) + self.target.batch_at(iteration)

    def domains_at(self, iteration):
        return [
            "source" if idx < self.num_source else "target"
            for idx, _ in self.batch_at(iteration)
        ]

    def __iter__(self):
        for iteration in range(self.start_iteration, self.num_iterations):
            yield self.batch_at(iteration)

    def __len__(self):
        return max(self.num_iterations - self.start_iteration, 0)


class Dataloader(torch.utils.data.DataLoader):
    def __init__(self, *args, **kwargs):

        torch_loader_args = TorchDataLoader.__init__.__code__.co_varnames[
            2:
        ]  # omit `self` and `dataset`

        # extract torch loader args
        loader_kwargs = {k: kwargs.pop(k) for k in torch_loader_args if k in kwargs}

        dataset = SampleDataset(
            *args, **kwargs
        )  # remaining kwargs are dataset options or config parameters

        loader_kwargs.setdefault("collate_fn", collate_samples)
        loader_kwargs.setdefault("num_workers", config["num_workers"])

        super().__init__(dataset, **loader_kwargs)

    def __iter__(self):
        for batch in super().__iter__():
            yield record_batch_reads(batch, [self.dataset])
