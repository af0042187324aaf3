from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError


@dataclass
class LabeledDataset:
    """Images ``(N, C, H, W)`` in ``[0, 1]`` with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list
    split: str = "train"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = list(self.class_names)
        if self.images.ndim != 4:
            raise InputError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InputError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise InputError("label outside the class-name table")
        if self.split not in ("train", "test"):
            raise InputError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self):
        return len(self.class_names)

    def class_id(self, name):
        try:
            return self.class_names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name {name!r}") from None

    def indices_of(self, label):
        return np.flatnonzero(self.labels == label)

    def subset(self, idx):
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_names, self.split)
