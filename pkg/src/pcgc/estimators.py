"""Estimator-style interfaces for the two codecs.

Both classes follow the scikit-learn conventions (constructor stores
hyperparameters verbatim, ``fit`` learns state into trailing-underscore
attributes, ``get_params``/``set_params`` inherited from BaseEstimator),
so they compose with model-selection tooling. ``transform`` maps voxel
grids to compressed byte streams and ``inverse_transform`` maps them
back, which is the natural transformer reading of a codec.
"""

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import checkpoint as _checkpoint
from . import codec as _codec
from . import octree as _octree
from .autodiff import AdamState
from .bitstream import CompressedBitstream
from .geometry import PointCloud, VoxelGrid, voxelize


class LearnedCodec(BaseEstimator):
    """Trainable convolutional voxel-occupancy codec.

    Parameters mirror the training configuration; ``fit`` expects a
    sequence of :class:`VoxelGrid` at ``resolution``. After fitting (or
    ``load``), ``encode``/``decode`` compress single grids and
    ``transform``/``inverse_transform`` operate on sequences.
    """

    def __init__(
        self,
        n_filters=32,
        lam=1e-4,
        alpha=0.9,
        gamma=2.0,
        lr=1e-4,
        beta1=0.9,
        beta2=0.999,
        batch_size=64,
        steps=500,
        resolution=64,
        threshold=0.5,
        seed=0,
    ):
        self.n_filters = n_filters
        self.lam = lam
        self.alpha = alpha
        self.gamma = gamma
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.steps = steps
        self.resolution = resolution
        self.threshold = threshold
        self.seed = seed

    def _config(self) -> _codec.TrainConfig:
        return _codec.TrainConfig(
            lam=self.lam,
            alpha=self.alpha,
            gamma=self.gamma,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            resolution=self.resolution,
        )

    def fit(self, X: Sequence[VoxelGrid], y=None, callback=None):
        """Train on a sequence of voxel grids; returns self."""
        cfg = self._config()
        history: List[_codec.LossBreakdown] = []

        def record(step, stats):
            history.append(stats)
            if callback is not None:
                callback(step, stats)

        params, opt = _codec.train(
            list(X), cfg, n_filters=self.n_filters, callback=record
        )
        self.params_ = params
        self.optimizer_ = opt
        self.history_ = history
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this LearnedCodec has no trained parameters; call fit() or load()"
            )

    def encode(self, grid: VoxelGrid) -> CompressedBitstream:
        self._require_fitted()
        return _codec.encode(grid, self.params_)

    def decode(self, stream: CompressedBitstream, threshold=None) -> VoxelGrid:
        self._require_fitted()
        t = self.threshold if threshold is None else threshold
        return _codec.decode(stream, self.params_, threshold=t)

    def transform(self, X: Sequence[VoxelGrid]) -> List[CompressedBitstream]:
        return [self.encode(g) for g in X]

    def inverse_transform(self, X: Sequence[CompressedBitstream]) -> List[VoxelGrid]:
        return [self.decode(s) for s in X]

    def save(self, path, include_optimizer=False) -> None:
        self._require_fitted()
        train_state = None
        if include_optimizer and getattr(self, "optimizer_", None) is not None:
            opt = self.optimizer_
            train_state = {
                "step": opt.t,
                "resolution": self.resolution,
                "m": opt.m,
                "v": opt.v,
            }
        _checkpoint.save_checkpoint(self.params_, path, train_state)

    @classmethod
    def load(cls, path, **kwargs) -> "LearnedCodec":
        params = _checkpoint.load_checkpoint(path)
        est = cls(n_filters=params.n_filters, **kwargs)
        est.params_ = params
        est.optimizer_ = None
        est.history_ = []
        return est


class OctreeCodec(BaseEstimator):
    """Stateless octree anchor codec with the same estimator surface.

    ``depth=None`` means full depth (lossless for the grid's resolution).
    """

    def __init__(self, depth: Optional[int] = None):
        self.depth = depth

    def fit(self, X=None, y=None):
        return self

    def _depth_for(self, r: int) -> int:
        return int(r).bit_length() - 1 if self.depth is None else self.depth

    def encode(self, grid: VoxelGrid) -> _octree.OctreeStream:
        return _octree.octree_encode(grid, self._depth_for(grid.resolution))

    def decode(self, stream: _octree.OctreeStream) -> PointCloud:
        return _octree.octree_decode(stream)

    def decode_grid(self, stream: _octree.OctreeStream) -> VoxelGrid:
        """Decoded leaf centers re-embedded as a voxel grid."""
        cloud = self.decode(stream)
        return VoxelGrid(
            stream.resolution, cloud.points.astype(np.int32)
        )

    def transform(self, X: Sequence[VoxelGrid]) -> List[_octree.OctreeStream]:
        return [self.encode(g) for g in X]

    def inverse_transform(self, X: Sequence[_octree.OctreeStream]) -> List[PointCloud]:
        return [self.decode(s) for s in X]
