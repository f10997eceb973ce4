"""Point cloud geometry compression laboratory."""

__version__ = "0.1.0"

from .autodiff import AdamState, Tensor, adam_step, backward, no_grad, parameter
from .bitstream import CompressedBitstream
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import (
    LossBreakdown,
    ModelParams,
    TrainConfig,
    analysis,
    decode,
    encode,
    focal_loss,
    init_model,
    latent_shape,
    quantize,
    rate_bits,
    synthesis,
    train,
    train_step,
)
from .conv import ConvLayerParams, conv3d, conv3d_transpose, transpose_pair
from .errors import (
    CorruptionError,
    DataError,
    ModelMismatchError,
    ParseError,
    PcgcError,
    SchemaError,
    ShapeError,
)
from .estimators import LearnedCodec, OctreeCodec
from .fileio import (
    load_mesh,
    load_point_cloud,
    load_voxel_grid,
    save_point_cloud,
    save_voxel_grid,
)
from .geometry import (
    PointCloud,
    TriangleMesh,
    VoxelGrid,
    devoxelize,
    estimate_normals,
    sample_surface,
    voxelize,
)
from .metrics import RDCurve, RDPoint, bd_rate, d1_mse, d2_mse, symmetric_psnr
from .octree import OctreeStream, octree_decode, octree_encode

__all__ = [
    "AdamState",
    "CompressedBitstream",
    "ConvLayerParams",
    "CorruptionError",
    "DataError",
    "LearnedCodec",
    "LossBreakdown",
    "ModelMismatchError",
    "ModelParams",
    "OctreeCodec",
    "OctreeStream",
    "ParseError",
    "PcgcError",
    "PointCloud",
    "RDCurve",
    "RDPoint",
    "SchemaError",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TriangleMesh",
    "VoxelGrid",
    "adam_step",
    "analysis",
    "backward",
    "bd_rate",
    "conv3d",
    "conv3d_transpose",
    "d1_mse",
    "d2_mse",
    "decode",
    "devoxelize",
    "encode",
    "estimate_normals",
    "focal_loss",
    "init_model",
    "latent_shape",
    "load_checkpoint",
    "load_mesh",
    "load_point_cloud",
    "load_voxel_grid",
    "no_grad",
    "octree_decode",
    "octree_encode",
    "parameter",
    "quantize",
    "rate_bits",
    "sample_surface",
    "save_checkpoint",
    "save_point_cloud",
    "save_voxel_grid",
    "symmetric_psnr",
    "synthesis",
    "train",
    "train_step",
    "transpose_pair",
    "voxelize",
]
