"""Weight-pool compression with a two-array compute-in-memory simulator."""

from .cim_array import AdcModel, BitSerialConfig, CimArray, bit_serial_matmul
from .compress import (
    CompressedLayer,
    CompressedModel,
    PackedLayer,
    ScaleSet,
    assign_tile,
    compress_layer,
    compress_model,
    compute_error,
    pack_layer,
    quantize_and_prune_error,
    reconstruct,
    reconstruct_weights,
    unpack_layer,
)
from .container import read_compressed_model, write_compressed_model
from .cost import CostConfig, CostReport, SchemeSpec
from .executor import ExecutionTrace, build_schedule, run_network
from .interchange import (
    FormatError,
    LayerSpec,
    ModelManifest,
    TensorRecord,
    read_manifest,
    read_tensor,
    validate_manifest,
    write_manifest,
    write_tensor,
)
from .pool import PoolConfig, WeightPool, compression_stats, generate_pool
from .scheduler import (
    BufferGeometry,
    CycleStats,
    PermutationMap,
    SchedulerConfig,
    buffer_geometry,
    permute_vector,
    simulate_stream,
    stream_stats,
)

__version__ = "0.1.0"
