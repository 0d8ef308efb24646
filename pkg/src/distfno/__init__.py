"""distfno: a tensor-parallel Fourier neural operator engine.

Dense labeled tensors, 1-D Cartesian partitions, rank-based collectives with
exact communication accounting, the distributed FNO forward/backward passes
with a serial oracle, a clusterless task pool, and a benchmark CLI.
"""

from .comm import (
    CommStats,
    Communicator,
    InProcessTransport,
    aggregate_stats,
    comm_report,
    connect_socket_mesh,
    run_ranks,
)
from .fno import (
    ActivationKind,
    FnoConfig,
    FnoParams,
    ForwardCache,
    decoder_forward,
    encoder_forward,
    fno_backward,
    fno_block_forward,
    fno_forward,
    init_params,
    predicted_block_volume,
    shard_params,
    slice_local,
)
from .oracle import serial_fno_forward
from .partition import (
    BlockRange,
    Partition,
    block_decompose,
    range_intersection,
    repartition_plan,
)
from .spectral import ModeSpec, fft_dims, ifft_dims, pad_modes, truncate_modes
from .taskpool import (
    ObjectStore,
    RemoteRef,
    TaskPool,
    broadcast_value,
    fetch,
    register,
    weak_scaling_efficiency,
)
from .tensor import (
    DenseTensor,
    DimLabel,
    DType,
    bit_equal,
    einsum_channel_mix,
    einsum_spectral,
    tensor_from_bytes,
    tensor_read,
    tensor_to_bytes,
    tensor_write,
)
from .training import AdamState, gather_params, load_checkpoint, save_checkpoint, train_step

__version__ = "0.1.0"
