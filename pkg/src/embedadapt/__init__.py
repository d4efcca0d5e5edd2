"""Linear adapters between embedding spaces and reconstruction-attack evaluation."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .adapter import (
    AdapterModel,
    TrainConfig,
    TrainReport,
    fit,
    fit_closed_form,
    fit_iterative,
    load_adapter,
    save_adapter,
)
from .adapter import apply as apply_adapter
from .attack import (
    AblationPoint,
    AttackContext,
    AttackReport,
    AttackRun,
    ReportTable,
    ResultRow,
    TransferabilityMatrix,
    ablation_curve,
    evaluate_sar,
    render_report,
    transfer_table,
    transferability_matrix,
)
from .errors import (
    CalibrationError,
    CorruptionError,
    DegenerateInputError,
    EmbedAdaptError,
    FormatError,
    PairingError,
    RankDeficiencyError,
    ValidationError,
)
from .metrics import (
    OperatingPoint,
    ScoreSet,
    build_scores,
    calibrate_threshold,
    cosine,
    tmr_at,
)
from .store import (
    EmbeddingRecord,
    EmbeddingSet,
    PairedEmbeddings,
    export_csv,
    import_csv,
    l2_normalize,
    pair,
    read_embeddings,
    read_pairs,
    write_embeddings,
    write_pairs,
)
from .synthworld import (
    IdentityPopulation,
    ReconstructionChannel,
    SyntheticModel,
    World,
    WorldConfig,
    embed,
    make_world,
    simulate_reconstruction,
)

__version__ = "0.1.0"
