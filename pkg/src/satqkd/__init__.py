"""satqkd: BBM92 QKD post-processing simulator with layered post-quantum
encryption and a free-space link-budget analyzer."""

from .channel import (
    DetectionEvent,
    LinkParams,
    SourceParams,
    compute_link_loss,
    generate_detection_period,
    generate_tag_frames,
    solve_link_distance,
    transmittance_from_db,
)
from .config import PRESETS, SessionConfig, apply_preset, config_from_text, config_to_text
from .envelope import (
    CipherEnvelope,
    CryptoContext,
    PresharedKeyLedger,
    QkdKeyStore,
    layered_decrypt,
    layered_encrypt,
    otp_xor,
    pq_decrypt,
    pq_encrypt,
)
from .ldpc import (
    DegreeDistribution,
    ParityCheckMatrix,
    build_ldpc_matrix,
    compute_syndrome,
    decode,
    leak_ec,
    select_code_rate,
)
from .privacy import ToeplitzExtractor, binary_entropy, build_toeplitz, compress, key_rate
from .session import (
    PresharedMaterial,
    SessionResult,
    qber_monitor,
    run_session,
    throughput_kbps,
)
from .timetags import (
    ALICE_CONVENTION,
    BOB_CONVENTION,
    PartyConvention,
    SiftedBits,
    TimeTagFrame,
    coincidence_filter,
    estimate_qber,
    map_bits,
    sift,
    tag_events,
)
from .wcmac import MacKeys, wc_sign, wc_tag, wc_verify

__version__ = "0.1.0"
