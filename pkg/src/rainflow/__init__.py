"""Rain-robust optical flow via chroma residue channels and
piecewise-smooth layer decomposition."""

from .bench import FlowStats, endpoint_error, format_report_table, run_suite
from .config import Config, ConfigError, apply_settings, parse_config, serialize_config
from .decompose import (
    L0Params,
    detail_layer,
    gradient_support_count,
    l0_smooth,
    separate_layer,
    smoothing_objective,
)
from .flow import (
    EnergyReport,
    FlowSolveParams,
    PenaltyFn,
    data_energy,
    data_energy_gradient,
    energy,
    solve_flow,
)
from .flowio import (
    BadMagicError,
    DimensionError,
    FlowIOError,
    TruncatedFileError,
    UnsupportedFormatError,
    flow_to_color,
    read_flo,
    read_image,
    write_flo,
    write_image,
)
from .imagecore import (
    FlowField,
    Image,
    Pyramid,
    build_pyramid,
    gradient,
    known_mask,
    resample_flow,
    resize,
    to_gray,
    warp,
    warp_with_mask,
    zero_flow,
)
from .pipeline import PipelineResult, SolverParams, estimate, inverse_flow, inverse_flow_with_mask
from .rainsim import (
    RainParams,
    RainRender,
    make_static_pair,
    make_translation_pair,
    render_accumulation,
    render_streaks,
)
from .residue import residue_channel, weight_map

__version__ = "0.1.0"
