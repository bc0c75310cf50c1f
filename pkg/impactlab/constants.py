"""Constants and configuration defaults for impactlab.

Single source of truth for version, exit codes, analysis kinds,
numerical tolerances, and pipeline defaults.
"""

from enum import Enum, IntEnum

VERSION: str = "1.0.0"
TOOL_NAME: str = "impactlab"

# Environment
WORKERS_ENV_VAR: str = "IMPACTLAB_WORKERS"
DEFAULT_WORKERS: int = 4

# Event schema
EVENT_HEADER: str = "ts_ms,stock,kind,side,price_ticks,volume,order_id"
EVENT_FIELD_COUNT: int = 7
# Binary record: ts u64, stock 8s, kind 1s, side 1s, price u32, volume u32, order_id u64
BINARY_RECORD_FORMAT: str = "<Q8sccIIQ"
BINARY_LENGTH_FORMAT: str = "<I"
SYMBOL_MAX_LENGTH: int = 8

# Linear algebra
JACOBI_TOLERANCE: float = 1e-14
JACOBI_MAX_SWEEPS: int = 60

# Distribution fitting
TLS_MIN_SAMPLE: int = 50
TLS_INITIAL_SHAPE: float = 3.0
TLS_RESTART_SHAPE: float = 1.0
TLS_MIN_SHAPE: float = 1e-3
TLS_MAX_SHAPE: float = 1e6
TLS_GRADIENT_TOLERANCE: float = 1e-8
TLS_MAX_ITERATIONS: int = 500
MAD_TO_SIGMA: float = 1.4826
DEFAULT_BIN_RULE: str = "fd"
MAX_DENSITY_BINS: int = 2000

# Null model
DEFAULT_NULL_REPLICATES: int = 100
DEFAULT_SEED: int = 20160307

# Synthetic market
SYNTH_START_MID_TICKS: int = 10_000
SYNTH_QUEUE_VOLUME: int = 1_000
SYNTH_MAX_QUOTE_INTENSITY: float = 500.0
SYNTH_FULL_SINGLE_FRACTION: float = 0.995
SYNTH_SECTOR_STREAM: int = 0x5EC7

# Default stock universe (NASDAQ 100 constituents, March 2016)
DEFAULT_UNIVERSE: tuple[str, ...] = (
    "AAL", "AAPL", "ADBE", "ADI", "ADP", "ADSK", "AKAM", "ALXN",
    "AMAT", "AMGN", "AMZN", "ATVI", "AVGO", "BBBY", "BIDU", "BIIB",
    "BMRN", "CA", "CELG", "CERN", "CHKP", "CHRW", "CHTR", "CMCSA",
    "COST", "CSCO", "CTSH", "CTXS", "DISCA", "DISH", "DLTR", "EA",
    "EBAY", "EQIX", "ESRX", "EXPD", "FAST", "FB", "FISV", "FOXA",
    "GILD", "GOOG", "GRMN", "HSIC", "ILMN", "INTC", "INTU", "ISRG",
    "JD", "KHC", "KLAC", "LBTYA", "LLTC", "LMCA", "LRCX", "LVNTA",
    "MAR", "MAT", "MDLZ", "MNST", "MSFT", "MU", "MYL", "NFLX",
    "NTAP", "NVDA", "NXPI", "ORLY", "PAYX", "PCAR", "PCLN", "QCOM",
    "REGN", "ROST", "SBAC", "SBUX", "SIRI", "SNDK", "SPLS", "SRCL",
    "STX", "SYMC", "TRIP", "TSCO", "TSLA", "TXN", "VIAB", "VIP",
    "VOD", "VRSK", "VRTX", "WDC", "WFM", "WYNN", "XLNX", "YHOO",
)


class ExitCode(IntEnum):
    """Process exit codes.

    Attributes:
        OK: All requested stages completed.
        ANALYSIS_ERROR: A numerical precondition failed (degenerate data,
            empty results, incompatible inputs).
        CONFIG_ERROR: The configuration or command line is invalid.
        DATA_INTEGRITY: The event stream or an artifact is malformed or
            inconsistent.
        NON_CONVERGENCE: An iterative numerical method did not converge.
    """

    OK = 0
    ANALYSIS_ERROR = 1
    CONFIG_ERROR = 2
    DATA_INTEGRITY = 3
    NON_CONVERGENCE = 4


class EventKind(str, Enum):
    """Order-flow message kinds of the event schema."""

    ADD = "add"
    CANCEL = "cancel"
    DELETE = "delete"
    EXECUTE = "execute"


class Side(str, Enum):
    """Book side of a resting order."""

    BID = "bid"
    ASK = "ask"


class XKind(str, Enum):
    """Quote quantity whose change is measured (midpoint or spread)."""

    MIDPOINT = "m"
    SPREAD = "s"


class YKind(str, Enum):
    """Trade quantity the quote change is weighted by."""

    SIGN = "sign"
    VOLUME = "vol"
    SIGNED_VOLUME = "svol"


class TradeSubset(str, Enum):
    """Trades averaged over when building a response matrix."""

    ALL = "all"
    SINGLE = "single"
    MULTIPLE = "multiple"
    WEIGHTED = "weighted"


class OverlapKind(str, Enum):
    """Pairing of left singular vectors in an overlap matrix."""

    MM = "mm"
    SS = "ss"
    MS = "ms"


class VectorSide(str, Enum):
    """Which singular vectors of a decomposition are pooled."""

    LEFT = "left"
    RIGHT = "right"


class NullFamily(str, Enum):
    """Distribution family of null-model response entries."""

    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    PERMUTATION = "permutation"


# Display labels for the fit tables
Y_KIND_LABELS: dict[YKind, str] = {
    YKind.SIGN: "trade signs",
    YKind.VOLUME: "trade volumes",
    YKind.SIGNED_VOLUME: "signed trade volumes",
}
OVERLAP_Y_LABELS: dict[YKind, str] = {
    YKind.SIGN: "trade signs",
    YKind.VOLUME: "traded volumes",
    YKind.SIGNED_VOLUME: "signed volumes",
}
OVERLAP_KIND_LABELS: dict[OverlapKind, str] = {
    OverlapKind.MM: "factors of price change",
    OverlapKind.SS: "factors of liquidity change",
    OverlapKind.MS: "factors of price change and of liquidity change",
}
SUBSET_LABELS: dict[TradeSubset, str] = {
    TradeSubset.ALL: "all",
    TradeSubset.SINGLE: "single",
    TradeSubset.MULTIPLE: "multiple",
    TradeSubset.WEIGHTED: "weighted",
}
