"""On-disk artifacts exchanged between pipeline stages.

Everything is plain CSV or JSON so any stage can be rerun or inspected on
its own. Floats are written with 17 significant digits, which reads back
bit-exactly; missing matrix entries are empty cells.
"""

import hashlib
import json
import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from .constants import (
    OVERLAP_KIND_LABELS,
    OVERLAP_Y_LABELS,
    SUBSET_LABELS,
    Y_KIND_LABELS,
    OverlapKind,
    TradeSubset,
    VectorSide,
    XKind,
    YKind,
)
from .classify import PairWeights, WeightMatrix
from .exceptions import DataIntegrityError
from .linalg import SvdResult
from .replay import QuoteSeries, ReplayResult, TradeSeries
from .response import ResponseMatrix
from .statfit import TlsParams

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
QUOTE_COLUMNS = ["stock", "ts_ms", "best_bid", "best_ask"]
TRADE_COLUMNS = ["stock", "ts_ms", "sign", "volume", "price"]
FIT_COLUMNS = ["U_mu", "U_sigma", "U_beta", "V_mu", "V_sigma", "V_beta"]
RESPONSE_TABLE_KEYS = ["response_to", "case"]
FACTOR_TABLE_KEYS = ["correlation_between", "factors_related_to"]


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    """Writes a frame as CSV with the artifact float format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(data, path: Path) -> Path:
    """Writes JSON with sorted keys so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIntegrityError(f"cannot read {path}: {exc}") from exc


def _read_csv(path: Path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except (OSError, ValueError) as exc:
        raise DataIntegrityError(f"cannot read {path}: {exc}") from exc


def write_matrix(
    path: Path,
    values: np.ndarray,
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    index_name: str = "stock",
) -> Path:
    """Writes a labeled matrix; NaN becomes an empty cell."""
    frame = pd.DataFrame(values, columns=list(col_labels))
    frame.insert(0, index_name, list(row_labels))
    return write_frame(frame, path)


def read_matrix(path: Path) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    """Reads a labeled matrix written by write_matrix.

    Returns:
        Values (NaN for empty cells), row labels and column labels.
    """
    frame = _read_csv(path, keep_default_na=False, na_values=[""])
    rows = tuple(str(v) for v in frame.iloc[:, 0])
    cols = tuple(str(c) for c in frame.columns[1:])
    try:
        values = frame.iloc[:, 1:].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise DataIntegrityError(f"{path}: non-numeric matrix entries") from exc
    return values, rows, cols


def factor_labels(n: int) -> list[str]:
    return [f"f{k + 1}" for k in range(n)]


def _replay_paths(
    directory: Path, prefix: str, trades_directory: Path | None
) -> tuple[Path, Path]:
    trades_dir = Path(trades_directory) if trades_directory is not None else Path(directory)
    return Path(directory) / f"{prefix}_quotes.csv", trades_dir / f"{prefix}_trades.csv"


def _require_columns(frame: pd.DataFrame, columns: Sequence[str], path: Path) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataIntegrityError(f"{path}: missing columns {', '.join(missing)}")


def write_replay(
    directory: Path,
    prefix: str,
    replays: Mapping[str, ReplayResult],
    trades_directory: Path | None = None,
) -> list[Path]:
    """Writes all quote series to <prefix>_quotes.csv and trades to <prefix>_trades.csv.

    Trades go to `trades_directory` when given, otherwise next to the quotes.
    """
    quotes_path, trades_path = _replay_paths(directory, prefix, trades_directory)
    quotes = pd.concat(
        [
            pd.DataFrame(
                {
                    "stock": symbol,
                    "ts_ms": r.quotes.timestamps,
                    "best_bid": r.quotes.best_bid,
                    "best_ask": r.quotes.best_ask,
                }
            )
            for symbol, r in replays.items()
        ]
        or [pd.DataFrame(columns=QUOTE_COLUMNS)],
        ignore_index=True,
    )
    trades = pd.concat(
        [
            pd.DataFrame(
                {
                    "stock": symbol,
                    "ts_ms": r.trades.timestamps,
                    "sign": r.trades.signs,
                    "volume": r.trades.volumes,
                    "price": r.trades.prices,
                }
            )
            for symbol, r in replays.items()
        ]
        or [pd.DataFrame(columns=TRADE_COLUMNS)],
        ignore_index=True,
    )
    return [
        write_frame(quotes[QUOTE_COLUMNS], quotes_path),
        write_frame(trades[TRADE_COLUMNS], trades_path),
    ]


def read_replay(
    directory: Path,
    prefix: str,
    symbols: Sequence[str],
    trades_directory: Path | None = None,
) -> dict[str, ReplayResult]:
    """Reads the replay artifacts of one session back into series.

    Symbols absent from the files get empty series.

    Raises:
        DataIntegrityError: If a file is missing, malformed or lacks a column.
    """
    quotes_path, trades_path = _replay_paths(directory, prefix, trades_directory)
    quotes = _read_csv(quotes_path, dtype={"stock": str}, keep_default_na=False)
    trades = _read_csv(trades_path, dtype={"stock": str}, keep_default_na=False)
    _require_columns(quotes, QUOTE_COLUMNS, quotes_path)
    _require_columns(trades, TRADE_COLUMNS, trades_path)
    quote_groups = dict(tuple(quotes.groupby("stock", sort=False)))
    trade_groups = dict(tuple(trades.groupby("stock", sort=False)))
    empty_q = pd.DataFrame(columns=QUOTE_COLUMNS)
    empty_t = pd.DataFrame(columns=TRADE_COLUMNS)
    output: dict[str, ReplayResult] = {}
    for symbol in symbols:
        q = quote_groups.get(symbol, empty_q)
        t = trade_groups.get(symbol, empty_t)
        try:
            output[symbol] = ReplayResult(
                QuoteSeries.from_arrays(symbol, q["ts_ms"], q["best_bid"], q["best_ask"]),
                TradeSeries.from_arrays(symbol, t["ts_ms"], t["sign"], t["volume"], t["price"]),
            )
        except (TypeError, ValueError) as exc:
            raise DataIntegrityError(f"{symbol}: malformed replay rows ({exc})") from exc
    return output


def _sidecar_kinds(sidecar, path: Path) -> tuple[XKind, YKind, TradeSubset]:
    try:
        return XKind(sidecar["x_kind"]), YKind(sidecar["y_kind"]), TradeSubset(sidecar["subset"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataIntegrityError(f"{path}: malformed response sidecar ({exc!r})") from exc


def _response_sidecar(matrix: ResponseMatrix) -> dict:
    return {
        "name": matrix.name,
        "x_kind": matrix.x_kind.value,
        "y_kind": matrix.y_kind.value,
        "subset": matrix.subset.value,
        "missing": int(matrix.missing.sum()),
        "metadata": matrix.metadata,
    }


def write_response(directory: Path, matrix: ResponseMatrix) -> list[Path]:
    """Writes R_<name>.csv, its counts and a JSON sidecar."""
    directory = Path(directory)
    symbols = list(matrix.symbols)
    return [
        write_matrix(directory / f"R_{matrix.name}.csv", matrix.values, symbols, symbols),
        write_matrix(directory / f"N_{matrix.name}.csv", matrix.counts, symbols, symbols),
        write_json(_response_sidecar(matrix), directory / f"R_{matrix.name}.json"),
    ]


def write_response_file(path: Path, matrix: ResponseMatrix) -> list[Path]:
    """Writes one response matrix CSV and a sidecar with its counts next to it."""
    path = Path(path)
    symbols = list(matrix.symbols)
    sidecar = dict(_response_sidecar(matrix), symbols=symbols, counts=matrix.counts.tolist())
    return [
        write_matrix(path, matrix.values, symbols, symbols),
        write_json(sidecar, path.with_suffix(".json")),
    ]


def response_name(x_kind: XKind, y_kind: YKind, subset: TradeSubset) -> str:
    return f"{x_kind.value}_{y_kind.value}_{subset.value}"


def read_response(directory: Path, name: str) -> ResponseMatrix:
    """Reads a response matrix written by write_response.

    Raises:
        DataIntegrityError: If the files are missing or inconsistent.
    """
    directory = Path(directory)
    values, rows, cols = read_matrix(directory / f"R_{name}.csv")
    counts, _, _ = read_matrix(directory / f"N_{name}.csv")
    sidecar_path = directory / f"R_{name}.json"
    sidecar = read_json(sidecar_path)
    if rows != cols:
        raise DataIntegrityError(f"R_{name}.csv: row and column symbols differ")
    if counts.shape != values.shape or np.isnan(counts).any():
        raise DataIntegrityError(f"N_{name}.csv: counts do not match R_{name}.csv")
    x_kind, y_kind, subset = _sidecar_kinds(sidecar, sidecar_path)
    metadata = sidecar.get("metadata", {})
    if not isinstance(metadata, dict):
        raise DataIntegrityError(f"{sidecar_path}: metadata is not an object")
    return ResponseMatrix(rows, values, counts.astype(np.int64), x_kind, y_kind, subset, metadata)


def write_svd_files(
    u_path: Path,
    s_path: Path,
    v_path: Path,
    decomposition: SvdResult,
    row_labels: Sequence[str] | None = None,
    index_name: str = "stock",
) -> list[Path]:
    """Writes U, the singular values and V to three CSV files."""
    n = decomposition.size
    rows = list(row_labels) if row_labels is not None else factor_labels(n)
    factors = factor_labels(n)
    singular = pd.DataFrame({"factor": factors, "singular_value": decomposition.s})
    return [
        write_matrix(u_path, decomposition.u, rows, factors, index_name),
        write_frame(singular, s_path),
        write_matrix(v_path, decomposition.v, rows, factors, index_name),
    ]


def write_svd(
    directory: Path,
    name: str,
    decomposition: SvdResult,
    row_labels: Sequence[str] | None = None,
    index_name: str = "stock",
) -> list[Path]:
    """Writes <name>_U.csv, <name>_S.csv, <name>_V.csv and <name>_svd.json."""
    directory = Path(directory)
    written = write_svd_files(
        directory / f"{name}_U.csv",
        directory / f"{name}_S.csv",
        directory / f"{name}_V.csv",
        decomposition,
        row_labels,
        index_name,
    )
    return written + [write_json(dict(decomposition.metadata), directory / f"{name}_svd.json")]


def read_singular_values(path: Path) -> np.ndarray:
    frame = _read_csv(path)
    _require_columns(frame, ["singular_value"], path)
    try:
        return frame["singular_value"].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise DataIntegrityError(f"{path}: non-numeric singular values") from exc


def read_svd(directory: Path, name: str) -> SvdResult:
    directory = Path(directory)
    u, _, _ = read_matrix(directory / f"{name}_U.csv")
    v, _, _ = read_matrix(directory / f"{name}_V.csv")
    s = read_singular_values(directory / f"{name}_S.csv")
    metadata = read_json(directory / f"{name}_svd.json")
    if not isinstance(metadata, dict):
        raise DataIntegrityError(f"{name}_svd.json: metadata is not an object")
    if u.shape != v.shape or u.shape != (s.size, s.size):
        raise DataIntegrityError(f"{name}: U, S and V sizes differ")
    return SvdResult(u, s, v, metadata)


def _fit_cells(u_fit: TlsParams, v_fit: TlsParams) -> list[str]:
    return [
        f"{u_fit.mu:.5f}", f"{u_fit.sigma:.3f}", f"{u_fit.beta:.3f}",
        f"{v_fit.mu:.5f}", f"{v_fit.sigma:.3f}", f"{v_fit.beta:.3f}",
    ]


def response_fit_table(
    fits: Mapping[tuple[YKind, TradeSubset], Mapping[VectorSide, TlsParams]],
) -> pd.DataFrame:
    """Fit table of one quote quantity: response to × case of trades, U and V fits.

    Rows follow the y kind then subset order of the enums.
    """
    records = []
    for y_kind in YKind:
        for subset in TradeSubset:
            if (y_kind, subset) not in fits:
                continue
            sides = fits[(y_kind, subset)]
            records.append(
                [Y_KIND_LABELS[y_kind], SUBSET_LABELS[subset]]
                + _fit_cells(sides[VectorSide.LEFT], sides[VectorSide.RIGHT])
            )
    return pd.DataFrame(records, columns=RESPONSE_TABLE_KEYS + FIT_COLUMNS)


def factor_fit_table(
    fits: Mapping[tuple[OverlapKind, YKind], Mapping[VectorSide, TlsParams]],
) -> pd.DataFrame:
    """Fit table of overlap decompositions: correlation between × factors related to."""
    records = []
    for kind in OverlapKind:
        for y_kind in YKind:
            if (kind, y_kind) not in fits:
                continue
            sides = fits[(kind, y_kind)]
            records.append(
                [OVERLAP_KIND_LABELS[kind], OVERLAP_Y_LABELS[y_kind]]
                + _fit_cells(sides[VectorSide.LEFT], sides[VectorSide.RIGHT])
            )
    return pd.DataFrame(records, columns=FACTOR_TABLE_KEYS + FIT_COLUMNS)


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    """Writes a table of pre-formatted cells verbatim."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.astype(str).to_csv(path, index=False, lineterminator="\n")
    return path


def replay_symbols(
    directory: Path, prefix: str, trades_directory: Path | None = None
) -> tuple[str, ...]:
    """Sorted symbols that have quotes or trades in a session's replay files."""
    symbols: set[str] = set()
    for path in _replay_paths(directory, prefix, trades_directory):
        frame = _read_csv(path, dtype={"stock": str}, keep_default_na=False)
        _require_columns(frame, ["stock"], path)
        symbols.update(frame["stock"])
    return tuple(sorted(symbols))


def read_response_file(path: Path, x_kind: XKind) -> ResponseMatrix:
    """Reads a response matrix CSV, using its JSON sidecar when present.

    Without a sidecar the matrix is taken as a sign response over all trades
    with zero counts.

    Raises:
        DataIntegrityError: If the CSV or its sidecar is malformed.
    """
    path = Path(path)
    values, rows, cols = read_matrix(path)
    if rows != cols:
        raise DataIntegrityError(f"{path}: row and column symbols differ")
    counts = np.zeros(values.shape, dtype=np.int64)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.is_file():
        return ResponseMatrix(rows, values, counts, x_kind, YKind.SIGN, TradeSubset.ALL)
    sidecar = read_json(sidecar_path)
    kinds = _sidecar_kinds(sidecar, sidecar_path)
    if "counts" in sidecar:
        try:
            counts = np.asarray(sidecar["counts"], dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise DataIntegrityError(f"{sidecar_path}: malformed counts") from exc
        if counts.shape != values.shape:
            raise DataIntegrityError(f"{sidecar_path}: counts do not match {path.name}")
    metadata = sidecar.get("metadata", {})
    if not isinstance(metadata, dict):
        raise DataIntegrityError(f"{sidecar_path}: metadata is not an object")
    return ResponseMatrix(rows, values, counts, *kinds, metadata)


def write_weights(path: Path, weights: PairWeights) -> list[Path]:
    """Writes the pair weight matrix and, beside it, the counts it came from.

    Counts go to <stem>_single_counts.csv, <stem>_paired_counts.csv and
    <stem>_dropped_counts.csv.
    """
    path = Path(path)
    labels = list(weights.symbols)
    counts = {
        "single": weights.single_counts,
        "paired": weights.paired_counts,
        "dropped": weights.dropped_counts,
    }
    return [write_matrix(path, weights.matrix, labels, labels)] + [
        write_matrix(path.with_name(f"{path.stem}_{kind}_counts.csv"), values, labels, labels)
        for kind, values in counts.items()
    ]


def read_weights(path: Path) -> WeightMatrix:
    """Reads a pair weight matrix written by write_weights.

    Raises:
        DataIntegrityError: If the matrix is not square over one symbol list
            or has weights outside [0, 1].
    """
    values, rows, cols = read_matrix(path)
    if rows != cols:
        raise DataIntegrityError(f"{path}: row and column symbols differ")
    present = values[~np.isnan(values)]
    if np.any((present < 0.0) | (present > 1.0)):
        raise DataIntegrityError(f"{path}: weights outside [0, 1]")
    return WeightMatrix(rows, values)
