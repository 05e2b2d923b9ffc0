"""Heavy-hex coupling maps, device calibration data and error-aware chain selection."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .schedule import Durations

EAGLE_ROWS, EAGLE_COLS = 7, 15

DEFAULT_T1_S = 300e-6
DEFAULT_T2_S = 200e-6
DEFAULT_CX_ERROR = 8e-3
DEFAULT_READOUT = 1.5e-2


class TopologyError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CouplingMap:
    num_qubits: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset(_edge(int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        for a, b in edges:
            if a == b or not (0 <= a < self.num_qubits and 0 <= b < self.num_qubits):
                raise TopologyError(f"invalid edge ({a}, {b})")
        adj = [[] for _ in range(self.num_qubits)]
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(n)) for n in adj))

    def neighbors(self, q: int) -> tuple[int, ...]:
        return self._adj[q]

    def degree(self, q: int) -> int:
        return len(self._adj[q])

    def has_edge(self, a: int, b: int) -> bool:
        return _edge(a, b) in self.edges

    def is_connected(self) -> bool:
        seen = {0}
        todo = deque([0])
        while todo:
            for n in self._adj[todo.popleft()]:
                if n not in seen:
                    seen.add(n)
                    todo.append(n)
        return len(seen) == self.num_qubits

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_edge_list(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.sorted_edges())

    @classmethod
    def from_edge_list(cls, text: str, num_qubits: int | None = None) -> "CouplingMap":
        edges = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b = line.split()
            edges.append((int(a), int(b)))
        n = num_qubits if num_qubits is not None else 1 + max(max(e) for e in edges)
        return cls(n, frozenset(edges))


def heavy_hex_map(rows: int, cols: int) -> CouplingMap:
    """Heavy-hex lattice of ``rows`` qubit rows joined by bridge qubits.

    Bridges between row r and r+1 sit on columns c with c % 4 == 0 (r even) or
    2 (r odd). Row ends of the first and last row that would dangle as leaves
    are trimmed. Numbering is row-major with each bridge layer between its rows,
    so ``heavy_hex_map(7, 15)`` reproduces the 127-qubit Eagle layout.
    """
    if rows < 1 or cols < 1:
        raise TopologyError("rows and cols must be positive")

    def bridge_cols(r):
        off = 0 if r % 2 == 0 else 2
        return [c for c in range(off, cols, 4)]

    row_cols = []
    for r in range(rows):
        cs = list(range(cols))
        if rows > 1:
            neighbours_rows = [r] if r == 0 else [r - 1] if r == rows - 1 else []
            for nr in neighbours_rows:
                attached = set(bridge_cols(nr))
                for end in (cols - 1, 0) if cols > 1 else ():
                    if end not in attached and end in cs:
                        cs.remove(end)
        row_cols.append(cs)

    index = {}
    next_id = 0
    edges = []
    for r in range(rows):
        for c in row_cols[r]:
            index[("q", r, c)] = next_id
            next_id += 1
        for c0, c1 in zip(row_cols[r], row_cols[r][1:]):
            if c1 == c0 + 1:
                edges.append((index[("q", r, c0)], index[("q", r, c1)]))
        if r + 1 < rows:
            for c in bridge_cols(r):
                index[("b", r, c)] = next_id
                next_id += 1
    for r in range(rows - 1):
        for c in bridge_cols(r):
            b = index[("b", r, c)]
            for rr in (r, r + 1):
                if c in row_cols[rr]:
                    edges.append((b, index[("q", rr, c)]))
    cmap = CouplingMap(next_id, frozenset(edges))
    if not cmap.is_connected():
        raise TopologyError(f"heavy-hex {rows}x{cols} is not connected")
    return cmap


def eagle_map() -> CouplingMap:
    return heavy_hex_map(EAGLE_ROWS, EAGLE_COLS)


def published_eagle_map() -> CouplingMap:
    """The bundled 127-qubit Eagle edge list."""
    text = resources.files("chshforge.data").joinpath("eagle_127.edges").read_text()
    return CouplingMap.from_edge_list(text, 127)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QubitCalibration:
    p10: float = DEFAULT_READOUT  # P(read 1 | state 0)
    p01: float = DEFAULT_READOUT  # P(read 0 | state 1)
    t1_s: float = DEFAULT_T1_S
    t2_s: float = DEFAULT_T2_S
    drift_rad_per_s: float = 0.0

    @property
    def p_read(self) -> float:
        return 0.5 * (self.p10 + self.p01)


@dataclass(frozen=True)
class CalibrationData:
    coupling: CouplingMap
    qubits: tuple[QubitCalibration, ...]
    edge_errors: dict = field(repr=False)
    durations: Durations = Durations()

    def __post_init__(self):
        errs = {_edge(*e): float(p) for e, p in dict(self.edge_errors).items()}
        object.__setattr__(self, "edge_errors", errs)
        object.__setattr__(self, "qubits", tuple(self.qubits))
        self.validate()

    @property
    def num_qubits(self) -> int:
        return self.coupling.num_qubits

    def validate(self) -> None:
        if len(self.qubits) != self.num_qubits:
            raise CalibrationError(f"expected {self.num_qubits} qubit entries, got {len(self.qubits)}")
        for i, qc in enumerate(self.qubits):
            for name in ("p10", "p01"):
                p = getattr(qc, name)
                if not 0.0 <= p <= 0.5:
                    raise CalibrationError(f"qubit {i}: {name}={p} outside [0, 0.5]")
            if not (qc.t1_s > 0 and qc.t2_s > 0):
                raise CalibrationError(f"qubit {i}: T1 and T2 must be positive")
            if qc.t2_s > 2 * qc.t1_s * (1 + 1e-12):
                raise CalibrationError(f"qubit {i}: T2={qc.t2_s} exceeds 2*T1={2 * qc.t1_s}")
            if not math.isfinite(qc.drift_rad_per_s):
                raise CalibrationError(f"qubit {i}: drift must be finite")
        for e, p in self.edge_errors.items():
            if not self.coupling.has_edge(*e):
                raise CalibrationError(f"edge {list(e)} has an error rate but is not in the coupling map")
            if not 0.0 <= p <= 0.5:
                raise CalibrationError(f"edge {list(e)}: error {p} outside [0, 0.5]")

    def edge_error(self, a: int, b: int) -> float:
        try:
            return self.edge_errors[_edge(a, b)]
        except KeyError:
            raise CalibrationError(f"no calibration for edge ({a}, {b})") from None

    def p_read(self, q: int) -> float:
        return self.qubits[q].p_read

    def scaled(self, factor: float) -> "CalibrationData":
        """Multiply every error probability and decoherence rate by ``factor``."""
        if factor < 0:
            raise ValueError("noise scale must be nonnegative")

        def p(x):
            return min(0.5, x * factor)

        def t(x):
            return math.inf if factor == 0 else x / factor

        qubits = tuple(
            replace(q, p10=p(q.p10), p01=p(q.p01), t1_s=t(q.t1_s), t2_s=t(q.t2_s)) for q in self.qubits
        )
        return replace(self, qubits=qubits, edge_errors={e: p(v) for e, v in self.edge_errors.items()})

    def with_drift(self, rad_per_s: float) -> "CalibrationData":
        return replace(self, qubits=tuple(replace(q, drift_rad_per_s=rad_per_s) for q in self.qubits))

    def with_durations(self, **kwargs) -> "CalibrationData":
        return replace(self, durations=replace(self.durations, **kwargs))


def _num(x, default):
    if x is None:
        return math.inf if default is math.inf else default
    return float(x)


def _time(x):
    return math.inf if x is None else float(x)


def load_calibration(document) -> CalibrationData:
    """Build :class:`CalibrationData` from a dict, a JSON string or a path.

    Omitted per-qubit fields, edge errors and durations take the documented
    defaults; ``null`` T1/T2 mean no decay.
    """
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        with open(document) as fh:
            document = json.load(fh)
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise CalibrationError("calibration document must be a JSON object")
    try:
        n = int(document["num_qubits"])
        edges = [tuple(e) for e in document["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"calibration schema violation: {exc}") from None
    for e in edges:
        if len(e) != 2:
            raise CalibrationError(f"edge {list(e)} must have two endpoints")
    try:
        cmap = CouplingMap(n, frozenset(edges))
    except TopologyError as exc:
        raise CalibrationError(str(exc)) from None

    qdocs = document.get("qubits")
    if qdocs is None:
        qdocs = [{} for _ in range(n)]
    qubits = []
    for d in qdocs:
        if not isinstance(d, dict):
            raise CalibrationError("qubit entries must be objects")
        qubits.append(
            QubitCalibration(
                p10=float(d.get("p10", DEFAULT_READOUT)),
                p01=float(d.get("p01", DEFAULT_READOUT)),
                t1_s=_time(d["t1_s"]) if "t1_s" in d else DEFAULT_T1_S,
                t2_s=_time(d["t2_s"]) if "t2_s" in d else DEFAULT_T2_S,
                drift_rad_per_s=float(d.get("drift_rad_per_s", 0.0)),
            )
        )

    errors = {e: DEFAULT_CX_ERROR for e in cmap.edges}
    for item in document.get("edges_error", []):
        try:
            e, p = tuple(item["edge"]), float(item["error"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CalibrationError(f"bad edges_error entry {item!r}: {exc}") from None
        if not cmap.has_edge(*e):
            raise CalibrationError(f"edge {list(e)} has an error rate but is not in the coupling map")
        errors[_edge(*e)] = p

    dd = document.get("durations", {})
    base = Durations()
    try:
        durations = Durations(
            x_s=float(dd.get("x_s", base.x_s)),
            cx_s=float(dd.get("cx_s", base.cx_s)),
            measure_s=float(dd.get("measure_s", base.measure_s)),
            feedforward_s=float(dd.get("feedforward_s", base.feedforward_s)),
        )
    except ValueError as exc:
        raise CalibrationError(str(exc)) from None
    return CalibrationData(cmap, tuple(qubits), errors, durations)


def _t_out(x):
    return None if math.isinf(x) else x


def save_calibration(data: CalibrationData) -> dict:
    return {
        "num_qubits": data.num_qubits,
        "edges": [list(e) for e in data.coupling.sorted_edges()],
        "qubits": [
            {
                "p10": q.p10,
                "p01": q.p01,
                "t1_s": _t_out(q.t1_s),
                "t2_s": _t_out(q.t2_s),
                "drift_rad_per_s": q.drift_rad_per_s,
            }
            for q in data.qubits
        ],
        "edges_error": [{"edge": list(e), "error": data.edge_errors[e]} for e in sorted(data.edge_errors)],
        "durations": {
            "x_s": data.durations.x_s,
            "cx_s": data.durations.cx_s,
            "measure_s": data.durations.measure_s,
            "feedforward_s": data.durations.feedforward_s,
        },
    }


def dump_calibration(data: CalibrationData) -> str:
    return json.dumps(save_calibration(data), indent=1) + "\n"


def ideal_calibration(cmap: CouplingMap, durations: Durations | None = None) -> CalibrationData:
    qubits = tuple(QubitCalibration(0.0, 0.0, math.inf, math.inf, 0.0) for _ in range(cmap.num_qubits))
    return CalibrationData(cmap, qubits, {e: 0.0 for e in cmap.edges}, durations or Durations())


def eagle_like_calibration(cmap: CouplingMap, seed: int, scatter: float = 0.3) -> CalibrationData:
    """Default Eagle-class error magnitudes with seeded lognormal scatter per element."""
    rng = np.random.default_rng(seed)

    def jitter(x):
        return float(x * math.exp(scatter * rng.standard_normal()))

    qubits = []
    for _ in range(cmap.num_qubits):
        p10 = min(0.5, jitter(DEFAULT_READOUT))
        p01 = min(0.5, jitter(DEFAULT_READOUT))
        t1 = jitter(DEFAULT_T1_S)
        t2 = min(jitter(DEFAULT_T2_S), 2 * t1)
        qubits.append(QubitCalibration(p10, p01, t1, t2, 0.0))
    errors = {e: min(0.5, jitter(DEFAULT_CX_ERROR)) for e in cmap.sorted_edges()}
    return CalibrationData(cmap, tuple(qubits), errors, Durations())


def bundled_calibration() -> CalibrationData:
    """Eagle-like sample calibration shipped with the package."""
    text = resources.files("chshforge.data").joinpath("eagle_like_calibration.json").read_text()
    return load_calibration(json.loads(text))


# ---------------------------------------------------------------------------
# chain selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QubitChain:
    qubits: tuple[int, ...]
    cost: float

    def __len__(self):
        return len(self.qubits)

    def __iter__(self):
        return iter(self.qubits)

    @property
    def control(self) -> int:
        return self.qubits[0]

    @property
    def target(self) -> int:
        return self.qubits[-1]

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.qubits, self.qubits[1:]))


def chain_cost(calibration: CalibrationData, path, lam: float = 1.0) -> float:
    """Sum of edge errors + endpoint readout + lam * interior readout (exactly rounded)."""
    path = tuple(path)
    terms = [calibration.edge_error(a, b) for a, b in zip(path, path[1:])]
    terms.append(calibration.p_read(path[0]))
    terms.append(calibration.p_read(path[-1]))
    terms.extend(lam * calibration.p_read(q) for q in path[1:-1])
    return math.fsum(terms)


def validate_chain(cmap: CouplingMap, path) -> None:
    path = tuple(path)
    if len(set(path)) != len(path):
        raise TopologyError(f"chain {path} repeats a qubit")
    for a, b in zip(path, path[1:]):
        if not cmap.has_edge(a, b):
            raise TopologyError(f"chain {path}: ({a}, {b}) is not an edge")


def find_chain(
    cmap: CouplingMap, calibration: CalibrationData, length: int, lam: float = 1.0
) -> QubitChain:
    """Minimum-cost simple path with ``length`` vertices (branch and bound).

    Ties go to the lexicographically smallest qubit sequence.
    """
    n = cmap.num_qubits
    if not 2 <= length <= n:
        raise TopologyError(f"chain length {length} outside [2, {n}]")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    pread = [calibration.p_read(q) for q in range(n)]
    adj = [cmap.neighbors(q) for q in range(n)]
    err = {}
    for a, b in cmap.edges:
        err[(a, b)] = err[(b, a)] = calibration.edge_error(a, b)
    min_edge = min(err.values())
    min_read = min(pread)

    best_cost = math.inf
    best_path: tuple[int, ...] | None = None
    tol = 1e-12
    path: list[int] = []
    on_path = [False] * n

    def bound(partial, k):
        rem_edges = length - k
        rem_interior = max(0, length - 1 - max(k, 1))
        return partial + rem_edges * min_edge + lam * min_read * rem_interior + min_read

    def dfs(partial):
        nonlocal best_cost, best_path
        k = len(path)
        last = path[-1]
        if k == length:
            cost = chain_cost(calibration, path, lam)
            cand = tuple(path)
            if cost < best_cost or (cost == best_cost and cand < best_path):
                best_cost, best_path = cost, cand
            return
        interior_add = lam * pread[last] if k >= 2 else 0.0
        for nb in adj[last]:
            if on_path[nb]:
                continue
            nxt = partial + interior_add + err[(last, nb)]
            if bound(nxt, k + 1) > best_cost + tol:
                continue
            on_path[nb] = True
            path.append(nb)
            dfs(nxt)
            path.pop()
            on_path[nb] = False

    for start in range(n):
        if not adj[start]:
            continue
        path.append(start)
        on_path[start] = True
        dfs(pread[start])
        path.pop()
        on_path[start] = False

    if best_path is None:
        raise TopologyError(f"no simple path with {length} qubits exists")
    return QubitChain(best_path, best_cost)
