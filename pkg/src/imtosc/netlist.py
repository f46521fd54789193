"""Oscillator circuits, coupling networks, and nodal-system assembly.

A network is a list of relaxation oscillators (one output node each) plus
pairwise couplings (parallel RC between output nodes). For a given vector of
per-oscillator conduction states the network is a linear circuit

    C x'(t) = -G(s) x(t) + P(s)

with C the (constant) nodal capacitance matrix, G(s) the state-dependent
nodal conductance matrix and P(s) the injection from the supply rail. C is
symmetric positive definite and G is symmetric positive semidefinite by
Kirchhoff assembly, which the event-driven engine relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .device import ConductionState, DeviceParams

_DD_THRESHOLD_TOL = 1e-12


@dataclass(frozen=True)
class DROscillator:
    """One IMT device in series with a resistance (conductance ``g_s``).

    The device sits between the supply rail and the output node, the resistor
    between the output node and ground. The device sees ``1 - v_node``. While
    the device is metallic the node charges toward ``g_dm / (g_dm + g_s)``;
    while insulating it discharges toward ``g_di / (g_di + g_s)``.
    """

    dev: DeviceParams
    g_s: float
    c_lump: float = 0.0

    def __post_init__(self) -> None:
        if not self.g_s > 0.0:
            raise ValueError(f"g_s must be positive, got {self.g_s}")
        if self.c_lump < 0.0:
            raise ValueError(f"c_lump must be nonnegative, got {self.c_lump}")

    @property
    def node_capacitance(self) -> float:
        return self.c_lump + self.dev.c_int

    def operating_band(self) -> tuple[float, float]:
        # Node voltage runs between the device-threshold images 1-v_h and 1-v_l.
        return (1.0 - self.dev.v_h, 1.0 - self.dev.v_l)

    def branch(self, s: int) -> tuple[float, float]:
        """(own conductance, rail injection) for per-oscillator state ``s``."""
        g_d = self.dev.g_dm if s == ConductionState.METALLIC else self.dev.g_di
        return g_d + self.g_s, g_d

    def guard(self, s: int) -> tuple[float, int]:
        """(node threshold, crossing direction) armed while in state ``s``."""
        lo, hi = self.operating_band()
        if s == ConductionState.METALLIC:  # charging, fires at top of band
            return hi, +1
        return lo, -1

    def device_voltage(self, v_node: float) -> float:
        return 1.0 - v_node


@dataclass(frozen=True)
class DDOscillator:
    """Two IMT devices in series; the output node is the midpoint.

    ``dev1`` pulls up to the rail, ``dev2`` pulls down to ground. Both devices
    must satisfy v_l + v_h = 1 and share the same thresholds: then whenever
    one device crosses a threshold the other crosses its opposite threshold at
    the same instant, so the pair flips as a unit. The oscillator state is the
    state of ``dev1`` (metallic = charging).
    """

    dev1: DeviceParams
    dev2: DeviceParams
    c_lump: float = 0.0

    def __post_init__(self) -> None:
        for name, d in (("dev1", self.dev1), ("dev2", self.dev2)):
            if abs(d.v_l + d.v_h - 1.0) > _DD_THRESHOLD_TOL:
                raise ValueError(
                    f"{name}: D-D devices need v_l + v_h = 1, got {d.v_l + d.v_h}"
                )
        if (
            abs(self.dev1.v_l - self.dev2.v_l) > _DD_THRESHOLD_TOL
            or abs(self.dev1.v_h - self.dev2.v_h) > _DD_THRESHOLD_TOL
        ):
            # Unequal thresholds would break the simultaneous-flip property.
            raise ValueError("D-D devices must share the same v_l, v_h")
        if self.c_lump < 0.0:
            raise ValueError(f"c_lump must be nonnegative, got {self.c_lump}")

    @property
    def node_capacitance(self) -> float:
        return self.c_lump + self.dev1.c_int + self.dev2.c_int

    def operating_band(self) -> tuple[float, float]:
        return (self.dev1.v_l, self.dev1.v_h)

    def branch(self, s: int) -> tuple[float, float]:
        if s == ConductionState.METALLIC:  # dev1 metallic, dev2 insulating
            return self.dev1.g_dm + self.dev2.g_di, self.dev1.g_dm
        return self.dev1.g_di + self.dev2.g_dm, self.dev1.g_di

    def guard(self, s: int) -> tuple[float, int]:
        lo, hi = self.operating_band()
        if s == ConductionState.METALLIC:
            return hi, +1
        return lo, -1

    def device_voltage(self, v_node: float) -> float:
        # Voltage across dev1; dev2 sees v_node and flips simultaneously.
        return 1.0 - v_node


OscillatorSpec = Union[DROscillator, DDOscillator]


@dataclass(frozen=True)
class CouplingSpec:
    """Parallel RC element between the output nodes of oscillators i and j.

    ``g_c = 1/R_C``; pure capacitive coupling is g_c = 0, pure resistive is
    c_c = 0. Both zero would be no element at all and is rejected.
    """

    i: int
    j: int
    c_c: float = 0.0
    g_c: float = 0.0

    def __post_init__(self) -> None:
        if self.i == self.j:
            raise ValueError("coupling must connect two distinct oscillators")
        if self.c_c < 0.0 or self.g_c < 0.0:
            raise ValueError("coupling values must be nonnegative")
        if self.c_c == 0.0 and self.g_c == 0.0:
            raise ValueError("coupling needs c_c > 0 or g_c > 0")


@dataclass(frozen=True)
class NetworkSpec:
    """Oscillators plus couplings. Immutable once constructed."""

    oscillators: tuple[OscillatorSpec, ...]
    couplings: tuple[CouplingSpec, ...] = ()

    def __init__(
        self,
        oscillators: Sequence[OscillatorSpec],
        couplings: Sequence[CouplingSpec] = (),
    ) -> None:
        object.__setattr__(self, "oscillators", tuple(oscillators))
        object.__setattr__(self, "couplings", tuple(couplings))
        n = len(self.oscillators)
        if n == 0:
            raise ValueError("network needs at least one oscillator")
        seen = set()
        for cp in self.couplings:
            if not (0 <= cp.i < n and 0 <= cp.j < n):
                raise ValueError(f"coupling ({cp.i},{cp.j}) out of range for {n} oscillators")
            key = (min(cp.i, cp.j), max(cp.i, cp.j))
            if key in seen:
                raise ValueError(f"duplicate coupling for pair {key}")
            seen.add(key)

    @property
    def size(self) -> int:
        return len(self.oscillators)


@dataclass(frozen=True)
class LinearSystem:
    """Per-conduction-state linear circuit C x' = -G x + P."""

    c: np.ndarray
    g: np.ndarray
    p: np.ndarray
    s: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.c.shape[0]


def assemble(net: NetworkSpec, s: Sequence[int]) -> LinearSystem:
    """Kirchhoff assembly of the nodal system for conduction-state vector s."""
    n = net.size
    s = tuple(int(v) for v in s)
    if len(s) != n:
        raise ValueError(f"state vector length {len(s)} != {n} oscillators")
    if any(v not in (0, 1) for v in s):
        raise ValueError("conduction states must be 0 (metallic) or 1 (insulating)")

    c = np.zeros((n, n))
    g = np.zeros((n, n))
    p = np.zeros(n)
    for i, osc in enumerate(net.oscillators):
        c[i, i] += osc.node_capacitance
        g_own, p_own = osc.branch(s[i])
        g[i, i] += g_own
        p[i] += p_own
    for cp in net.couplings:
        i, j = cp.i, cp.j
        c[i, i] += cp.c_c
        c[j, j] += cp.c_c
        c[i, j] -= cp.c_c
        c[j, i] -= cp.c_c
        g[i, i] += cp.g_c
        g[j, j] += cp.g_c
        g[i, j] -= cp.g_c
        g[j, i] -= cp.g_c
    return LinearSystem(c=c, g=g, p=p, s=s)


def fixed_point(sys: LinearSystem) -> np.ndarray:
    """Rest point G^-1 P of the current conduction state.

    Raises np.linalg.LinAlgError for singular G; the engine then falls back
    to affine-flow stepping, which needs no fixed point.
    """
    return np.linalg.solve(sys.g, sys.p)


def flow_matrix(sys: LinearSystem) -> np.ndarray:
    """-C^-1 G, the linear operator steering x toward the fixed point."""
    try:
        np.linalg.cholesky(sys.c)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("capacitance matrix is not positive definite") from exc
    return -np.linalg.solve(sys.c, sys.g)


def validate_oscillation(osc: OscillatorSpec) -> tuple[bool, str]:
    """Check that an isolated oscillator has no rest point inside its band.

    In each conduction state the single-oscillator fixed point must lie
    beyond the threshold the state is heading for: the charging rest point
    above the top of the operating band, the discharging rest point below the
    bottom. Otherwise the node parks inside the band and switching stops.
    """
    lo, hi = osc.operating_band()
    g_ch, p_ch = osc.branch(ConductionState.METALLIC)
    g_di, p_di = osc.branch(ConductionState.INSULATING)
    fp_ch = p_ch / g_ch
    fp_di = p_di / g_di
    if fp_ch <= hi:
        return False, (
            f"charging rest point {fp_ch:.6g} does not exceed band top {hi:.6g}; "
            "the node never reaches the switching threshold"
        )
    if fp_di >= lo:
        return False, (
            f"discharging rest point {fp_di:.6g} does not fall below band bottom {lo:.6g}; "
            "the node never reaches the switching threshold"
        )
    return True, "self-sustained oscillation guaranteed"


def gs_from_vgs(v_gs: float, k: float, v_t: float) -> float:
    """Series conductance of a gate-controlled transistor used as a resistor.

    Ideal voltage-controlled linear conductance: k * max(v_gs - v_t, 0).
    """
    if k <= 0.0:
        raise ValueError(f"transconductance k must be positive, got {k}")
    return k * max(v_gs - v_t, 0.0)


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph with 0-based vertices."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n: int, edges: Sequence[tuple[int, int]]) -> None:
        if n <= 0:
            raise ValueError("graph needs at least one vertex")
        norm = []
        seen = set()
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) out of range for {n} vertices")
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                continue
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n


def parse_dimacs(text: str) -> Graph:
    """Parse an undirected graph in DIMACS format (p edge N M, e U V lines).

    Vertices in the file are 1-based; the returned graph is 0-based.
    """
    n = None
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        if parts[0] == "p":
            if len(parts) < 4 or parts[1] not in ("edge", "edges", "col"):
                raise ValueError(f"line {lineno}: malformed problem line {line!r}")
            n = int(parts[2])
        elif parts[0] == "e":
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: malformed edge line {line!r}")
            u, v = int(parts[1]), int(parts[2])
            edges.append((u - 1, v - 1))
        # other line types are ignored
    if n is None:
        raise ValueError("no 'p edge' problem line found")
    return Graph(n, edges)


def read_dimacs(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_dimacs(fh.read())
