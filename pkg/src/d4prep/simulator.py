"""Exact statevector engine.

The amplitude array is kept as a tensor of shape ``(2,) * k`` whose axes are
labelled by QubitIds in allocation order. Qubits are allocated in ``|+>`` on
first use and removed from the tensor when measured in the X basis, so the
array only ever spans live qubits.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityExceeded, DeadQubit, ImpossibleOutcome, RegionTooLarge
from .lattice import ROLE_CODE, QubitId

SQRT_HALF = 1.0 / math.sqrt(2.0)
DIAGONAL = {"Z", "S", "Tplus", "Tminus", "CZ", "CCZ"}
PHASE = {"Z": -1.0, "S": 1j, "Tplus": np.exp(1j * np.pi / 4), "Tminus": np.exp(-1j * np.pi / 4)}
IMPOSSIBLE = 1e-12
DEFAULT_CAP = 26
PAULI_MAT = {"I": np.eye(2, dtype=complex), "X": np.array([[0, 1], [1, 0]], dtype=complex),
             "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1]).astype(complex)}


def default_threads():
    env = os.environ.get("D4PREP_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


@dataclass
class MeasurementRecord:
    outcomes: dict = field(default_factory=dict)   # key -> +1 / -1
    probabilities: dict = field(default_factory=dict)  # key -> Born probability of the outcome seen
    policy: str = "sampled"
    seed: int | None = None

    def product(self, keys=None):
        keys = self.outcomes if keys is None else keys
        return int(np.prod([self.outcomes[k] for k in keys])) if keys else 1

    def to_dict(self):
        return {"policy": self.policy, "seed": self.seed,
                "outcomes": dict(sorted(self.outcomes.items())),
                "probabilities": {k: round(v, 12) for k, v in sorted(self.probabilities.items())}}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["outcomes"]), dict(d.get("probabilities", {})), d.get("policy", "forced"),
                   d.get("seed"))


class Policy:
    """Outcome policy: ``sampled`` (Born rule, seeded), ``forced`` or ``all-plus``."""

    def __init__(self, kind="sampled", seed=0, forced=None):
        if kind not in ("sampled", "forced", "all-plus"):
            raise ValueError(f"unknown policy {kind!r}")
        self.kind, self.seed, self.forced = kind, seed, dict(forced or {})

    @classmethod
    def replay(cls, record):
        return cls("forced", record.seed, record.outcomes)

    def choose(self, key, stream, p_plus):
        if self.kind == "all-plus":
            return 1
        if self.kind == "forced":
            return self.forced.get(key, 1)
        # one private stream per measured object: outcomes do not depend on
        # the order in which measurements are scheduled
        rng = np.random.default_rng([int(self.seed), *stream])
        return 1 if rng.random() < p_plus else -1


def _stream(key):
    if isinstance(key, QubitId):
        return (ROLE_CODE[key.role], key.index)
    return (99, sum((k + 1) * ord(ch) for k, ch in enumerate(str(key))))


def _at(arr, ax, bit):
    sl = [slice(None)] * arr.ndim
    sl[ax] = slice(bit, bit + 1)   # keep the axis so the result is a view
    return tuple(sl)


def _k_phase(phase):
    def k(arr, axes, dtype):
        arr[_at(arr, axes[0], 1)] *= dtype.type(phase)
    return k


def _k_controlled_z(arr, axes, dtype):
    sl = [slice(None)] * arr.ndim
    for a in axes:
        sl[a] = slice(1, 2)
    arr[tuple(sl)] *= -1


def _k_h(arr, axes, dtype):
    s0, s1 = _at(arr, axes[0], 0), _at(arr, axes[0], 1)
    a = arr[s0].copy()
    b = arr[s1]
    a += b          # x0 + x1
    b *= -2
    b += a          # x0 - x1
    a *= SQRT_HALF
    b *= SQRT_HALF
    arr[s0] = a


def _k_x(arr, axes, dtype):
    s0, s1 = _at(arr, axes[0], 0), _at(arr, axes[0], 1)
    a = arr[s0].copy()
    arr[s0] = arr[s1]
    arr[s1] = a


def _k_y(arr, axes, dtype):
    s0, s1 = _at(arr, axes[0], 0), _at(arr, axes[0], 1)
    a = arr[s0].copy()
    arr[s0] = arr[s1]
    arr[s0] *= -1j
    arr[s1] = a
    arr[s1] *= 1j


KERNELS = {"H": _k_h, "X": _k_x, "Y": _k_y, "CZ": _k_controlled_z, "CCZ": _k_controlled_z,
           **{k: _k_phase(v) for k, v in PHASE.items()}}


class StateVector:
    def __init__(self, cap=DEFAULT_CAP, precision="complex128", threads=1):
        self.dtype = np.dtype(precision)
        self.cap = cap
        self.threads = max(1, int(threads))
        self.psi = np.ones((), dtype=self.dtype)
        self.qubits: list = []
        self.peak = 0

    # -- bookkeeping --------------------------------------------------------
    @property
    def k(self):
        return len(self.qubits)

    def axis(self, q):
        try:
            return self.qubits.index(q)
        except ValueError:
            raise DeadQubit(f"qubit {q} is not live") from None

    def is_live(self, q):
        return q in self.qubits

    def norm(self):
        return float(np.sqrt(np.vdot(self.psi, self.psi).real))

    def copy(self):
        s = StateVector(self.cap, self.dtype.name, self.threads)
        s.psi = self.psi.copy()
        s.qubits = list(self.qubits)
        s.peak = self.peak
        return s

    def _sl(self, ax, bit):
        sl = [slice(None)] * self.k
        sl[ax] = bit
        return tuple(sl)

    def _blocks(self, avoid):
        """Disjoint views of the array split along leading axes not in ``avoid``."""
        if self.threads == 1 or self.k < 14:
            return [self.psi]
        free = [a for a in range(self.k) if a not in avoid][:3]
        n = 1
        while (1 << (n + 1)) <= self.threads and n < len(free):
            n += 1
        views = []
        for bits in range(1 << n):
            sl = [slice(None)] * self.k
            for t, a in enumerate(free[:n]):
                b = (bits >> t) & 1
                sl[a] = slice(b, b + 1)
            views.append(self.psi[tuple(sl)])
        return views

    def _parallel(self, fn, avoid):
        # elementwise kernels on disjoint views: same bits as a serial sweep
        views = self._blocks(avoid)
        if len(views) == 1:
            fn(views[0])
            return
        with ThreadPoolExecutor(min(self.threads, len(views))) as ex:
            list(ex.map(fn, views))

    # -- allocation ---------------------------------------------------------
    def allocate_plus(self, q):
        if q in self.qubits:
            raise ValueError(f"qubit {q} already live")
        if self.k + 1 > self.cap:
            raise CapacityExceeded(f"allocating {q} needs {self.k + 1} live qubits, cap {self.cap}", self.k + 1)
        plus = np.array([SQRT_HALF, SQRT_HALF], dtype=self.dtype)
        self.psi = np.multiply.outer(self.psi, plus)
        self.qubits.append(q)
        self.peak = max(self.peak, self.k)
        return self

    # -- gates --------------------------------------------------------------
    def apply(self, kind, qubits):
        if kind == "SWAP":
            # a SWAP only relabels axes; an unallocated partner is a fresh |+>
            # and simply trades places with the live one
            a, b = qubits
            ia = self.qubits.index(a) if a in self.qubits else None
            ib = self.qubits.index(b) if b in self.qubits else None
            if ia is not None:
                self.qubits[ia] = b
            if ib is not None:
                self.qubits[ib] = a
            return self
        axes = [self.axis(q) for q in qubits]
        if kind not in KERNELS:
            raise ValueError(f"unknown gate {kind}")
        fn = KERNELS[kind]
        self._parallel(lambda arr: fn(arr, axes, self.dtype), axes)
        return self

    def apply_gate(self, gate):
        return self.apply(gate.kind, gate.qubits)

    def apply_matrix(self, q, U):
        ax = self.axis(q)
        out = np.tensordot(np.asarray(U, dtype=self.dtype), self.psi, axes=([1], [ax]))
        self.psi = np.ascontiguousarray(np.moveaxis(out, 0, ax))
        return self

    # -- measurement --------------------------------------------------------
    def measure_x(self, q, policy: Policy | None = None, key=None):
        """X-basis measurement; the qubit is retired. Returns (outcome, prob)."""
        policy = policy or Policy("sampled", 0)
        key = q if key is None else key
        self.apply("H", (q,))
        ax = self.axis(q)
        w0 = float(np.vdot(self.psi[self._sl(ax, 0)], self.psi[self._sl(ax, 0)]).real)
        w1 = float(np.vdot(self.psi[self._sl(ax, 1)], self.psi[self._sl(ax, 1)]).real)
        tot = w0 + w1
        p_plus = w0 / tot
        x = policy.choose(str(key), _stream(key), p_plus)
        p = p_plus if x == 1 else 1.0 - p_plus
        if p < IMPOSSIBLE:
            raise ImpossibleOutcome(f"outcome {x:+d} on {key} has probability {p:.3g}")
        kept = self.psi[self._sl(ax, 0 if x == 1 else 1)]
        # ascontiguousarray promotes 0-d input to 1-d; the last qubit leaves a scalar
        self.psi = np.array(kept, dtype=self.dtype, order="C").reshape(kept.shape) / math.sqrt(p * tot)
        del self.qubits[ax]
        return x, p

    def measure_pauli(self, paulis, policy: Policy | None = None, key="pauli"):
        """Projective measurement of a Pauli string given as [(qubit, letter)].

        No qubit is retired. Returns (outcome, prob).
        """
        policy = policy or Policy("sampled", 0)
        phi = self.copy()
        for q, s in paulis:
            phi.apply(s, (q,))
        ev = float(np.vdot(self.psi, phi.psi).real)
        p_plus = min(1.0, max(0.0, (1 + ev) / 2))
        x = policy.choose(str(key), _stream(key), p_plus)
        p = p_plus if x == 1 else 1.0 - p_plus
        if p < IMPOSSIBLE:
            raise ImpossibleOutcome(f"outcome {x:+d} of {key} has probability {p:.3g}")
        self.psi = (self.psi + x * phi.psi) / (2 * math.sqrt(p))
        return x, p

    # -- evaluation ---------------------------------------------------------
    def apply_factor(self, f):
        kind, qs = f[0], f[1:]
        if kind in ("X", "Y", "Z", "CZ", "CCZ", "H", "S", "Tplus", "Tminus"):
            return self.apply(kind, qs)
        if kind in ("XY+", "XY-"):
            r = SQRT_HALF * (1j if kind == "XY+" else -1j)
            return self.apply_matrix(qs[0], np.array([[0, -r], [r, 0]]) + SQRT_HALF * np.array([[0, 1], [1, 0]]))
        if kind == "I":
            return self
        raise ValueError(f"unknown factor {kind}")

    def _pauli_term(self, factors):
        """<psi| f1 f2 ... |psi> for single-qubit Pauli factors, without a copy.

        Each qubit's factors fold into c X^x Z^z; Z becomes a sign along its
        axis and X a flip of the axis (a view).
        """
        per = {}
        for kind, q in factors:
            per[q] = per.get(q, PAULI_MAT["I"]) @ PAULI_MAT[kind]
        coef, flips = 1 + 0j, []
        sign = None  # small broadcastable +-1 tensor over the Z axes
        for q, m in per.items():
            ax = self.axis(q)
            if abs(m[0, 1]) < 0.5:
                c, z = m[0, 0], m[1, 1] / m[0, 0]
            else:
                c, z = m[1, 0], m[0, 1] / m[1, 0]
                flips.append(ax)
            coef *= c
            if z.real < 0:
                shape = [1] * self.k
                shape[ax] = 2
                vec = np.array([1, -1], dtype=self.dtype).reshape(shape)
                sign = vec if sign is None else sign * vec
        phi = self.psi if sign is None else self.psi * sign
        if flips:
            phi = np.flip(phi, axis=tuple(flips))
        return coef * complex(np.vdot(self.psi, phi))

    def expectation(self, expr):
        """<psi| E |psi> for an OperatorExpr (or anything with ``.terms``)."""
        total = 0j
        for coef, factors in expr.terms:
            for f in factors:
                for q in f[1:]:
                    self.axis(q)
            if all(f[0] in PAULI_MAT for f in factors):
                total += coef * self._pauli_term(factors)
                continue
            phi = self.copy()
            for f in reversed(factors):
                phi.apply_factor(f)
            total += coef * complex(np.vdot(self.psi, phi.psi))
        return total

    def permute_to(self, order):
        axes = [self.axis(q) for q in order]
        self.psi = np.ascontiguousarray(np.transpose(self.psi, axes))
        self.qubits = list(order)
        return self

    def amplitudes(self, order=None):
        """Flat amplitude vector; the first qubit of ``order`` is the most significant bit."""
        order = sorted(self.qubits) if order is None else list(order)
        axes = [self.axis(q) for q in order]
        return np.transpose(self.psi, axes).reshape(-1)

    # -- export -------------------------------------------------------------
    MAGIC = b"D4SV"

    def save(self, path):
        head = json.dumps({"qubits": [str(q) for q in self.qubits]}).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<HBI", 1, 1 if self.dtype == np.complex128 else 0, len(head)))
            fh.write(head)
            fh.write(self.psi.astype(self.dtype.newbyteorder("<"), copy=False).tobytes())

    @classmethod
    def load(cls, path, cap=64):
        with open(path, "rb") as fh:
            if fh.read(4) != cls.MAGIC:
                raise ValueError(f"{path} is not a state file")
            _version, prec, n = struct.unpack("<HBI", fh.read(7))
            qubits = [QubitId.parse(s) for s in json.loads(fh.read(n))["qubits"]]
            dtype = np.dtype("<c16" if prec == 1 else "<c8")
            data = np.frombuffer(fh.read(), dtype=dtype)
        s = cls(cap, "complex128" if prec == 1 else "complex64")
        s.psi = data.astype(s.dtype).reshape((2,) * len(qubits)) if qubits else data.reshape(())
        s.qubits = qubits
        s.peak = len(qubits)
        return s


def reduced_density_matrix(state: StateVector, region, limit=14):
    region = list(region)
    if len(region) > limit:
        raise RegionTooLarge(f"region of {len(region)} qubits exceeds {limit}")
    axes = [state.axis(q) for q in region]
    rest = [a for a in range(state.k) if a not in axes]
    m = np.transpose(state.psi, axes + rest).reshape(2 ** len(region), -1)
    return m @ m.conj().T


# -- schedules ---------------------------------------------------------------

def _dag(gates):
    """Predecessor lists that only order gates which do not commute.

    On each qubit, consecutive diagonal gates form one unordered segment.
    """
    preds = [set() for _ in gates]
    segs = {}    # qubit -> list of segments, each a list of gate indices
    for k, g in enumerate(gates):
        diag = g.kind in DIAGONAL
        for q in g.qubits:
            s = segs.setdefault(q, [])
            if diag and s and s[-1][0]:
                s[-1][1].append(k)
                if len(s) > 1:
                    preds[k].update(s[-2][1])
            else:
                if s:
                    preds[k].update(s[-1][1])
                s.append((diag, [k]))
    return preds


def _step(g, live, ops):
    """Append one gate to a plan, allocating only what the gate really needs."""
    if g.kind == "SWAP":
        a, b = g.qubits
        la, lb = a in live, b in live
        if la != lb:
            live.symmetric_difference_update((a, b))
    elif g.kind == "MeasX" and g.qubits[0] not in live:
        pass  # a fresh |+> reads +1 with certainty; nothing to allocate
    else:
        for q in g.qubits:
            if q not in live:
                live.add(q)
                ops.append(("alloc", q))
    ops.append(("gate", g))
    if g.kind == "MeasX":
        live.discard(g.qubits[0])


def plan(circuit, schedule="eager"):
    """Order in which ``run`` executes gates, and the peak live-qubit count.

    Returns (ops, peak) where ops is a list of ("alloc", q) and ("gate", gate).
    """
    gates = list(circuit.gates())
    if schedule == "layered":
        ops, live, peak = [], set(), 0
        for g in gates:
            _step(g, live, ops)
            peak = max(peak, len(live))
        return ops, peak
    if schedule != "eager":
        raise ValueError(f"unknown schedule {schedule!r}")

    preds = _dag(gates)
    succ = [[] for _ in gates]
    for k, ps in enumerate(preds):
        for p in ps:
            succ[p].append(k)
    npred = [len(p) for p in preds]
    remaining = {}
    measured = set()
    for g in gates:
        for q in g.qubits:
            remaining[q] = remaining.get(q, 0) + 1
        if g.kind == "MeasX":
            measured.add(g.qubits[0])
    ready = {k for k, n in enumerate(npred) if n == 0}
    live, ops, peak = set(), [], 0

    def key(k):
        g = gates[k]
        new = 0 if g.kind == "SWAP" else sum(1 for q in g.qubits if q not in live)
        if new == 0 and len(g.qubits) == 1:
            return (0, 0, 0, k)
        if new == 0:
            return (1, 0, 0, k)
        near = min((remaining[q] for q in g.qubits if q in live and q in measured), default=10**9)
        return (2, new, near, k)

    while ready:
        k = min(ready, key=key)
        ready.discard(k)
        g = gates[k]
        _step(g, live, ops)
        peak = max(peak, len(live))
        for q in g.qubits:
            remaining[q] -= 1
        for s in succ[k]:
            npred[s] -= 1
            if npred[s] == 0:
                ready.add(s)
    return ops, peak


def run(circuit, policy: Policy | None = None, seed=None, *, schedule="eager", cap=DEFAULT_CAP,
        precision="complex128", threads=1, check_norm=False, norm_tol=None):
    """Simulate a circuit. Returns (state, MeasurementRecord).

    The final state is reordered so its axes follow sorted QubitIds.
    """
    if policy is None:
        policy = Policy("sampled", 0 if seed is None else seed)
    elif seed is not None and policy.kind == "sampled":
        policy = Policy("sampled", seed)
    ops, peak = plan(circuit, schedule)
    if peak > cap:
        raise CapacityExceeded(f"schedule needs {peak} live qubits, cap is {cap}", peak)
    tol = norm_tol or (1e-10 if np.dtype(precision) == np.complex128 else 1e-4)
    st = StateVector(cap, precision, threads)
    rec = MeasurementRecord(policy=policy.kind, seed=policy.seed)
    n_pauli = 0
    for op, x in ops:
        if op == "alloc":
            st.allocate_plus(x)
            continue
        g = x
        if g.kind == "MeasX" and not st.is_live(g.qubits[0]):
            q = g.qubits[0]
            out = policy.choose(str(q), _stream(q), 1.0)
            if out != 1:
                raise ImpossibleOutcome(f"outcome -1 on fresh qubit {q} has probability 0")
            rec.outcomes[str(q)] = 1
            rec.probabilities[str(q)] = 1.0
        elif g.kind == "MeasX":
            q = g.qubits[0]
            out, p = st.measure_x(q, policy)
            rec.outcomes[str(q)] = out
            rec.probabilities[str(q)] = p
        elif g.kind == "MeasPauli":
            key = f"m{n_pauli}"
            n_pauli += 1
            out, p = st.measure_pauli(list(zip(g.qubits, g.pauli)), policy, key)
            rec.outcomes[key] = out
            rec.probabilities[key] = p
        else:
            st.apply_gate(g)
        if check_norm and abs(st.norm() - 1.0) > tol:
            raise AssertionError(f"norm drift {st.norm() - 1.0:.3g} after {g.kind} {g.qubits}")
    st.permute_to(sorted(st.qubits))
    return st, rec
