"""Finite groups, character tables and quantum-double anyons.

Only the groups needed here are supported: D4, Q8, Z2^n and direct products
of those. Character tables are built directly. One-dimensional characters
are enumerated as homomorphisms into the roots of unity. D4 and Q8 have a
single two-dimensional irrep, read off from the regular character. Products
take tensor products of characters.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NonIntegerFusion, UnknownGroup

TOL = 1e-9


@dataclass(frozen=True)
class FiniteGroup:
    name: str
    labels: tuple
    table: tuple          # table[a][b] = index of a*b
    factors: tuple = field(default=(), compare=False)

    @property
    def order(self):
        return len(self.labels)

    @cached_property
    def identity(self):
        for e in range(self.order):
            if all(self.table[e][g] == g for g in range(self.order)):
                return e
        raise ValueError("no identity")

    @cached_property
    def inverse(self):
        e = self.identity
        return tuple(next(h for h in range(self.order) if self.table[g][h] == e) for g in range(self.order))

    def mul(self, *gs):
        acc = self.identity
        for g in gs:
            acc = self.table[acc][g]
        return acc

    def index(self, label):
        return self.labels.index(label)

    def conj(self, x, g):
        """x g x^-1"""
        return self.mul(x, g, self.inverse[x])

    @cached_property
    def classes(self):
        seen, out = set(), []
        for g in range(self.order):
            if g in seen:
                continue
            cl = tuple(sorted({self.conj(x, g) for x in range(self.order)}))
            seen.update(cl)
            out.append(cl)
        return tuple(out)

    def class_of(self, g):
        return next(k for k, c in enumerate(self.classes) if g in c)

    def centralizer(self, g):
        return tuple(h for h in range(self.order) if self.table[g][h] == self.table[h][g])

    @cached_property
    def is_abelian(self):
        return all(self.table[a][b] == self.table[b][a] for a in range(self.order) for b in range(self.order))

    def element_order(self, g):
        k, acc = 1, g
        while acc != self.identity:
            acc = self.table[acc][g]
            k += 1
        return k

    def subgroup(self, elems, name=None):
        elems = tuple(sorted(elems))
        pos = {g: k for k, g in enumerate(elems)}
        table = tuple(tuple(pos[self.table[a][b]] for b in elems) for a in elems)
        return FiniteGroup(name or f"C({self.name})", tuple(self.labels[g] for g in elems), table), elems

    def check(self):
        n = self.order
        rng = range(n)
        for row in self.table:
            assert sorted(row) == list(rng), "rows must be permutations"
        for b in rng:
            assert sorted(self.table[a][b] for a in rng) == list(rng), "columns must be permutations"
        if n <= 24:
            for a in rng:
                for b in rng:
                    ab = self.table[a][b]
                    for c in rng:
                        assert self.table[ab][c] == self.table[a][self.table[b][c]], "not associative"
        return True


# -- constructors -----------------------------------------------------------

def _from_mul(name, elems, mul, label):
    idx = {e: k for k, e in enumerate(elems)}
    table = tuple(tuple(idx[mul(a, b)] for b in elems) for a in elems)
    return FiniteGroup(name, tuple(label(e) for e in elems), table)


def _d4():
    # r^a s^b; s r s = r^-1
    elems = [(a, b) for b in (0, 1) for a in range(4)]
    mul = lambda x, y: ((x[0] + (-1) ** x[1] * y[0]) % 4, (x[1] + y[1]) % 2)

    def label(e):
        a, b = e
        r = "" if a == 0 else ("r" if a == 1 else f"r{a}")
        return (r + ("s" if b else "")) or "1"
    return _from_mul("D4", elems, mul, label)


_QUAT = {("1", x): (1, x) for x in "1ijk"}
_QUAT.update({(x, "1"): (1, x) for x in "1ijk"})
_QUAT.update({("i", "i"): (-1, "1"), ("j", "j"): (-1, "1"), ("k", "k"): (-1, "1"),
              ("i", "j"): (1, "k"), ("j", "k"): (1, "i"), ("k", "i"): (1, "j"),
              ("j", "i"): (-1, "k"), ("k", "j"): (-1, "i"), ("i", "k"): (-1, "j")})


def _q8():
    elems = [(s, u) for s in (1, -1) for u in "1ijk"]
    def mul(x, y):
        s, u = _QUAT[(x[1], y[1])]
        return (x[0] * y[0] * s, u)
    label = lambda e: ("" if e[0] == 1 else "-") + e[1]
    return _from_mul("Q8", elems, mul, label)


def _z2n(n):
    elems = list(range(2 ** n))
    label = lambda e: "".join(str((e >> k) & 1) for k in range(n)) if n else "1"
    return _from_mul(f"Z2^{n}", elems, lambda a, b: a ^ b, label)


def direct_product(g: FiniteGroup, h: FiniteGroup) -> FiniteGroup:
    elems = [(a, b) for a in range(g.order) for b in range(h.order)]
    mul = lambda x, y: (g.table[x[0]][y[0]], h.table[x[1]][y[1]])
    label = lambda e: f"({g.labels[e[0]]},{h.labels[e[1]]})"
    out = _from_mul(f"{g.name}x{h.name}", elems, mul, label)
    return FiniteGroup(out.name, out.labels, out.table, (g, h))


def make_group(name: str, n: int = 0, factors=None) -> FiniteGroup:
    key = name.lower().replace(" ", "")
    if key == "d4":
        g = _d4()
    elif key == "q8":
        g = _q8()
    elif key in ("z2", "z2^n", "z2n") or key.startswith("z2^"):
        if key.startswith("z2^") and key[3:].isdigit():
            n = int(key[3:])
        elif key == "z2":
            n = n or 1
        if not 1 <= n <= 4:
            raise UnknownGroup(f"Z2^n needs 1 <= n <= 4, got {n}")
        g = _z2n(n)
    elif key == "product":
        if not factors or len(factors) < 2:
            raise UnknownGroup("product needs at least two factor groups")
        g = make_group(*factors[0]) if isinstance(factors[0], tuple) else make_group(factors[0])
        for f in factors[1:]:
            g = direct_product(g, make_group(*f) if isinstance(f, tuple) else make_group(f))
    else:
        raise UnknownGroup(f"unknown group {name!r}")
    g.check()
    return g


# -- characters -------------------------------------------------------------

@dataclass(frozen=True)
class CharacterTable:
    group: FiniteGroup
    names: tuple           # irrep names
    chars: np.ndarray = field(compare=False)   # chars[k][g] for every element g

    def dim(self, k):
        return int(round(self.chars[k][self.group.identity].real))

    def kernel(self, k):
        d = self.dim(k)
        return tuple(g for g in range(self.group.order) if abs(self.chars[k][g] - d) < TOL)

    def by_name(self, name):
        return self.names.index(name)

    def class_values(self):
        return np.array([[row[c[0]] for c in self.group.classes] for row in self.chars])

    def check(self):
        g = self.group
        n = g.order
        c = self.chars
        gram = c @ c.conj().T
        assert np.allclose(gram, n * np.eye(len(c)), atol=1e-12), "row orthogonality"
        cv = self.class_values()
        sizes = np.array([len(cl) for cl in g.classes])
        cols = (cv.conj().T @ cv)
        assert np.allclose(cols, np.diag(n / sizes), atol=1e-12), "column orthogonality"
        assert sum(self.dim(k) ** 2 for k in range(len(c))) == n, "sum of dim^2"
        assert len(c) == len(g.classes), "irreps = classes"
        return True


def _linear_characters(g: FiniteGroup):
    """All homomorphisms g -> C*, by brute force over generator images."""
    gens, span = [], {g.identity}
    for x in range(g.order):
        if x not in span:
            gens.append(x)
            span = _closure(g, gens)
    out = []
    options = [[np.exp(2j * np.pi * k / g.element_order(x)) for k in range(g.element_order(x))] for x in gens]
    for imgs in itertools.product(*options):
        chi = _extend(g, gens, imgs)
        if chi is not None:
            out.append(chi)
    return out


def _closure(g, gens):
    span = {g.identity}
    frontier = [g.identity]
    while frontier:
        a = frontier.pop()
        for x in gens:
            b = g.table[a][x]
            if b not in span:
                span.add(b)
                frontier.append(b)
    return span


def _extend(g, gens, imgs):
    val = {g.identity: 1.0 + 0j}
    frontier = [g.identity]
    while frontier:
        a = frontier.pop()
        for x, v in zip(gens, imgs):
            b = g.table[a][x]
            w = val[a] * v
            if b in val:
                if abs(val[b] - w) > 1e-9:
                    return None
            else:
                val[b] = w
                frontier.append(b)
    chi = np.array([val[h] for h in range(g.order)])
    # homomorphism check on the whole table
    for a in range(g.order):
        for b in range(g.order):
            if abs(chi[g.table[a][b]] - chi[a] * chi[b]) > 1e-9:
                return None
    return _snap(chi)


def _snap(v):
    v = np.asarray(v, dtype=complex)
    re, im = np.round(v.real, 12), np.round(v.imag, 12)
    return re + 1j * im


D4_SIGN_KERNELS = {"s1": ("1", "r", "r2", "r3"), "s2": ("1", "r2", "s", "r2s"), "s3": ("1", "r2", "rs", "r3s")}


def character_table(g: FiniteGroup) -> CharacterTable:
    if g.factors and not g.is_abelian:
        return product_table(character_table(g.factors[0]), character_table(g.factors[1]), g)
    lin = _linear_characters(g)
    chars = sorted(lin, key=lambda c: tuple(-round(x.real, 6) for x in c) + tuple(round(x.imag, 6) for x in c))
    names = []
    if g.is_abelian:
        names = ["1"] + [f"chi{k}" for k in range(1, len(chars))]
    elif g.order == 8:
        # D4 and Q8: one 2d irrep, from the regular character
        reg = np.zeros(g.order, dtype=complex)
        reg[g.identity] = g.order
        two = _snap((reg - sum(chars)) / 2)
        chars = chars + [two]
        names = _name_order8(g, chars)
    else:
        raise UnknownGroup(f"no character table recipe for non-abelian {g.name}")
    tab = CharacterTable(g, tuple(names), np.array(chars))
    tab.check()
    return tab


def _name_order8(g, chars):
    names = []
    for chi in chars:
        d = int(round(chi[g.identity].real))
        if d == 2:
            names.append("2")
            continue
        ker = tuple(sorted(g.labels[h] for h in range(g.order) if abs(chi[h] - 1) < TOL))
        if len(ker) == g.order:
            names.append("1")
            continue
        if g.name == "D4":
            names.append(next(n for n, k in D4_SIGN_KERNELS.items() if tuple(sorted(k)) == ker))
        else:
            # Q8 sign irreps are named by the cyclic subgroup in their kernel
            gen = next(l for l in ker if l.lstrip("-") not in ("1",))
            names.append(f"s_{gen.lstrip('-')}")
    return names


def product_table(t1: CharacterTable, t2: CharacterTable, g: FiniteGroup) -> CharacterTable:
    chars, names = [], []
    for a in range(len(t1.names)):
        for b in range(len(t2.names)):
            chars.append(np.array([t1.chars[a][x] * t2.chars[b][y]
                                   for x in range(t1.group.order) for y in range(t2.group.order)]))
            names.append(f"{t1.names[a]}x{t2.names[b]}")
    tab = CharacterTable(g, tuple(names), np.array(chars))
    tab.check()
    return tab


# -- anyons of the quantum double -------------------------------------------

@dataclass(frozen=True)
class AnyonLabel:
    index: int
    cls: int                 # conjugacy class index in G
    rep: int                 # class representative (lowest element index)
    irrep: int               # irrep index of the centralizer table
    class_label: str
    irrep_label: str
    dim: int
    spin: complex = field(compare=False)
    centralizer_order: int = 0

    @property
    def abelian(self):
        return self.dim == 1

    @property
    def boson(self):
        return abs(self.spin - 1) < TOL

    @property
    def name(self):
        return f"([{self.class_label}],{self.irrep_label})"

    def to_dict(self):
        return {"index": self.index, "class": self.class_label, "irrep": self.irrep_label, "d": self.dim,
                "theta": [round(self.spin.real, 12), round(self.spin.imag, 12)],
                "centralizer_order": self.centralizer_order}


class QuantumDouble:
    """D(G): anyons, S and T matrices and Verlinde fusion."""

    def __init__(self, g: FiniteGroup, table: CharacterTable | None = None):
        self.g = g
        self.table = table or character_table(g)
        self._cent = {}
        anyons = []
        for k, cl in enumerate(g.classes):
            rep = cl[0]
            ct, elems = self.centralizer_table(rep)
            for j, nm in enumerate(ct.names):
                d = len(cl) * ct.dim(j)
                pos = elems.index(rep)
                theta = ct.chars[j][pos] / ct.dim(j)
                anyons.append(AnyonLabel(len(anyons), k, rep, j, g.labels[rep], nm, d, complex(theta), len(elems)))
        self.anyons = anyons

    def centralizer_table(self, g):
        if g not in self._cent:
            elems = self.g.centralizer(g)
            if len(elems) == self.g.order:
                self._cent[g] = (self.table, tuple(range(self.g.order)))
            else:
                sub, el = self.g.subgroup(elems)
                if not sub.is_abelian:
                    raise UnknownGroup("non-abelian proper centralizer")
                self._cent[g] = (character_table(sub), el)
        return self._cent[g]

    def find(self, class_label, irrep_label):
        for a in self.anyons:
            if (a.class_label == class_label or class_label in [self.g.labels[h] for h in self.g.classes[a.cls]]) \
                    and a.irrep_label == irrep_label:
                return a
        raise KeyError((class_label, irrep_label))

    @property
    def total_dim(self):
        return float(np.sqrt(sum(a.dim ** 2 for a in self.anyons)))

    def _rep_conj(self, k):
        """For each element g of class k, some x with x rep x^-1 = g."""
        g = self.g
        rep = g.classes[k][0]
        out = {}
        for x in range(g.order):
            out.setdefault(g.conj(x, rep), x)
        return out

    @cached_property
    def S(self):
        g = self.g
        n = len(self.anyons)
        conj = [self._rep_conj(k) for k in range(len(g.classes))]
        S = np.zeros((n, n), dtype=complex)
        for A in self.anyons:
            ctA, elA = self.centralizer_table(A.rep)
            for B in self.anyons:
                ctB, elB = self.centralizer_table(B.rep)
                tot = 0j
                for a in g.classes[A.cls]:
                    xa = conj[A.cls][a]
                    for b in g.classes[B.cls]:
                        if g.table[a][b] != g.table[b][a]:
                            continue
                        yb = conj[B.cls][b]
                        # pull b into C(rep A) and a into C(rep B)
                        b0 = g.mul(g.inverse[xa], b, xa)
                        a0 = g.mul(g.inverse[yb], a, yb)
                        tot += np.conj(ctA.chars[A.irrep][elA.index(b0)]) * np.conj(ctB.chars[B.irrep][elB.index(a0)])
                S[A.index, B.index] = tot / g.order
        return S

    @cached_property
    def T(self):
        return np.diag([a.spin for a in self.anyons])

    @cached_property
    def fusion_tensor(self):
        S = self.S
        n = len(self.anyons)
        N = np.einsum("ax,bx,cx,x->abc", S, S, S.conj(), 1.0 / S[0])
        R = np.round(N.real)
        if np.max(np.abs(N - R)) > TOL or R.min() < 0:
            raise NonIntegerFusion(f"Verlinde gives non-integer or negative coefficient (max dev {np.max(np.abs(N - R)):.2e})")
        return R.astype(int)

    def fusion(self, a, b):
        """Multiset {c: N_ab^c}."""
        row = self.fusion_tensor[a, b]
        return {c: int(m) for c, m in enumerate(row) if m}

    def monodromy(self, a, b):
        S = self.S
        return S[a, b] * S[0, 0] / (S[0, a] * S[0, b])

    def dual(self, a):
        """Index of the antiparticle: class of rep^-1 with the conjugate character."""
        g = self.g
        A = self.anyons[a]
        ct, el = self.centralizer_table(A.rep)
        inv = g.inverse[A.rep]
        k = g.class_of(inv)
        rep2 = g.classes[k][0]
        x = next(x for x in range(g.order) if g.conj(x, inv) == rep2)
        ct2, el2 = self.centralizer_table(rep2)
        want = np.array([np.conj(ct.chars[A.irrep][el.index(g.mul(g.inverse[x], h, x))]) for h in el2])
        for B in self.anyons:
            if B.cls == k and np.allclose(ct2.chars[B.irrep], want, atol=TOL):
                return B.index
        raise ValueError("no dual found")

    def charge_conjugation(self):
        n = len(self.anyons)
        C = np.zeros((n, n), dtype=int)
        for a in range(n):
            C[a, self.dual(a)] = 1
        return C

    def group_law_product(self, a, b):
        """Fusion of two abelian anyons with central flux, from the group law."""
        A, B = self.anyons[a], self.anyons[b]
        g = self.g
        z = g.table[A.rep][B.rep]
        chi = self.table.chars[A.irrep] * self.table.chars[B.irrep]
        for C in self.anyons:
            if C.rep == z and len(g.classes[C.cls]) == 1 and np.allclose(self.table.chars[C.irrep], chi, atol=TOL):
                return C.index
        raise ValueError("not an abelian pair with central flux")

    def to_dict(self):
        return {"group": self.g.name, "n_anyons": len(self.anyons),
                "sum_d2": int(sum(a.dim ** 2 for a in self.anyons)),
                "anyons": [a.to_dict() for a in self.anyons]}


def double_anyons(g: FiniteGroup):
    return QuantumDouble(g).anyons


def spin(a: AnyonLabel) -> complex:
    return a.spin


def s_matrix(qd: QuantumDouble):
    return qd.S


def fusion(qd: QuantumDouble, a, b):
    return qd.fusion(a, b)


def check_modular(qd: QuantumDouble):
    """Unitarity, symmetry, S^2 a permutation, integral fusion."""
    S = qd.S
    n = len(S)
    rep = {"unitary": bool(np.allclose(S @ S.conj().T, np.eye(n), atol=1e-12)),
           "symmetric": bool(np.allclose(S, S.T, atol=1e-12))}
    S2 = S @ S
    rep["s2_is_charge_conjugation"] = bool(np.allclose(S2, qd.charge_conjugation(), atol=1e-12))
    try:
        N = qd.fusion_tensor
        rep["verlinde_integral"] = True
        rep["n0_is_identity"] = bool((N[0] == np.eye(n, dtype=int)).all())
    except NonIntegerFusion:
        rep["verlinde_integral"] = False
    rep["first_column_d_over_D"] = bool(np.allclose(S[:, 0], [a.dim / qd.total_dim for a in qd.anyons], atol=1e-12))
    rep["ok"] = all(rep.values())
    return rep


# -- Lagrangian subgroups -----------------------------------------------------

def is_lagrangian(qd: QuantumDouble, subset):
    subset = sorted(set(subset))
    members = [qd.anyons[k] for k in subset]
    report = {"subset": [a.name for a in members], "failures": []}
    if any(not a.abelian for a in members):
        report["failures"].append("abelian")
    if any(not a.boson for a in members):
        report["failures"].append("bosonic")
    if any(abs(qd.monodromy(a, b) - 1) > TOL for a in subset for b in subset):
        report["failures"].append("mutually-local")
    closed = True
    for a in subset:
        for b in subset:
            if any(c not in subset for c in qd.fusion(a, b)):
                closed = False
    if not closed:
        report["failures"].append("fusion-closed")
    outside = [x for x in range(len(qd.anyons)) if x not in subset]
    free = [qd.anyons[x].name for x in outside if all(abs(qd.monodromy(a, x) - 1) < TOL for a in subset)]
    if free:
        report["failures"].append("maximal")
        report["transparent_outsiders"] = free
    report["lagrangian"] = not report["failures"]
    return report["lagrangian"], report


def find_lagrangian_subgroups(qd: QuantumDouble):
    """Every Lagrangian subgroup, by growing fusion-closed sets of abelian bosons."""
    bosons = [a.index for a in qd.anyons if a.abelian and a.boson]
    target = int(round(qd.total_dim))
    mono_ok = {(a, b): abs(qd.monodromy(a, b) - 1) < TOL for a in bosons for b in bosons}
    prod = {}
    for a in bosons:
        for b in bosons:
            f = qd.fusion(a, b)
            prod[(a, b)] = next(iter(f)) if len(f) == 1 else None
    found = set()

    def close(base):
        s = set(base)
        grew = True
        while grew:
            grew = False
            for a in list(s):
                for b in list(s):
                    c = prod.get((a, b))
                    if c is None:
                        return None
                    if c not in s:
                        s.add(c)
                        grew = True
        return frozenset(s)

    seen = set()

    def grow(s):
        if s in seen:
            return
        seen.add(s)
        if len(s) == target:
            if is_lagrangian(qd, s)[0]:
                found.add(s)
            return
        for b in bosons:
            if b in s or not all(mono_ok[(a, b)] for a in s):
                continue
            t = close(s | {b})
            if t is not None and len(t) <= target and all((x, y) in mono_ok and mono_ok[(x, y)] for x in t for y in t):
                grow(t)

    grow(frozenset({0}))
    return [sorted(s) for s in sorted(found, key=sorted)]


# -- the correspondence table -------------------------------------------------

BILAYER_ROWS = (
    # bilayer orbit, swap charge, class, centralizer order, irrep, dim
    ("1", "1", "1", 8, "1", 1), ("e1e2", "s", "1", 8, "s1", 1),
    ("e1e2", "1", "1", 8, "s2", 1), ("1", "s", "1", 8, "s3", 1),
    ("m1m2", "1", "r2", 8, "1", 1), ("f1f2", "s", "r2", 8, "s1", 1),
    ("f1f2", "1", "r2", 8, "s2", 1), ("m1m2", "s", "r2", 8, "s3", 1),
    ("e1", "1", "1", 8, "2", 2), ("m1", "1", "rs", 4, "1", 2),
)

# the eight bilayer anyons generated by e1e2, m1m2 and the swap charge s
BILAYER_LAGRANGIAN = {"1": ("1", "1"), "e1e2s": ("1", "s1"), "e1e2": ("1", "s2"), "s": ("1", "s3"),
                      "m1m2": ("r2", "1"), "f1f2s": ("r2", "s1"), "f1f2": ("r2", "s2"), "m1m2s": ("r2", "s3")}


def bilayer_subset(qd):
    return sorted(qd.find(c, i).index for c, i in BILAYER_LAGRANGIAN.values())


def bilayer_check(qd: QuantumDouble | None = None):
    qd = qd or QuantumDouble(make_group("D4"))
    g = qd.g
    rows = []
    for orbit, charge, cls, cent, irrep, dim in BILAYER_ROWS:
        try:
            a = qd.find(cls, irrep)
        except KeyError:
            rows.append({"bilayer": orbit, "swap_charge": charge, "class": cls, "irrep": irrep,
                         "ok": False, "why": "missing"})
            continue
        ok = a.dim == dim and a.centralizer_order == cent
        if dim == 1:
            ok = ok and a.boson
        rows.append({"bilayer": orbit, "swap_charge": charge, "class": cls, "irrep": irrep, "d": a.dim, "theta": [a.spin.real, a.spin.imag],
                     "centralizer_order": a.centralizer_order, "ok": bool(ok)})
    kernels = {}
    for name, want in D4_SIGN_KERNELS.items():
        k = qd.table.by_name(name)
        got = sorted(g.labels[h] for h in qd.table.kernel(k))
        kernels[name] = {"kernel": got, "ok": got == sorted(want)}
    rs_class = sorted(g.labels[h] for h in g.classes[g.class_of(g.index("rs"))])
    report = {"rows": rows, "kernels": kernels, "rs_class": rs_class,
              "rs_class_ok": rs_class == ["r3s", "rs"],
              "rs_centralizer_order": len(g.centralizer(g.index("rs")))}
    report["ok"] = (all(r["ok"] for r in rows) and all(k["ok"] for k in kernels.values())
                    and report["rs_class_ok"] and report["rs_centralizer_order"] == 4)
    return report


def anyons_json(qd: QuantumDouble, lagrangian=None, **kw):
    d = qd.to_dict()
    if lagrangian is not None:
        d["lagrangian"] = lagrangian
    return json.dumps(d, **kw)
