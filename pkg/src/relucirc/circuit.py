"""Affine-atom extraction and the alternating MinMax / OR-AND trees that are
exactly equivalent to a ReLU classifier.

The operand recursion keeps, per hypothetical state pair ``(mu, tau)``, an
affine functional of the input represented as an augmented coefficient matrix
``C`` with atom(x) = C @ (x, 1).  Both orientations ``(mu, tau)`` and
``(tau, mu)`` are carried through every layer because each step consumes the
opposite orientation in its negative-part term:

    C'_mt = W+ . (mu_l * C_mt) - W- . (tau_l * C_tm) + bias
    C'_tm = W+ . (tau_l * C_tm) - W- . (mu_l * C_mt) + bias

At the top layer the matrix is a single row: the atom vector.  With
``mu = tau = state(x)`` the recursion collapses to the exact linearization of
the network on the region of ``x``, which is where the saddle identity
``atom(x) = N(x)`` comes from.

Trees index atoms over a layer-major trie of a state set: levels alternate a
``mu`` join (Max / OR) and a ``tau`` join (Min / AND) per hidden layer, from
layer d down to layer 1.  Evaluation is available both through explicit node
graphs (needed for simplification, splicing and probing) and through a
vectorized segmented-reduction path over the trie (used for verification at
grid scale); both produce identical values.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mlp import ArchSpec, InputError, MlpParams, NetworkState, forward, split_signs

__all__ = [
    "AffineAtom",
    "AtomTable",
    "StateTrie",
    "Node",
    "CircuitTree",
    "net_operand_atom",
    "atoms_for_pairs",
    "build_tree",
    "eval_tree",
    "simplify",
    "splice",
    "save_circuit",
    "load_circuit",
    "circuit_to_dict",
    "circuit_from_dict",
]

JOIN_MU = "join_mu"    # Max (numeric) / OR (logical)
JOIN_TAU = "join_tau"  # Min (numeric) / AND (logical)
LEAF = "leaf"

DEFAULT_EXPLICIT_LEAF_BUDGET = 300_000


@dataclass(frozen=True)
class AffineAtom:
    """Affine functional ``x -> v[:-1] . x + v[-1]``."""

    v: tuple[float, ...]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        v = np.asarray(self.v)
        return float(v[:-1] @ x + v[-1])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.v, dtype=np.float64)


def _augment(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


def _bits_array(state, arch: ArchSpec) -> np.ndarray:
    if isinstance(state, NetworkState):
        bits = state.as_array()
    else:
        bits = np.asarray(state, dtype=np.uint8).reshape(-1)
    if bits.shape[0] != arch.total_hidden:
        raise InputError(f"state has {bits.shape[0]} bits, arch needs {arch.total_hidden}")
    return bits


def net_operand_atom(params: MlpParams, mu, tau) -> AffineAtom:
    """Affine atom realizing the net operand for one ``(mu, tau)`` pair."""
    arch = params.arch
    mu = _bits_array(mu, arch).astype(np.float64)
    tau = _bits_array(tau, arch).astype(np.float64)
    C_mt = np.hstack([params.weights[0], params.biases[0][:, None]])
    C_tm = C_mt.copy()
    for l in range(1, arch.depth + 1):
        sl = arch.layer_slice(l)
        m, t = mu[sl][:, None], tau[sl][:, None]
        Wp, Wm = split_signs(params.weights[l])
        new_mt = Wp @ (m * C_mt) - Wm @ (t * C_tm)
        new_tm = Wp @ (t * C_tm) - Wm @ (m * C_mt)
        new_mt[:, -1] += params.biases[l]
        new_tm[:, -1] += params.biases[l]
        C_mt, C_tm = new_mt, new_tm
    return AffineAtom(tuple(C_mt[0].tolist()))


def atoms_for_pairs(params: MlpParams, bits: np.ndarray, mu_idx: np.ndarray,
                    tau_idx: np.ndarray, share_budget: int = 200_000,
                    chunk: int = 1 << 16) -> np.ndarray:
    """Atom vectors for many pairs at once: pair p is
    ``(bits[mu_idx[p]], bits[tau_idx[p]])``; returns ``(n_pairs, w0+1)``.

    Pairs sharing a low-layer prefix share the recursion work: levels are
    processed on deduplicated prefix pairs while their count stays under
    ``share_budget``, then the survivors are expanded in chunks.
    """
    arch = params.arch
    bits = np.asarray(bits, dtype=np.uint8)
    mu_idx = np.asarray(mu_idx, dtype=np.int64)
    tau_idx = np.asarray(tau_idx, dtype=np.int64)
    n_pairs = mu_idx.shape[0]
    k = arch.input_dim + 1
    if n_pairs == 0:
        return np.zeros((0, k), dtype=np.float64)

    splits = [split_signs(W) for W in params.weights]
    offs = np.concatenate([[0], np.cumsum(arch.hidden_widths)])

    # prefix id per state per level (levels 1..d use bits of layers 1..l)
    pids = []
    for l in range(1, arch.depth + 1):
        _, inv = np.unique(bits[:, : offs[l]], axis=0, return_inverse=True)
        pids.append(inv.reshape(-1))

    def step(l, C_mt, C_tm, mu_bits_l, tau_bits_l):
        Wp, Wm = splits[l]
        m = mu_bits_l[:, :, None]
        t = tau_bits_l[:, :, None]
        new_mt = np.matmul(Wp[None], m * C_mt) - np.matmul(Wm[None], t * C_tm)
        new_tm = np.matmul(Wp[None], t * C_tm) - np.matmul(Wm[None], m * C_mt)
        new_mt[:, :, -1] += params.biases[l]
        new_tm[:, :, -1] += params.biases[l]
        return new_mt, new_tm

    C0 = np.hstack([params.weights[0], params.biases[0][:, None]])
    # shared phase: pair -> unique prefix-pair id
    uid_of_pair = np.zeros(n_pairs, dtype=np.int64)
    U_mt = C0[None].copy()
    U_tm = C0[None].copy()
    level = 0
    while level < arch.depth:
        l = level + 1
        pid = pids[level]
        key = pid[mu_idx] * (pid.max() + 1) + pid[tau_idx]
        uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
        if uniq.shape[0] > share_budget:
            break
        sl = slice(offs[level], offs[level + 1])
        mu_b = bits[mu_idx[first], sl].astype(np.float64)
        tau_b = bits[tau_idx[first], sl].astype(np.float64)
        parent = uid_of_pair[first]
        U_mt, U_tm = step(l, U_mt[parent], U_tm[parent], mu_b, tau_b)
        uid_of_pair = inv.reshape(-1)
        level += 1

    if level == arch.depth:
        return U_mt[uid_of_pair, 0, :]

    # expansion phase: remaining levels per pair, chunked
    out = np.empty((n_pairs, k), dtype=np.float64)
    for s in range(0, n_pairs, chunk):
        e = min(s + chunk, n_pairs)
        C_mt = U_mt[uid_of_pair[s:e]]
        C_tm = U_tm[uid_of_pair[s:e]]
        for lev in range(level, arch.depth):
            sl = slice(offs[lev], offs[lev + 1])
            mu_b = bits[mu_idx[s:e], sl].astype(np.float64)
            tau_b = bits[tau_idx[s:e], sl].astype(np.float64)
            C_mt, C_tm = step(lev + 1, C_mt, C_tm, mu_b, tau_b)
        out[s:e] = C_mt[:, 0, :]
    return out


@dataclass
class AtomTable:
    """Deduplicated atom vectors plus the pair -> atom-id map."""

    values: np.ndarray    # (n_atoms, w0+1)
    pair_ids: np.ndarray  # (n_mu, n_tau) int32, or (0,0) for degenerate trees

    @classmethod
    def from_pair_values(cls, V: np.ndarray, shape: tuple[int, int]) -> "AtomTable":
        uniq, inv = np.unique(V, axis=0, return_inverse=True)
        return cls(uniq, inv.reshape(shape).astype(np.int32))

    @property
    def n_atoms(self) -> int:
        return self.values.shape[0]

    def eval_unique(self, X: np.ndarray) -> np.ndarray:
        """Values of every unique atom at every point: (n_atoms, n_points)."""
        return self.values @ _augment(X).T


class StateTrie:
    """State set sorted layer-d-major with per-depth group boundaries.

    ``level_starts[j]`` holds, for the prefix trie over the top ``j`` layers,
    the index in the sorted state list where each depth-``j`` node's span
    begins (depth 0 is the root spanning everything).
    """

    def __init__(self, bits: np.ndarray, widths: tuple[int, ...]):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[1] != sum(widths):
            raise InputError(f"bit matrix shape {bits.shape} does not match widths {widths}")
        if bits.shape[0] == 0:
            raise InputError("state set must be nonempty")
        self.widths = tuple(widths)
        d = len(widths)
        # layer-d-major column order
        perm = np.concatenate([np.arange(sum(widths[:l - 1]), sum(widths[:l]))
                               for l in range(d, 0, -1)]) if d else np.arange(0)
        K = bits[:, perm]
        order = np.lexsort(K.T[::-1])
        self.bits = bits[order]
        self.order = order
        K = K[order]
        top_offs = np.concatenate([[0], np.cumsum(self.widths[::-1])])
        self.level_starts: list[np.ndarray] = [np.array([0])]
        for j in range(1, d + 1):
            pref = K[:, : top_offs[j]]
            changed = np.any(pref[1:] != pref[:-1], axis=1)
            self.level_starts.append(np.concatenate([[0], np.flatnonzero(changed) + 1]))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def depth(self) -> int:
        return len(self.widths)

    def node_counts(self) -> list[int]:
        return [len(s) for s in self.level_starts]

    def reduce_starts(self, j: int) -> np.ndarray:
        """Boundaries of depth-(j-1) groups expressed in depth-j node indices."""
        return np.searchsorted(self.level_starts[j], self.level_starts[j - 1])

    def child_spans(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """For every depth-(j-1) node: [start, end) range of its depth-j children."""
        rs = self.reduce_starts(j)
        return rs, np.concatenate([rs[1:], [len(self.level_starts[j])]])


def hierarchical_reduce(pairvals: np.ndarray, trie: StateTrie, numeric: bool) -> np.ndarray:
    """Value of the alternating tree given leaf pair values (n, n, P).

    Reduces innermost-first: for each layer from 1 up to d, first the tau axis
    (Min / AND), then the mu axis (Max / OR), each over trie sibling groups.
    """
    arr = pairvals
    op_tau = np.minimum if numeric else np.logical_and
    op_mu = np.maximum if numeric else np.logical_or
    for j in range(trie.depth, 0, -1):
        rs = trie.reduce_starts(j)
        arr = op_tau.reduceat(arr, rs, axis=1)
        arr = op_mu.reduceat(arr, rs, axis=0)
    return arr[0, 0]


@dataclass
class Node:
    """Explicit tree node; ``layer`` is the hidden layer a join ranges over."""

    kind: str
    layer: int = 0
    children: list["Node"] = field(default_factory=list)
    atom_id: int = -1

    def copy(self) -> "Node":
        return Node(self.kind, self.layer, [c.copy() for c in self.children], self.atom_id)


class CircuitTree:
    """Alternating Max/Min (numeric) or OR/AND (logical) circuit.

    Freshly built trees carry the full product structure (states, trie, atom
    table) enabling vectorized evaluation; explicit nodes are materialized on
    demand and become the only representation after structural edits.
    """

    def __init__(self, mode: str, input_dim: int, atoms: AtomTable,
                 trie: StateTrie | None = None, root: Node | None = None,
                 warning: str | None = None):
        if mode not in ("numeric", "logical"):
            raise InputError(f"mode must be numeric|logical, got {mode}")
        if trie is None and root is None:
            raise InputError("tree needs a trie or an explicit root")
        self.mode = mode
        self.input_dim = input_dim
        self.atoms = atoms
        self.trie = trie
        self.root = root
        self.warning = warning

    # -- structure ----------------------------------------------------------

    @property
    def is_numeric(self) -> bool:
        return self.mode == "numeric"

    def leaf_count(self) -> int:
        if self.root is not None:
            return sum(1 for n in self.walk() if n.kind == LEAF)
        return self.trie.n ** 2

    def node_count(self) -> int:
        if self.root is not None:
            return sum(1 for _ in self.walk())
        m = self.trie.node_counts()
        internal = sum(m[j - 1] ** 2 + m[j] * m[j - 1] for j in range(1, self.trie.depth + 1))
        return internal + self.trie.n ** 2

    def walk(self):
        if self.root is None:
            raise InputError("explicit nodes not materialized; call ensure_explicit()")
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def node_at(self, path) -> Node:
        node = self.root if self.root is not None else self.ensure_explicit()
        for i in path:
            if not 0 <= i < len(node.children):
                raise InputError(f"invalid node path {tuple(path)}")
            node = node.children[i]
        return node

    def paths(self):
        """Yield (path, node) pairs in preorder."""
        if self.root is None:
            self.ensure_explicit()
        stack = [((), self.root)]
        while stack:
            path, n = stack.pop()
            yield path, n
            for i in range(len(n.children) - 1, -1, -1):
                stack.append((path + (i,), n.children[i]))

    def ensure_explicit(self, leaf_budget: int = DEFAULT_EXPLICIT_LEAF_BUDGET) -> Node:
        if self.root is not None:
            return self.root
        if self.trie.n ** 2 > leaf_budget:
            raise InputError(
                f"{self.trie.n ** 2} leaves exceed the explicit budget {leaf_budget}")
        self.root = _explicit_from_trie(self.trie, self.atoms.pair_ids)
        return self.root

    # -- evaluation ---------------------------------------------------------

    def eval_batch(self, X: np.ndarray, point_chunk: int | None = None) -> np.ndarray:
        """Tree values at each row of X: floats (numeric) or bools (logical)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InputError(f"expected (n, {self.input_dim}) inputs")
        if self.trie is not None:
            return self._eval_product(X, point_chunk)
        return self._eval_explicit(X)

    def _eval_product(self, X: np.ndarray, point_chunk) -> np.ndarray:
        n = self.trie.n
        P = X.shape[0]
        if point_chunk is None:
            point_chunk = max(1, min(P, int(4e7 // max(n * n, 1)) or 1))
        numeric = self.is_numeric
        out = np.empty(P, dtype=np.float64 if numeric else bool)
        for s in range(0, P, point_chunk):
            e = min(s + point_chunk, P)
            vals = self.atoms.eval_unique(X[s:e])
            pv = vals[self.atoms.pair_ids]
            if not numeric:
                pv = pv >= 0
            out[s:e] = hierarchical_reduce(pv, self.trie, numeric)
        return out

    def _eval_explicit(self, X: np.ndarray) -> np.ndarray:
        vals = self.atoms.eval_unique(X)
        if not self.is_numeric:
            vals = vals >= 0
        return _eval_node(self.root, vals, self.is_numeric)

    # -- serialization ------------------------------------------------------

    def copy(self) -> "CircuitTree":
        root = None if self.root is None else self.root.copy()
        return CircuitTree(self.mode, self.input_dim,
                           AtomTable(self.atoms.values.copy(), self.atoms.pair_ids.copy()),
                           self.trie, root, self.warning)


def _eval_node(node: Node, atom_vals: np.ndarray, numeric: bool) -> np.ndarray:
    if node.kind == LEAF:
        return atom_vals[node.atom_id]
    parts = [_eval_node(c, atom_vals, numeric) for c in node.children]
    if numeric:
        op = np.maximum if node.kind == JOIN_MU else np.minimum
    else:
        op = np.logical_or if node.kind == JOIN_MU else np.logical_and
    acc = parts[0]
    for p in parts[1:]:
        acc = op(acc, p)
    return acc


def _explicit_from_trie(trie: StateTrie, pair_ids: np.ndarray) -> Node:
    d = trie.depth
    spans = [trie.child_spans(j) for j in range(1, d + 1)]  # spans[j-1] for depth j

    def or_node(u: int, t: int, j: int) -> Node:
        # u, t are depth-(j-1) node indices; j consumes layer d-j+1
        if j > d:
            return Node(LEAF, 0, atom_id=int(pair_ids[u, t]))
        lo, hi = spans[j - 1][0][u], spans[j - 1][1][u]
        kids = [and_node(u2, t, j) for u2 in range(lo, hi)]
        return kids[0] if len(kids) == 1 else Node(JOIN_MU, d - j + 1, kids)

    def and_node(u2: int, t: int, j: int) -> Node:
        lo, hi = spans[j - 1][0][t], spans[j - 1][1][t]
        kids = [or_node(u2, t2, j + 1) for t2 in range(lo, hi)]
        return kids[0] if len(kids) == 1 else Node(JOIN_TAU, d - j + 1, kids)

    return or_node(0, 0, 1)


# -- construction -------------------------------------------------------------


def build_tree(params: MlpParams, source, mode: str,
               explicit: bool | None = None,
               explicit_leaf_budget: int = DEFAULT_EXPLICIT_LEAF_BUDGET) -> CircuitTree:
    """Build the equivalence tree for a net.

    ``source`` is a StateRegistry (numeric mode uses all realized states,
    logical mode the boundary states) or an explicit state bit matrix.
    An empty logical state set yields the degenerate constant circuit with a
    warning: the network never changes sign.
    """
    if mode not in ("numeric", "logical"):
        raise InputError(f"mode must be numeric|logical, got {mode}")
    arch = params.arch
    if hasattr(source, "sigma_zero"):
        bits = source.sigma_all() if mode == "numeric" else source.sigma_zero()
        registry = source
    else:
        bits = np.asarray(source, dtype=np.uint8)
        registry = None

    if mode == "logical" and bits.shape[0] == 0:
        if registry is not None and len(registry) > 0:
            rep = registry.representative(registry.sigma_all()[0])
            const = forward(params, rep).output
        else:
            const = forward(params, np.zeros(arch.input_dim)).output
        msg = "boundary state set is empty: network never changes sign; constant circuit"
        warnings.warn(msg)
        atom = np.zeros((1, arch.input_dim + 1))
        atom[0, -1] = const if const != 0 else 1.0
        root = Node(LEAF, 0, atom_id=0)
        return CircuitTree("logical", arch.input_dim,
                           AtomTable(atom, np.zeros((0, 0), np.int32)), None, root, msg)
    if bits.shape[0] == 0:
        raise InputError("numeric mode requires a nonempty state set")

    trie = StateTrie(bits, arch.hidden_widths)
    n = trie.n
    mu_idx = np.repeat(np.arange(n), n)
    tau_idx = np.tile(np.arange(n), n)
    V = atoms_for_pairs(params, trie.bits, mu_idx, tau_idx)
    atoms = AtomTable.from_pair_values(V, (n, n))
    tree = CircuitTree(mode, arch.input_dim, atoms, trie)
    if explicit is None:
        explicit = n * n <= explicit_leaf_budget and mode == "logical"
    if explicit:
        tree.ensure_explicit(explicit_leaf_budget)
    return tree


def eval_tree(tree: CircuitTree, x):
    """Single-point evaluation: real (numeric mode) or bool (logical mode)."""
    out = tree.eval_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(out[0]) if tree.is_numeric else bool(out[0])


# -- simplification and splicing ----------------------------------------------


def _node_tables(tree: CircuitTree, X: np.ndarray) -> dict[int, np.ndarray]:
    """Truth table of every node (by id(node)) over probe inputs."""
    vals = tree.atoms.eval_unique(X) >= 0
    tables: dict[int, np.ndarray] = {}

    def rec(node: Node) -> np.ndarray:
        if node.kind == LEAF:
            t = vals[node.atom_id]
        else:
            parts = [rec(c) for c in node.children]
            acc = parts[0]
            op = np.logical_or if node.kind == JOIN_MU else np.logical_and
            for p in parts[1:]:
                acc = op(acc, p)
            t = acc
        tables[id(node)] = t
        return t

    rec(tree.ensure_explicit())
    return tables


def _absorb_pass(node: Node, tables: dict[int, np.ndarray]) -> bool:
    """One bottom-up absorption/flatten/collapse pass; True if anything changed."""
    changed = False
    for c in node.children:
        changed |= _absorb_pass(c, tables)
    if node.kind == LEAF:
        return changed

    # flatten same-kind children (can appear after single-child collapses)
    flat: list[Node] = []
    for c in node.children:
        if c.kind == node.kind:
            flat.extend(c.children)
            changed = True
        else:
            flat.append(c)

    # absorption: for OR drop children implied by a kept sibling, for AND drop
    # children implied-by (weaker than) a kept sibling
    counts = [int(tables[id(c)].sum()) for c in flat]
    order = sorted(range(len(flat)), key=lambda i: (-counts[i], i) if node.kind == JOIN_MU
                   else (counts[i], i))
    kept: list[Node] = []
    for i in order:
        t = tables[id(flat[i])]
        if node.kind == JOIN_MU:
            redundant = any(bool(np.all(t <= tables[id(k)])) for k in kept)
        else:
            redundant = any(bool(np.all(tables[id(k)] <= t)) for k in kept)
        if redundant:
            changed = True
        else:
            kept.append(flat[i])
    # restore original relative child order for determinism
    orig_order = {id(c): i for i, c in enumerate(flat)}
    kept.sort(key=lambda nd: orig_order[id(nd)])
    node.children = kept

    if len(node.children) == 1:
        child = node.children[0]
        node.kind, node.layer, node.children, node.atom_id = \
            child.kind, child.layer, child.children, child.atom_id
        changed = True
    return changed


def simplify(tree: CircuitTree, probe_inputs: np.ndarray,
             params: MlpParams | None = None, grid=None) -> CircuitTree:
    """Drop OR/AND children whose truth value over the probe inputs is implied
    by a sibling, flatten and collapse; logical trees only.

    The result agrees with the input tree on every probe input by
    construction; when ``params`` and ``grid`` are supplied the simplified
    tree is additionally checked for full sign agreement with the network on
    that grid, and on failure the original tree is returned with a warning.
    """
    if tree.is_numeric:
        raise InputError("simplify applies to logical trees")
    probe_inputs = np.asarray(probe_inputs, dtype=np.float64)
    out = tree.copy()
    out.ensure_explicit()
    out.trie = None  # product structure no longer describes the tree
    for _ in range(64):
        tables = _node_tables(out, probe_inputs)
        if not _absorb_pass(out.root, tables):
            break

    before = tree.eval_batch(probe_inputs)
    after = out.eval_batch(probe_inputs)
    if not np.array_equal(before, after):
        warnings.warn("simplification changed probe behavior; returning original tree")
        return tree
    if params is not None and grid is not None:
        from .mlp import forward_batch
        for _, X in grid.iter_chunks():
            net_sign = forward_batch(params, X)[0] >= 0
            if not np.array_equal(net_sign, out.eval_batch(X)):
                warnings.warn("simplified tree disagrees with the network on the grid; "
                              "returning original tree")
                return tree
    return out


def splice(tree: CircuitTree, node_path, replacement: CircuitTree) -> CircuitTree:
    """Replace the subtree at ``node_path`` (child indices from the root) with
    the replacement tree's root; atom tables are merged."""
    if replacement.input_dim != tree.input_dim:
        raise InputError("replacement lives on a different input space")
    out = tree.copy()
    out.ensure_explicit()
    out.trie = None
    rep = replacement.copy()
    rep.ensure_explicit()

    # merge atom tables, remapping replacement atom ids
    base = out.atoms.values
    extra = rep.atoms.values
    merged = np.vstack([base, extra])
    uniq, inv = np.unique(merged, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    remap_host = inv[: base.shape[0]]
    remap_rep = inv[base.shape[0]:]
    for n in out.walk():
        if n.kind == LEAF:
            n.atom_id = int(remap_host[n.atom_id])
    new_sub = rep.root
    for n in _walk_node(new_sub):
        if n.kind == LEAF:
            n.atom_id = int(remap_rep[n.atom_id])
    out.atoms = AtomTable(uniq, np.zeros((0, 0), np.int32))

    node_path = tuple(node_path)
    if node_path == ():
        out.root = new_sub
        return out
    parent = out.node_at(node_path[:-1])
    i = node_path[-1]
    if not 0 <= i < len(parent.children):
        raise InputError(f"invalid node path {node_path}")
    parent.children[i] = new_sub
    return out


def _walk_node(root: Node):
    stack = [root]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(n.children)


# -- persistence ---------------------------------------------------------------

_KIND_OUT = {
    ("numeric", JOIN_MU): "max", ("numeric", JOIN_TAU): "min",
    ("logical", JOIN_MU): "or", ("logical", JOIN_TAU): "and",
}
_KIND_IN = {"max": JOIN_MU, "min": JOIN_TAU, "or": JOIN_MU, "and": JOIN_TAU}


def circuit_to_dict(tree: CircuitTree) -> dict:
    root = tree.ensure_explicit()
    nodes = []
    ids: dict[int, int] = {}

    def assign(n: Node) -> int:
        for c in n.children:
            assign(c)
        nid = ids[id(n)] = len(ids)
        if n.kind == LEAF:
            nodes.append({"id": nid, "kind": "leaf", "atom_id": n.atom_id})
        else:
            nodes.append({"id": nid, "kind": _KIND_OUT[(tree.mode, n.kind)], "layer": n.layer,
                          "children": [ids[id(c)] for c in n.children]})
        return nid

    root_id = assign(root)
    atoms = [{"id": i, "coefficients": [v.hex() for v in row[:-1].tolist()],
              "constant": row[-1].hex()} for i, row in enumerate(tree.atoms.values)]
    return {
        "format": "relucirc-circuit-v1",
        "mode": tree.mode,
        "input_dim": tree.input_dim,
        "root": root_id,
        "nodes": nodes,
        "atoms": atoms,
        "warning": tree.warning,
    }


def circuit_from_dict(d: dict) -> CircuitTree:
    atoms = np.array([[float.fromhex(c) for c in a["coefficients"]] + [float.fromhex(a["constant"])]
                      for a in sorted(d["atoms"], key=lambda a: a["id"])], dtype=np.float64)
    built: dict[int, Node] = {}
    for rec in d["nodes"]:
        if rec["kind"] == "leaf":
            built[rec["id"]] = Node(LEAF, 0, atom_id=rec["atom_id"])
        else:
            kids = [built[c] for c in rec["children"]]
            built[rec["id"]] = Node(_KIND_IN[rec["kind"]], rec.get("layer", 0), kids)
    return CircuitTree(d["mode"], d["input_dim"],
                       AtomTable(atoms, np.zeros((0, 0), np.int32)),
                       None, built[d["root"]], d.get("warning"))


def save_circuit(tree: CircuitTree, path) -> None:
    with open(path, "w") as f:
        json.dump(circuit_to_dict(tree), f)


def load_circuit(path) -> CircuitTree:
    with open(path) as f:
        return circuit_from_dict(json.load(f))
