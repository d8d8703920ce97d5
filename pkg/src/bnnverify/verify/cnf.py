"""CNF export of pure-binary suffixes, plus a toy DPLL solver.

Past the first binarization the network is boolean: activations are +-1,
every linear layer computes integer sums of +-1 terms, and batch-norm
followed by sign folds into a per-channel threshold.  This module encodes
that suffix, under caller-fixed phases for the first binarization, as CNF:
thresholds become cardinality constraints (bidirectional sequential
counter), binary maxpool becomes OR (AND under a negative fold direction),
and the negated robustness property becomes a disjunction over rival
classes.  The formula is satisfiable exactly when some completion of the
free phases produces a counterexample.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import EncodingError, ShapeMismatchError
from ..layers import BatchNorm, Flatten, MaxPool, QConv, QDense, layer_forward
from .intervals import check_property_shapes, fold_bn_sign, ibp_trace, property_box

__all__ = [
    "CnfFormula",
    "CnfBuilder",
    "counter_geq",
    "require_geq",
    "export_cnf",
    "format_varmap",
    "dpll_satisfiable",
    "binary_suffix_forward",
    "first_quantize_index",
    "stable_phases_from_box",
]


@dataclass(frozen=True)
class CnfFormula:
    """Propositional formula in conjunctive normal form, DIMACS semantics."""

    num_vars: int
    clauses: tuple

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars cannot be negative")
        normalized = []
        for clause in self.clauses:
            c = tuple(int(lit) for lit in clause)
            for lit in c:
                if lit == 0:
                    raise ValueError("literal 0 is the DIMACS terminator, not a literal")
                if abs(lit) > self.num_vars:
                    raise ValueError(f"literal {lit} exceeds num_vars={self.num_vars}")
            normalized.append(c)
        object.__setattr__(self, "clauses", tuple(normalized))

    def to_dimacs(self):
        lines = [f"p cnf {self.num_vars} {len(self.clauses)}"]
        for clause in self.clauses:
            lines.append(" ".join([str(lit) for lit in clause] + ["0"]))
        return "\n".join(lines) + "\n"


class CnfBuilder:
    """Mutable clause accumulator with named variables."""

    def __init__(self):
        self.num_vars = 0
        self.clauses = []
        self.names = {}
        self._true = None

    def new_var(self, name=None):
        self.num_vars += 1
        if name is not None:
            self.names[self.num_vars] = name
        return self.num_vars

    def add(self, clause):
        c = tuple(int(lit) for lit in clause)
        if any(lit == 0 for lit in c):
            raise ValueError("clause may not contain literal 0")
        self.clauses.append(c)

    def true_lit(self):
        """Literal pinned true; constants are phrased through it."""
        if self._true is None:
            self._true = self.new_var("const-true")
            self.add([self._true])
        return self._true

    def const_lit(self, value):
        t = self.true_lit()
        return t if value > 0 else -t

    def build(self):
        return CnfFormula(self.num_vars, tuple(self.clauses))


def counter_geq(builder, lits, k):
    """Literal equivalent to "at least k of ``lits`` are true".

    Bidirectional sequential counter: registers s[i][j] <-> (at least j+1
    true among the first i+1 inputs).  For 1 <= k <= n this allocates
    exactly n*k auxiliary variables; out-of-range k collapses to a
    constant literal.
    """
    n = len(lits)
    if k <= 0:
        return builder.true_lit()
    if k > n:
        return -builder.true_lit()
    true = builder.true_lit()
    false = -true
    regs = [[builder.new_var() for _ in range(k)] for _ in range(n)]
    for i in range(n):
        x = int(lits[i])
        for j in range(k):
            s = regs[i][j]
            a = regs[i - 1][j] if i >= 1 else false
            if j == 0:
                c = true
            elif i >= 1:
                c = regs[i - 1][j - 1]
            else:
                c = false
            # s <-> a or (x and c)
            builder.add([-s, a, x])
            builder.add([-s, a, c])
            builder.add([-a, s])
            builder.add([-x, -c, s])
    return regs[n - 1][k - 1]


def require_geq(builder, lits, k):
    """Assert at-least-k of ``lits`` directly (no indicator literal).

    k == 1 is a plain disjunction clause; larger k goes through the
    counter; impossible k yields the empty clause.
    """
    n = len(lits)
    if k <= 0:
        return
    if k > n:
        builder.add([])
    elif k == 1:
        builder.add(list(lits))
    else:
        builder.add([counter_geq(builder, lits, k)])


def _or_literal(builder, lits):
    v = builder.new_var()
    builder.add([-v] + [int(l) for l in lits])
    for l in lits:
        builder.add([-int(l), v])
    return v


def _and_literal(builder, lits):
    v = builder.new_var()
    builder.add([v] + [-int(l) for l in lits])
    for l in lits:
        builder.add([-v, int(l)])
    return v


def _sum_geq_lit(builder, lits, c):
    # sum of +-1 terms >= c, with m terms: #true >= ceil((c+m)/2)
    m = len(lits)
    return counter_geq(builder, list(lits), -((-(c + m)) // 2))


def _sum_leq_lit(builder, lits, c):
    # sum <= c is the negation of sum >= c+1 over integers
    m = len(lits)
    return -counter_geq(builder, list(lits), (c + m) // 2 + 1)


def first_quantize_index(net):
    """Index of the first layer that binarizes its input."""
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (QConv, QDense)) and layer.quantize_input:
            return i
    raise EncodingError("network has no binarization boundary (no quantizing layer)")


def _normalize_phases(phases, n):
    if phases is None:
        raise EncodingError(
            "first-layer phases are unfixed; pass a length-"
            f"{n} sequence of +-1 (fixed) or None (free)"
        )
    try:
        seq = list(phases)
    except TypeError:
        raise EncodingError("phases must be a sequence of +-1/None entries") from None
    if len(seq) != n:
        raise EncodingError(f"expected {n} phase entries, got {len(seq)}")
    out = []
    for i, p in enumerate(seq):
        if p is None:
            out.append(None)
            continue
        try:
            v = float(p)
        except (TypeError, ValueError):
            raise EncodingError(f"phase {i} is not numeric: {p!r}") from None
        if math.isnan(v) or v == 0.0:
            out.append(None)
        elif v in (1.0, -1.0):
            out.append(int(v))
        else:
            raise EncodingError(f"phase {i} must be +-1 or free, got {p!r}")
    return out


def _signed_sums(acts, lin):
    """Per-output tuples of signed literals, one +-1 term per weight."""
    if isinstance(lin, QDense):
        w = lin.weights
        out = np.empty(w.shape[1], dtype=object)
        flat = [int(a) for a in acts.reshape(-1)]
        for o in range(w.shape[1]):
            col = w[:, o]
            out[o] = tuple(a if cv > 0 else -a for a, cv in zip(flat, col))
        return out
    kh, kw = lin.kernel_h, lin.kernel_w
    h, w_, c = acts.shape
    oh, ow = h - kh + 1, w_ - kw + 1
    wt = lin.weights
    out = np.empty((oh, ow, lin.out_channels), dtype=object)
    for r in range(oh):
        for s in range(ow):
            for o in range(lin.out_channels):
                terms = []
                for di in range(kh):
                    for dj in range(kw):
                        for cc in range(c):
                            a = int(acts[r + di, s + dj, cc])
                            terms.append(a if wt[di, dj, cc, o] > 0 else -a)
                out[r, s, o] = tuple(terms)
    return out


def _element_literal(builder, members, rule, bn_after_mp, name=None):
    """Boolean literal for sign(post-chain(sums)) of one output unit.

    ``members`` holds the window's integer sums (one entry when no
    pooling).  ``rule`` is None (plain sign), ("const", v), or
    (direction, threshold).
    """
    if rule is not None and rule[0] == "const":
        return builder.const_lit(rule[1])
    direction, t_float = (1, 0.0) if rule is None else rule
    if direction > 0:
        if math.isinf(t_float):
            member_lits = [builder.const_lit(-1.0 if t_float > 0 else 1.0)] * len(members)
        else:
            c = math.ceil(t_float)
            member_lits = [_sum_geq_lit(builder, mem, c) for mem in members]
    else:
        if math.isinf(t_float):
            member_lits = [builder.const_lit(1.0 if t_float > 0 else -1.0)] * len(members)
        else:
            c = math.floor(t_float)
            member_lits = [_sum_leq_lit(builder, mem, c) for mem in members]
    if len(member_lits) == 1:
        lit = member_lits[0]
    elif bn_after_mp and direction < 0:
        # sign(bn(max(..))) with a negative slope fires only when every
        # window member is at or below the threshold
        lit = _and_literal(builder, member_lits)
    else:
        lit = _or_literal(builder, member_lits)
    if name is not None and lit > 0 and lit not in builder.names:
        builder.names[lit] = name
    return lit


def _post_chain_to_bools(builder, sums, post, layer_tag):
    """Fold [MaxPool|BatchNorm|Flatten]* plus the next sign into literals."""
    members = np.empty(sums.shape, dtype=object)
    for idx in np.ndindex(sums.shape):
        members[idx] = (sums[idx],)
    rules = np.full(sums.shape, None, dtype=object)
    bn_seen = False
    mp_before_bn = False
    mp_after_bn = False
    bn_after_mp = False

    for _, layer in post:
        if isinstance(layer, MaxPool):
            if members.ndim != 3:
                raise EncodingError("pooling a flattened block is not supported")
            if bn_seen:
                mp_after_bn = True
            else:
                mp_before_bn = True
            h, w, c = members.shape
            oh, ow = h // 2, w // 2
            pooled = np.empty((oh, ow, c), dtype=object)
            pooled_rules = np.empty((oh, ow, c), dtype=object)
            for r in range(oh):
                for s in range(ow):
                    for cc in range(c):
                        pooled[r, s, cc] = (
                            members[2 * r, 2 * s, cc]
                            + members[2 * r, 2 * s + 1, cc]
                            + members[2 * r + 1, 2 * s, cc]
                            + members[2 * r + 1, 2 * s + 1, cc]
                        )
                        pooled_rules[r, s, cc] = rules[2 * r, 2 * s, cc]
            members = pooled
            rules = pooled_rules
        elif isinstance(layer, BatchNorm):
            if bn_seen:
                raise EncodingError("two batch-norm layers in one block are not foldable")
            bn_seen = True
            if mp_before_bn:
                bn_after_mp = True
            folded = fold_bn_sign(layer)
            if folded.channels != members.shape[-1]:
                raise ShapeMismatchError(
                    "batch-norm width mismatch in block fold",
                    expected=members.shape[-1],
                    actual=folded.channels,
                )
            for idx in np.ndindex(members.shape):
                cc = idx[-1]
                d = int(folded.direction[cc])
                if d == 0:
                    rules[idx] = ("const", float(folded.constant[cc]))
                else:
                    rules[idx] = (d, float(folded.threshold[cc]))
        elif isinstance(layer, Flatten):
            members = members.reshape(-1)
            rules = rules.reshape(-1)
        else:
            raise EncodingError(
                f"layer {type(layer).__name__} breaks the binary block pattern"
            )
    if bn_seen and mp_before_bn and mp_after_bn:
        raise EncodingError("batch-norm sandwiched between poolings is not foldable")

    lits = np.empty(members.shape, dtype=np.int64)
    for idx in np.ndindex(members.shape):
        name = f"act L{layer_tag} " + ",".join(str(v) for v in idx)
        lits[idx] = _element_literal(builder, members[idx], rules[idx], bn_after_mp, name)
    return lits


def _encode_property(builder, sums, lin, prop):
    """Clause: some rival logit reaches the target logit (negated property)."""
    t = prop.target_label
    w = lin.weights
    rival_lits = []
    for j in range(prop.num_outputs):
        if j == t:
            continue
        # z_j - z_t collapses to twice the sum of the terms where the
        # columns disagree, read with class-j signs
        terms = [sums[j][i] for i in range(w.shape[0]) if w[i, j] != w[i, t]]
        if not terms:
            lit = builder.true_lit()  # identical columns: a tie is guaranteed
        else:
            lit = _sum_geq_lit(builder, terms, 0)
            if lit > 0 and lit not in builder.names:
                builder.names[lit] = f"rival Y{j}>=Y{t}"
        rival_lits.append(lit)
    require_geq(builder, rival_lits, 1)


def export_cnf(net, prop, fixed_first_layer_phases):
    """Encode the binary suffix of ``net`` under fixed/free phases.

    Returns (CnfFormula, names) where names maps variable ids to their
    meaning (phases, block activations, rival indicators).  The formula is
    satisfiable iff some assignment of the free phases makes a rival logit
    reach the target logit.
    """
    check_property_shapes(net, prop)
    q = first_quantize_index(net)
    boundary_shape = net.layer_shapes()[q]
    n_phase = int(np.prod(boundary_shape))
    phases = _normalize_phases(fixed_first_layer_phases, n_phase)

    builder = CnfBuilder()
    builder.true_lit()  # var 1 is always the pinned constant
    lits = []
    for i, p in enumerate(phases):
        if p is None:
            if len(boundary_shape) > 1:
                coords = np.unravel_index(i, boundary_shape)
                label = "phase " + ",".join(str(v) for v in coords)
            else:
                label = f"phase {i}"
            lits.append(builder.new_var(label))
        else:
            lits.append(builder.const_lit(p))
    acts = np.array(lits, dtype=np.int64).reshape(boundary_shape)

    layers = net.layers
    i = q
    while True:
        lin = layers[i]
        if not isinstance(lin, (QConv, QDense)):
            raise EncodingError(f"expected a linear layer at position {i}")
        if not lin.quantize_input:
            raise EncodingError(
                f"layer {i} consumes real values; the suffix is not pure-binary"
            )
        sums = _signed_sums(acts, lin)
        j = i + 1
        post = []
        while j < len(layers) and not isinstance(layers[j], (QConv, QDense)):
            post.append((j, layers[j]))
            j += 1
        if j == len(layers) and not post:
            _encode_property(builder, sums, lin, prop)
            return builder.build(), dict(builder.names)
        if j == len(layers):
            raise EncodingError("layers after the final dense are not supported")
        acts = _post_chain_to_bools(builder, sums, post, layer_tag=i)
        i = j


def format_varmap(formula, names):
    """Sidecar text: one "<var> <meaning>" line per variable."""
    lines = []
    for v in range(1, formula.num_vars + 1):
        lines.append(f"{v} {names.get(v, 'aux')}")
    return "\n".join(lines) + "\n"


def _propagate(clauses, assign):
    """Unit propagation; None on conflict, else (open clauses, assignment)."""
    assign = dict(assign)
    while True:
        changed = False
        remaining = []
        for clause in clauses:
            open_lits = []
            satisfied = False
            for lit in clause:
                v = abs(lit)
                if v in assign:
                    if assign[v] == (lit > 0):
                        satisfied = True
                        break
                else:
                    open_lits.append(lit)
            if satisfied:
                continue
            if not open_lits:
                return None
            if len(open_lits) == 1:
                lit = open_lits[0]
                assign[abs(lit)] = lit > 0
                changed = True
            else:
                remaining.append(open_lits)
        clauses = remaining
        if not changed:
            return clauses, assign


def dpll_satisfiable(formula, assumptions=()):
    """Toy DPLL: a full {var: bool} model on SAT, None on UNSAT.

    Intended for the exported formulas' scale (unit propagation resolves
    all counter registers once the phases are decided), not for general
    SAT workloads.  ``assumptions`` are extra unit literals.
    """
    base = [tuple(c) for c in formula.clauses]
    for lit in assumptions:
        lit = int(lit)
        if lit == 0 or abs(lit) > formula.num_vars:
            raise ValueError(f"bad assumption literal {lit}")
        base.append((lit,))
    stack = [(base, {})]
    while stack:
        clauses, assign = stack.pop()
        result = _propagate(clauses, assign)
        if result is None:
            continue
        clauses, assign = result
        if not clauses:
            return {v: assign.get(v, False) for v in range(1, formula.num_vars + 1)}
        branch = min(abs(lit) for clause in clauses for lit in clause)
        stack.append((clauses + [(-branch,)], assign))
        stack.append((clauses + [(branch,)], assign))
    return None


def binary_suffix_forward(net, phases):
    """Logits of the binary suffix for one concrete +-1 phase vector.

    The phase vector stands in for the sign of the pre-boundary
    activations; the prefix of the network is bypassed entirely.
    """
    q = first_quantize_index(net)
    shape = net.layer_shapes()[q]
    arr = np.asarray(phases, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise ShapeMismatchError(
            "phase vector length mismatch", expected=int(np.prod(shape)), actual=arr.size
        )
    arr = arr.reshape(shape)
    if not np.all(np.abs(arr) == 1.0):
        raise ValueError("phases must be +-1")
    t = arr
    for i in range(q, len(net.layers)):
        t = layer_forward(t, net.layers[i], i)
    return t


def stable_phases_from_box(net, prop):
    """Phases forced by interval propagation over the property box.

    Entries are +1/-1 where the pre-boundary sign is stable across the
    whole box and None where it straddles zero.  Fixing these and freeing
    the rest over-approximates the reachable phase set, so an UNSAT
    exported formula soundly verifies the box while SAT may be spurious.
    """
    q = first_quantize_index(net)
    trace = ibp_trace(net, property_box(net, prop))
    pre = trace[q]
    out = []
    for lo, hi in zip(pre.lo.reshape(-1), pre.hi.reshape(-1)):
        if lo >= 0:
            out.append(1)
        elif hi < 0:
            out.append(-1)
        else:
            out.append(None)
    return out
