"""Local-robustness property files: generation, parsing, witness checking.

A property file declares one Real variable per input pixel (``X_0`` ..
``X_{P-1}``, flat index ``(row*W + col)*C + channel``) and one per class
logit (``Y_0`` .. ``Y_{L-1}``), bounds every pixel inside the epsilon
ball, and asserts the negation of "the classifier answers the target
label": a disjunction of ``(>= Y_j Y_target)`` over all other labels.
A satisfying assignment is therefore a counterexample to robustness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import PropertyFormatError, ShapeMismatchError, WitnessFormatError
from .network import Network, flatten_image, image_from_flat, network_forward

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0


def _fmt(value: float) -> str:
    s = f"{float(value):.8f}"
    # normalize the sign of zero so files are reproducible
    return "0.00000000" if s == "-0.00000000" else s


@dataclass(frozen=True)
class RobustnessProperty:
    """One untargeted local-robustness query around a single image."""

    num_inputs: int
    num_outputs: int
    input_bounds: tuple  # ((lo, hi), ...) of length num_inputs
    target_label: int
    source: Optional[tuple] = None  # (image_index, epsilon) when known

    def __post_init__(self):
        if len(self.input_bounds) != self.num_inputs:
            raise ValueError(
                f"expected {self.num_inputs} bound pairs, got {len(self.input_bounds)}"
            )
        if not 0 <= self.target_label < self.num_outputs:
            raise ValueError(
                f"target label {self.target_label} outside [0, {self.num_outputs})"
            )
        for i, (lo, hi) in enumerate(self.input_bounds):
            if not lo <= hi:
                raise ValueError(f"crossed bounds for X_{i}: [{lo}, {hi}]")

    def bounds_arrays(self) -> tuple:
        """Lower and upper bound vectors as float64 arrays."""
        arr = np.asarray(self.input_bounds, dtype=np.float64)
        return arr[:, 0].copy(), arr[:, 1].copy()


@dataclass(frozen=True)
class Witness:
    """Candidate counterexample: a flat input vector, optionally with logits."""

    input_values: tuple
    output_values: Optional[tuple] = None


def make_property(image, epsilon, label, num_outputs=43, clip=False,
                  source=None) -> RobustnessProperty:
    """Build the epsilon-ball robustness query around one raw-pixel image."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    flat = flatten_image(np.asarray(image, dtype=np.float64))
    if not 0 <= label < num_outputs:
        raise ValueError(f"label {label} outside [0, {num_outputs})")
    bounds = []
    for v in flat:
        lo = float(v) - float(epsilon)
        hi = float(v) + float(epsilon)
        if clip:
            lo = max(lo, PIXEL_MIN)
            hi = min(hi, PIXEL_MAX)
        bounds.append((lo, hi))
    return RobustnessProperty(
        num_inputs=len(bounds),
        num_outputs=int(num_outputs),
        input_bounds=tuple(bounds),
        target_label=int(label),
        source=source,
    )


def render_property(prop: RobustnessProperty) -> str:
    """Serialize a query in the SMT-LIB subset used by the benchmark files."""
    lines = [
        f"; robustness query: {prop.num_inputs} inputs, "
        f"{prop.num_outputs} outputs, target label {prop.target_label}"
    ]
    if prop.source is not None:
        idx, eps = prop.source
        lines.append(f"; image index {idx}, epsilon {_fmt(eps)}")
    lines.append("")
    for i in range(prop.num_inputs):
        lines.append(f"(declare-const X_{i} Real)")
    for j in range(prop.num_outputs):
        lines.append(f"(declare-const Y_{j} Real)")
    lines.append("")
    for i, (lo, hi) in enumerate(prop.input_bounds):
        lines.append(f"(assert (<= X_{i} {_fmt(hi)}))")
        lines.append(f"(assert (>= X_{i} {_fmt(lo)}))")
    lines.append("")
    t = prop.target_label
    others = [j for j in range(prop.num_outputs) if j != t]
    head = "(assert (or "
    parts = [f"(>= Y_{j} Y_{t})" for j in others]
    block = [head + parts[0]]
    for part in parts[1:]:
        block.append(" " * len(head) + part)
    block[-1] += "))"
    lines.extend(block)
    lines.append("")
    return "\n".join(lines)


def generate_property(image, epsilon, label, clip=False, num_outputs=43,
                      source=None) -> str:
    return render_property(
        make_property(image, epsilon, label, num_outputs=num_outputs,
                      clip=clip, source=source)
    )


def property_filename(size: int, image_index: int, epsilon: float) -> str:
    return f"model_{size}_idx_{image_index}_eps_{epsilon:.5f}.vnnlib"


# ---------------------------------------------------------------------------
# parsing

def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append(ch)
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def _read_forms(tokens, error_cls):
    """Nest a flat token stream into lists, one per top-level expression."""
    forms = []
    stack = []
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise error_cls("unbalanced ')'")
            done = stack.pop()
            if stack:
                stack[-1].append(done)
            else:
                forms.append(done)
        else:
            if not stack:
                raise error_cls(f"atom {tok!r} outside any expression")
            stack[-1].append(tok)
    if stack:
        raise error_cls("unbalanced '('")
    return forms


def _var_index(token, prefix, error_cls):
    if not isinstance(token, str) or not token.startswith(prefix + "_"):
        raise error_cls(f"expected {prefix} variable, got {token!r}")
    tail = token[len(prefix) + 1:]
    if not tail.isdigit():
        raise error_cls(f"malformed variable name {token!r}")
    return int(tail)


def _number(token, error_cls):
    try:
        return float(token)
    except (TypeError, ValueError):
        raise error_cls(f"expected a numeric constant, got {token!r}") from None


def parse_property(text: str) -> RobustnessProperty:
    """Parse the generated subset back into a structured query.

    Accepts arbitrary whitespace and ';' comments.  Rejects anything
    outside the subset: unknown declarations or operators, X variables
    missing a bound, and output disjunctions that mix target labels.
    """
    forms = _read_forms(_tokenize(text), PropertyFormatError)
    declared_x = set()
    declared_y = set()
    lower = {}
    upper = {}
    disjunction = None
    for form in forms:
        if not form:
            raise PropertyFormatError("empty expression")
        head = form[0]
        if head == "declare-const":
            if len(form) != 3 or form[2] != "Real":
                raise PropertyFormatError(f"unsupported declaration {form!r}")
            name = form[1]
            if isinstance(name, str) and name.startswith("X_"):
                idx = _var_index(name, "X", PropertyFormatError)
                if idx in declared_x:
                    raise PropertyFormatError(f"duplicate declaration of {name}")
                declared_x.add(idx)
            elif isinstance(name, str) and name.startswith("Y_"):
                idx = _var_index(name, "Y", PropertyFormatError)
                if idx in declared_y:
                    raise PropertyFormatError(f"duplicate declaration of {name}")
                declared_y.add(idx)
            else:
                raise PropertyFormatError(f"unknown variable {name!r}")
        elif head == "assert":
            if len(form) != 2 or not isinstance(form[1], list):
                raise PropertyFormatError(f"malformed assert {form!r}")
            expr = form[1]
            op = expr[0] if expr else None
            if op in ("<=", ">=") and len(expr) == 3 and isinstance(expr[1], str) \
                    and expr[1].startswith("X_"):
                idx = _var_index(expr[1], "X", PropertyFormatError)
                value = _number(expr[2], PropertyFormatError)
                table = upper if op == "<=" else lower
                if idx in table:
                    raise PropertyFormatError(f"duplicate bound for X_{idx}")
                table[idx] = value
            elif op == "or" or (op == ">=" and len(expr) == 3
                                and isinstance(expr[1], str)
                                and expr[1].startswith("Y_")):
                if disjunction is not None:
                    raise PropertyFormatError("more than one output constraint")
                disjuncts = expr[1:] if op == "or" else [expr]
                disjunction = disjuncts
            else:
                raise PropertyFormatError(f"unknown construct {expr!r}")
        else:
            raise PropertyFormatError(f"unknown construct {form!r}")

    num_inputs = len(declared_x)
    num_outputs = len(declared_y)
    if declared_x != set(range(num_inputs)):
        raise PropertyFormatError("X variable indices are not contiguous from 0")
    if declared_y != set(range(num_outputs)):
        raise PropertyFormatError("Y variable indices are not contiguous from 0")
    if disjunction is None:
        raise PropertyFormatError("no output constraint found")

    target = None
    seen_left = set()
    for d in disjunction:
        if not (isinstance(d, list) and len(d) == 3 and d[0] == ">="):
            raise PropertyFormatError(f"unsupported disjunct {d!r}")
        j = _var_index(d[1], "Y", PropertyFormatError)
        t = _var_index(d[2], "Y", PropertyFormatError)
        if target is None:
            target = t
        elif t != target:
            raise PropertyFormatError(
                f"mixed targets in disjunction: Y_{target} and Y_{t}"
            )
        if j == t:
            raise PropertyFormatError(f"disjunct compares Y_{j} with itself")
        if j in seen_left:
            raise PropertyFormatError(f"duplicate disjunct for Y_{j}")
        if j >= num_outputs or t >= num_outputs:
            raise PropertyFormatError("disjunct references an undeclared Y variable")
        seen_left.add(j)

    bounds = []
    for i in range(num_inputs):
        if i not in upper:
            raise PropertyFormatError(f"missing upper bound for X_{i}")
        if i not in lower:
            raise PropertyFormatError(f"missing lower bound for X_{i}")
        lo, hi = lower[i], upper[i]
        if lo > hi:
            raise PropertyFormatError(f"crossed bounds for X_{i}: [{lo}, {hi}]")
        bounds.append((lo, hi))

    return RobustnessProperty(
        num_inputs=num_inputs,
        num_outputs=num_outputs,
        input_bounds=tuple(bounds),
        target_label=target,
    )


# ---------------------------------------------------------------------------
# witnesses

def check_witness(net: Network, prop: RobustnessProperty, w: Witness) -> bool:
    """True iff ``w`` is a genuine counterexample for ``prop`` under ``net``.

    Requires every input inside its bounds (inclusive) and some non-target
    logit at least the target logit.  Ties count as violations, matching
    the >= comparisons of the property text.  Output values carried by the
    witness are ignored; the network is always re-evaluated.
    """
    if net.num_inputs != prop.num_inputs or net.num_classes != prop.num_outputs:
        raise ShapeMismatchError(
            f"network has {net.num_inputs} inputs and {net.num_classes} classes "
            f"but the property declares {prop.num_inputs}/{prop.num_outputs}"
        )
    if len(w.input_values) != prop.num_inputs:
        raise WitnessFormatError(
            f"witness carries {len(w.input_values)} input values, "
            f"property declares {prop.num_inputs}"
        )
    if w.output_values is not None and len(w.output_values) != prop.num_outputs:
        raise WitnessFormatError(
            f"witness carries {len(w.output_values)} output values, "
            f"property declares {prop.num_outputs}"
        )
    values = np.asarray(w.input_values, dtype=np.float64)
    lo, hi = prop.bounds_arrays()
    if np.any(values < lo) or np.any(values > hi):
        return False
    logits = network_forward(net, image_from_flat(values, net.input_shape))
    t = prop.target_label
    others = np.delete(logits, t)
    return bool(np.any(others >= logits[t]))


def format_witness(w: Witness) -> str:
    """One ``(X_i value)`` line per input, then ``(Y_j value)`` if present."""
    lines = [f"(X_{i} {_fmt(v)})" for i, v in enumerate(w.input_values)]
    if w.output_values is not None:
        lines.extend(f"(Y_{j} {_fmt(v)})" for j, v in enumerate(w.output_values))
    lines.append("")
    return "\n".join(lines)


def parse_witness(text: str) -> Witness:
    forms = _read_forms(_tokenize(text), WitnessFormatError)
    # tolerate the single-expression convention ((X_0 v) (X_1 v) ...)
    if len(forms) == 1 and forms[0] and all(isinstance(f, list) for f in forms[0]):
        forms = forms[0]
    xs = {}
    ys = {}
    for form in forms:
        if not (isinstance(form, list) and len(form) == 2):
            raise WitnessFormatError(f"malformed witness entry {form!r}")
        name, raw = form
        value = _number(raw, WitnessFormatError)
        if isinstance(name, str) and name.startswith("X_"):
            idx = _var_index(name, "X", WitnessFormatError)
            if idx in xs:
                raise WitnessFormatError(f"duplicate entry for X_{idx}")
            xs[idx] = value
        elif isinstance(name, str) and name.startswith("Y_"):
            idx = _var_index(name, "Y", WitnessFormatError)
            if idx in ys:
                raise WitnessFormatError(f"duplicate entry for Y_{idx}")
            ys[idx] = value
        else:
            raise WitnessFormatError(f"unknown witness variable {name!r}")
    if not xs:
        raise WitnessFormatError("witness has no input values")
    if set(xs) != set(range(len(xs))):
        raise WitnessFormatError("X indices are not contiguous from 0")
    outputs = None
    if ys:
        if set(ys) != set(range(len(ys))):
            raise WitnessFormatError("Y indices are not contiguous from 0")
        outputs = tuple(ys[j] for j in range(len(ys)))
    return Witness(
        input_values=tuple(xs[i] for i in range(len(xs))),
        output_values=outputs,
    )


def witness_from_flat(values: Sequence[float], logits=None) -> Witness:
    out = None if logits is None else tuple(float(v) for v in logits)
    return Witness(input_values=tuple(float(v) for v in values), output_values=out)
