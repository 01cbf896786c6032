"""Atomic propositions, LTL formulas, Kripke structures, and lasso traces.

The formula language uses NuSMV-style concrete syntax so emitted model files
and parsed specifications stay line-comparable:

    prefix operators  !  X  G  F        (tightest)
    binary operators  U  (right-assoc), &, |, -> (loosest, right-assoc)

``eval_trace`` gives exact LTL semantics on ultimately-periodic traces and is
the independent oracle the model checker is tested against.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

ID_PATTERN = re.compile(r"[a-z][a-z0-9_]*\Z")
_WORD = re.compile(r"[a-z0-9']+")


class VocabularyError(ValueError):
    """Malformed vocabulary: bad identifier, duplicate id, or ambiguous alias."""


class LtlSyntaxError(ValueError):
    """Formula text does not parse; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownAtomError(ValueError):
    """Formula references an identifier absent from the bound vocabulary."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown atomic proposition {name!r} (at offset {offset})")
        self.name = name
        self.offset = offset


class StructureInvariantError(ValueError):
    """Kripke structure violates a well-formedness invariant."""


class NondeterministicStructureError(ValueError):
    """Structure does not denote a single path (branching or multiple initials)."""


def normalize_tokens(text: str) -> tuple[str, ...]:
    """Lowercase, strip punctuation, collapse whitespace; returns word tokens."""
    return tuple(m.group(0).replace("'", "") for m in _WORD.finditer(text.lower()))


# --------------------------------------------------------------------------
# Vocabulary
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomicProposition:
    id: str
    display: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not ID_PATTERN.match(self.id):
            raise VocabularyError(f"proposition id {self.id!r} must match [a-z][a-z0-9_]*")
        derived = self.id.replace("_", " ")
        if " ".join(normalize_tokens(self.display)) != derived and self.display not in self.aliases:
            raise VocabularyError(
                f"display {self.display!r} is neither derivable from id {self.id!r} nor listed"
            )

    @property
    def surfaces(self) -> tuple[str, ...]:
        return (self.display, *self.aliases)


class Vocabulary:
    """Proposition lexicon plus the object labels a perceptor may report.

    Every surface form (display text and aliases) is normalized at
    construction; an alias mapping to two different proposition ids is
    rejected, so the matching table is closed under normalization.
    """

    def __init__(self, propositions: Iterable[AtomicProposition], objects: Iterable[str] = ()):
        self.propositions = tuple(propositions)
        self.objects = tuple(dict.fromkeys(objects))
        by_id: dict[str, AtomicProposition] = {}
        for prop in self.propositions:
            if prop.id in by_id:
                raise VocabularyError(f"duplicate proposition id {prop.id!r}")
            by_id[prop.id] = prop
        self._by_id = by_id
        table: dict[tuple[str, ...], str] = {}
        for prop in self.propositions:
            for surface in prop.surfaces:
                key = normalize_tokens(surface)
                if not key:
                    raise VocabularyError(f"empty surface form for {prop.id!r}")
                if table.get(key, prop.id) != prop.id:
                    raise VocabularyError(
                        f"surface {surface!r} maps to both {table[key]!r} and {prop.id!r}"
                    )
                table[key] = prop.id
        self.surface_table = table
        # Longest surfaces first so phrase scanning is longest-match-first;
        # ties broken by declaration order.
        declared = {key: i for i, key in enumerate(table)}
        self.surface_index = sorted(
            table.items(), key=lambda item: (-len(item[0]), declared[item[0]])
        )

    def __contains__(self, prop_id: str) -> bool:
        return prop_id in self._by_id

    def __len__(self) -> int:
        return len(self.propositions)

    @property
    def prop_ids(self) -> frozenset[str]:
        return frozenset(self._by_id)

    def proposition(self, prop_id: str) -> AtomicProposition:
        return self._by_id[prop_id]

    def observed_propositions(self, labels: Iterable[str]) -> frozenset[str]:
        """Map object labels onto same-named propositions; unmapped labels drop."""
        found = set()
        for label in labels:
            pid = "_".join(normalize_tokens(label))
            if pid in self._by_id:
                found.add(pid)
        return frozenset(found)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        """Read the line-oriented vocabulary format.

        One proposition per line as ``id: alias1; alias2``; object labels
        follow an ``[objects]`` section header. ``#`` starts a comment.
        """
        props: list[AtomicProposition] = []
        objects: list[str] = []
        in_objects = False
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower() == "[objects]":
                in_objects = True
                continue
            if in_objects:
                objects.append(line)
                continue
            head, _, tail = line.partition(":")
            pid = head.strip()
            aliases = tuple(a.strip() for a in tail.split(";") if a.strip())
            props.append(AtomicProposition(pid, pid.replace("_", " "), aliases))
        return cls(props, objects)


# --------------------------------------------------------------------------
# Formula AST
# --------------------------------------------------------------------------

class LtlFormula:
    """Base class for formula nodes; all nodes are frozen and hashable."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueFormula(LtlFormula):
    pass


@dataclass(frozen=True)
class FalseFormula(LtlFormula):
    pass


@dataclass(frozen=True)
class Atom(LtlFormula):
    name: str


@dataclass(frozen=True)
class Not(LtlFormula):
    operand: LtlFormula


@dataclass(frozen=True)
class Next(LtlFormula):
    operand: LtlFormula


@dataclass(frozen=True)
class Always(LtlFormula):
    operand: LtlFormula


@dataclass(frozen=True)
class Eventually(LtlFormula):
    operand: LtlFormula


@dataclass(frozen=True)
class And(LtlFormula):
    left: LtlFormula
    right: LtlFormula


@dataclass(frozen=True)
class Or(LtlFormula):
    left: LtlFormula
    right: LtlFormula


@dataclass(frozen=True)
class Implies(LtlFormula):
    left: LtlFormula
    right: LtlFormula


@dataclass(frozen=True)
class Until(LtlFormula):
    left: LtlFormula
    right: LtlFormula


TRUE = TrueFormula()
FALSE = FalseFormula()

_UNARY = (Not, Next, Always, Eventually)
_BINARY = (And, Or, Implies, Until)


def children(formula: LtlFormula) -> tuple[LtlFormula, ...]:
    if isinstance(formula, _UNARY):
        return (formula.operand,)
    if isinstance(formula, _BINARY):
        return (formula.left, formula.right)
    return ()


def subformulas(formula: LtlFormula) -> list[LtlFormula]:
    """Distinct subformulas in deterministic preorder."""
    out: list[LtlFormula] = []
    seen: set[LtlFormula] = set()

    def walk(node: LtlFormula) -> None:
        if node in seen:
            return
        seen.add(node)
        out.append(node)
        for child in children(node):
            walk(child)

    walk(formula)
    return out


def atoms_of(formula: LtlFormula) -> frozenset[str]:
    return frozenset(f.name for f in subformulas(formula) if isinstance(f, Atom))


# --------------------------------------------------------------------------
# Parsing and printing
# --------------------------------------------------------------------------

_TOKEN_SPEC = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<bang>!)
  | (?P<amp>&)
  | (?P<pipe>\|)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_SPEC.match(text, pos)
        if match is None:
            raise LtlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append((kind, match.group(0), pos))
        pos = match.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, vocab: Vocabulary | None):
        self.tokens = _tokenize(text)
        self.vocab = vocab
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def take(self) -> tuple[str, str, int]:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def parse(self) -> LtlFormula:
        formula = self.implies()
        kind, value, offset = self.peek()
        if kind != "eof":
            raise LtlSyntaxError(f"unexpected token {value!r}", offset)
        return formula

    def implies(self) -> LtlFormula:
        left = self.disjunction()
        if self.peek()[0] == "arrow":
            self.take()
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> LtlFormula:
        node = self.conjunction()
        while self.peek()[0] == "pipe":
            self.take()
            node = Or(node, self.conjunction())
        return node

    def conjunction(self) -> LtlFormula:
        node = self.until()
        while self.peek()[0] == "amp":
            self.take()
            node = And(node, self.until())
        return node

    def until(self) -> LtlFormula:
        left = self.unary()
        if self.peek()[:2] == ("word", "U"):
            self.take()
            return Until(left, self.until())
        return left

    def unary(self) -> LtlFormula:
        kind, value, offset = self.peek()
        if kind == "bang":
            self.take()
            return Not(self.unary())
        if kind == "word" and value in ("X", "G", "F"):
            self.take()
            wrapper = {"X": Next, "G": Always, "F": Eventually}[value]
            return wrapper(self.unary())
        return self.primary()

    def primary(self) -> LtlFormula:
        kind, value, offset = self.take()
        if kind == "lparen":
            inner = self.implies()
            k, v, o = self.take()
            if k != "rparen":
                raise LtlSyntaxError("expected ')'", o)
            return inner
        if kind == "word":
            if value in ("true", "TRUE"):
                return TRUE
            if value in ("false", "FALSE"):
                return FALSE
            if value in ("U", "X", "G", "F"):
                raise LtlSyntaxError(f"operator {value!r} needs an operand", offset)
            if not ID_PATTERN.match(value):
                raise LtlSyntaxError(f"invalid identifier {value!r}", offset)
            if self.vocab is not None and value not in self.vocab:
                raise UnknownAtomError(value, offset)
            return Atom(value)
        raise LtlSyntaxError(f"expected a formula, found {value!r}" if value else "unexpected end of input", offset)


def parse_formula(text: str, vocab: Vocabulary | None = None) -> LtlFormula:
    """Parse concrete LTL syntax; atoms are resolved against ``vocab`` if given."""
    if not text.strip():
        raise LtlSyntaxError("empty formula", 0)
    return _Parser(text, vocab).parse()


_PREC = {Implies: 1, Or: 2, And: 3, Until: 4}
_UNARY_PREC = 5
_LEAF_PREC = 6


def _prec(node: LtlFormula) -> int:
    for cls, prec in _PREC.items():
        if isinstance(node, cls):
            return prec
    if isinstance(node, _UNARY):
        return _UNARY_PREC
    return _LEAF_PREC


def format_formula(formula: LtlFormula, smv_literals: bool = False) -> str:
    """Print a formula so that reparsing yields an identical AST.

    With ``smv_literals`` the boolean constants are spelled TRUE/FALSE as in
    SMV model files; the operators are shared between both syntaxes.
    """

    def wrap(child: LtlFormula, parent_prec: int, right_of_same: bool = False) -> str:
        text = fmt(child)
        child_prec = _prec(child)
        if child_prec < parent_prec or (child_prec == parent_prec and right_of_same):
            return f"({text})"
        return text

    def fmt(node: LtlFormula) -> str:
        if isinstance(node, TrueFormula):
            return "TRUE" if smv_literals else "true"
        if isinstance(node, FalseFormula):
            return "FALSE" if smv_literals else "false"
        if isinstance(node, Atom):
            return node.name
        if isinstance(node, Not):
            return "!" + wrap(node.operand, _UNARY_PREC)
        if isinstance(node, Next):
            return "X " + wrap(node.operand, _UNARY_PREC)
        if isinstance(node, Always):
            return "G " + wrap(node.operand, _UNARY_PREC)
        if isinstance(node, Eventually):
            return "F " + wrap(node.operand, _UNARY_PREC)
        prec = _prec(node)
        if isinstance(node, And):
            return f"{wrap(node.left, prec)} & {wrap(node.right, prec, right_of_same=True)}"
        if isinstance(node, Or):
            return f"{wrap(node.left, prec)} | {wrap(node.right, prec, right_of_same=True)}"
        if isinstance(node, Until):
            return f"{wrap(node.left, prec, right_of_same=True)} U {wrap(node.right, prec)}"
        if isinstance(node, Implies):
            return f"{wrap(node.left, prec, right_of_same=True)} -> {wrap(node.right, prec)}"
        raise TypeError(f"not a formula node: {node!r}")

    return fmt(formula)


def nnf(formula: LtlFormula) -> LtlFormula:
    """Negation normal form: no implications, negation only on atoms.

    Negated Until rewrites within the G/F/U operator set:
    ``!(a U b)  ==  (!b U (!a & !b)) | G !b``.
    """
    if isinstance(formula, (TrueFormula, FalseFormula, Atom)):
        return formula
    if isinstance(formula, Next):
        return Next(nnf(formula.operand))
    if isinstance(formula, Always):
        return Always(nnf(formula.operand))
    if isinstance(formula, Eventually):
        return Eventually(nnf(formula.operand))
    if isinstance(formula, And):
        return And(nnf(formula.left), nnf(formula.right))
    if isinstance(formula, Or):
        return Or(nnf(formula.left), nnf(formula.right))
    if isinstance(formula, Until):
        return Until(nnf(formula.left), nnf(formula.right))
    if isinstance(formula, Implies):
        return Or(nnf(Not(formula.left)), nnf(formula.right))
    if isinstance(formula, Not):
        inner = formula.operand
        if isinstance(inner, TrueFormula):
            return FALSE
        if isinstance(inner, FalseFormula):
            return TRUE
        if isinstance(inner, Atom):
            return formula
        if isinstance(inner, Not):
            return nnf(inner.operand)
        if isinstance(inner, Next):
            return Next(nnf(Not(inner.operand)))
        if isinstance(inner, Always):
            return Eventually(nnf(Not(inner.operand)))
        if isinstance(inner, Eventually):
            return Always(nnf(Not(inner.operand)))
        if isinstance(inner, And):
            return Or(nnf(Not(inner.left)), nnf(Not(inner.right)))
        if isinstance(inner, Or):
            return And(nnf(Not(inner.left)), nnf(Not(inner.right)))
        if isinstance(inner, Implies):
            return And(nnf(inner.left), nnf(Not(inner.right)))
        if isinstance(inner, Until):
            not_a = nnf(Not(inner.left))
            not_b = nnf(Not(inner.right))
            return Or(Until(not_b, And(not_a, not_b)), Always(not_b))
    raise TypeError(f"not a formula node: {formula!r}")


def is_nnf(formula: LtlFormula) -> bool:
    for node in subformulas(formula):
        if isinstance(node, Implies):
            return False
        if isinstance(node, Not) and not isinstance(node.operand, Atom):
            return False
    return True


# --------------------------------------------------------------------------
# Kripke structures and lasso traces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KripkeStructure:
    """Finite transition system with labeled states.

    ``states`` keeps construction order so every emitter is deterministic.
    """

    states: tuple[str, ...]
    initial: frozenset[str]
    transitions: frozenset[tuple[str, str]]
    labeling: Mapping[str, frozenset[str]]

    def validate(self, vocab: Vocabulary | None = None) -> None:
        state_set = set(self.states)
        if len(state_set) != len(self.states):
            raise StructureInvariantError("duplicate state ids")
        if not self.initial <= state_set:
            raise StructureInvariantError("initial states outside the state set")
        for src, dst in self.transitions:
            if src not in state_set or dst not in state_set:
                raise StructureInvariantError(f"transition endpoint outside states: {(src, dst)}")
        sources = {src for src, _ in self.transitions}
        missing = state_set - sources
        if missing:
            raise StructureInvariantError(f"not left-total; states without successors: {sorted(missing)}")
        if set(self.labeling) != state_set:
            raise StructureInvariantError("labeling domain differs from the state set")
        if vocab is not None:
            for state, labels in self.labeling.items():
                extra = set(labels) - vocab.prop_ids
                if extra:
                    raise StructureInvariantError(f"labels of {state} outside vocabulary: {sorted(extra)}")

    def successors(self, state: str) -> list[str]:
        order = {s: i for i, s in enumerate(self.states)}
        return sorted((dst for src, dst in self.transitions if src == state), key=order.__getitem__)

    def successor_map(self) -> dict[str, list[str]]:
        order = {s: i for i, s in enumerate(self.states)}
        result: dict[str, list[str]] = {s: [] for s in self.states}
        for src, dst in self.transitions:
            result[src].append(dst)
        for outs in result.values():
            outs.sort(key=order.__getitem__)
        return result


@dataclass(frozen=True)
class LassoTrace:
    """Ultimately periodic path: ``prefix`` then ``cycle`` repeated forever."""

    prefix: tuple[str, ...]
    cycle: tuple[str, ...]

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("lasso cycle must be nonempty")

    def positions(self) -> tuple[str, ...]:
        return self.prefix + self.cycle


def eval_trace(
    formula: LtlFormula,
    trace: LassoTrace,
    labeling: Mapping[str, Iterable[str]],
) -> bool:
    """Exact satisfaction of ``formula`` at position 0 of the lasso's word.

    Computed by fixpoint iteration over the finitely many positions; Next and
    Until wrap from the last cycle position back to the first, so there is no
    bounded unrolling anywhere.
    """
    seq = list(trace.prefix) + list(trace.cycle)
    n = len(seq)
    loop = len(trace.prefix)
    succ = [i + 1 for i in range(n)]
    succ[n - 1] = loop
    labels = [frozenset(labeling[state]) for state in seq]
    memo: dict[LtlFormula, list[bool]] = {}

    def values(node: LtlFormula) -> list[bool]:
        cached = memo.get(node)
        if cached is not None:
            return cached
        if isinstance(node, TrueFormula):
            vals = [True] * n
        elif isinstance(node, FalseFormula):
            vals = [False] * n
        elif isinstance(node, Atom):
            vals = [node.name in labels[i] for i in range(n)]
        elif isinstance(node, Not):
            vals = [not v for v in values(node.operand)]
        elif isinstance(node, And):
            left, right = values(node.left), values(node.right)
            vals = [a and b for a, b in zip(left, right)]
        elif isinstance(node, Or):
            left, right = values(node.left), values(node.right)
            vals = [a or b for a, b in zip(left, right)]
        elif isinstance(node, Implies):
            left, right = values(node.left), values(node.right)
            vals = [(not a) or b for a, b in zip(left, right)]
        elif isinstance(node, Next):
            child = values(node.operand)
            vals = [child[succ[i]] for i in range(n)]
        elif isinstance(node, Until):
            left, right = values(node.left), values(node.right)
            vals = _lfp(lambda cur, i: right[i] or (left[i] and cur[succ[i]]), n)
        elif isinstance(node, Eventually):
            child = values(node.operand)
            vals = _lfp(lambda cur, i: child[i] or cur[succ[i]], n)
        elif isinstance(node, Always):
            child = values(node.operand)
            vals = _gfp(lambda cur, i: child[i] and cur[succ[i]], n)
        else:
            raise TypeError(f"not a formula node: {node!r}")
        memo[node] = vals
        return vals

    return values(formula)[0]


def _lfp(step, n: int) -> list[bool]:
    vals = [False] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            new = step(vals, i)
            if new != vals[i]:
                vals[i] = new
                changed = True
    return vals


def _gfp(step, n: int) -> list[bool]:
    vals = [True] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            new = step(vals, i)
            if new != vals[i]:
                vals[i] = new
                changed = True
    return vals


def single_path(structure: KripkeStructure) -> LassoTrace:
    """The unique lasso of a deterministic structure (one initial, one successor each)."""
    if len(structure.initial) != 1:
        raise NondeterministicStructureError(
            f"expected exactly one initial state, found {len(structure.initial)}"
        )
    succ: dict[str, str] = {}
    for state, outs in structure.successor_map().items():
        if len(outs) != 1:
            raise NondeterministicStructureError(
                f"state {state!r} has {len(outs)} successors, expected exactly 1"
            )
        succ[state] = outs[0]
    order: list[str] = []
    seen: dict[str, int] = {}
    current = next(iter(structure.initial))
    while current not in seen:
        seen[current] = len(order)
        order.append(current)
        current = succ[current]
    start = seen[current]
    return LassoTrace(tuple(order[:start]), tuple(order[start:]))


# --------------------------------------------------------------------------
# Specification files
# --------------------------------------------------------------------------

def load_specifications(path: str | Path, vocab: Vocabulary | None = None) -> list[tuple[str, LtlFormula]]:
    """Read a specification file: one ``name: formula`` per line, ``#`` comments."""
    pairs: list[tuple[str, LtlFormula]] = []
    names: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, text = line.partition(":")
        name = name.strip()
        if not sep or not name:
            raise ValueError(f"{path}:{lineno}: expected 'name: formula'")
        if name in names:
            raise ValueError(f"{path}:{lineno}: duplicate specification name {name!r}")
        names.add(name)
        pairs.append((name, parse_formula(text, vocab)))
    return pairs
