"""Set expressions over party inputs, and their plaintext evaluation.

The expression grammar is deliberately small:

    expr    := or_expr
    or_expr := and_expr ('|' and_expr)*
    and_expr:= atom ('&' atom)*
    atom    := '!'? 'S' digits | '(' expr ')'

'&' binds tighter than '|'.  After parsing, the tree must already be in
conjunctive or disjunctive normal form; arbitrary nesting is rejected
rather than silently rewritten, so that the caller knows exactly which
shape the protocols will see.  ``cnf_to_dnf``/``dnf_to_cnf`` perform the
explicit (exponential) conversion with a hard output cap.

``oracle_evaluate`` is the plaintext reference: plain Python set algebra,
no cryptography, used as ground truth by every protocol test.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

CONVERSION_CAP = 10_000

# Region 0 is the "in no input set" cell of the Venn diagram; with an
# unlimited universe it is unobservable and the hash protocol excludes it.
EXCLUDED_REGION = 0


class ExpressionSyntaxError(ValueError):
    """Lexical or grammatical error, with the 0-based offset of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class ExpressionShapeError(ValueError):
    """Well-formed expression that is neither CNF nor DNF."""

    def __init__(self, message: str, subterm: str):
        super().__init__(f"{message}: {subterm}")
        self.subterm = subterm


class ConversionSizeError(ValueError):
    """Normal-form conversion would exceed the output cap."""


@dataclass(frozen=True, order=True)
class Literal:
    party: int
    negated: bool = False

    def __str__(self) -> str:
        return f"!S{self.party}" if self.negated else f"S{self.party}"

    def complement(self) -> "Literal":
        return Literal(self.party, not self.negated)


def _check_groups(groups: tuple[tuple[Literal, ...], ...], kind: str) -> None:
    if not groups:
        raise ValueError(f"{kind} needs at least one group")
    for group in groups:
        if not group:
            raise ValueError(f"{kind} group must not be empty")
        seen = {(lit.party, lit.negated) for lit in group}
        for lit in group:
            if (lit.party, not lit.negated) in seen:
                raise ValueError(
                    f"group contains both S{lit.party} and its complement")


@dataclass(frozen=True)
class CnfExpression:
    """Intersection of unions: every clause is a union of literals."""

    clauses: tuple[tuple[Literal, ...], ...]
    _validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self._validate:
            _check_groups(self.clauses, "CNF clause")

    @property
    def beta(self) -> int:
        return len(self.clauses)

    @property
    def max_party(self) -> int:
        return max(lit.party for clause in self.clauses for lit in clause)

    def parties(self) -> set[int]:
        return {lit.party for clause in self.clauses for lit in clause}

    def __str__(self) -> str:
        return " & ".join(
            "(" + " | ".join(str(l) for l in clause) + ")" for clause in self.clauses)


@dataclass(frozen=True)
class DnfExpression:
    """Union of intersections: every term is an intersection of literals."""

    terms: tuple[tuple[Literal, ...], ...]
    _validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self._validate:
            _check_groups(self.terms, "DNF term")

    @property
    def beta(self) -> int:
        return len(self.terms)

    @property
    def max_party(self) -> int:
        return max(lit.party for term in self.terms for lit in term)

    def parties(self) -> set[int]:
        return {lit.party for term in self.terms for lit in term}

    def __str__(self) -> str:
        return " | ".join(
            "(" + " & ".join(str(l) for l in term) + ")" for term in self.terms)


Expression = CnfExpression | DnfExpression


@dataclass(frozen=True)
class Universe:
    """Ordered, duplicate-free element list shared by the HE protocols."""

    elements: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("universe contains duplicate elements")

    @property
    def u(self) -> int:
        return len(self.elements)

    def index_of(self, element: str) -> int:
        return self.elements.index(element)

    def __contains__(self, element: str) -> bool:
        return element in self.elements

    def __iter__(self):
        return iter(self.elements)


@dataclass(frozen=True)
class InputSet:
    party: int
    members: frozenset[str]

    def __post_init__(self):
        if self.party < 1:
            raise ValueError("party indices start at 1")

    def __contains__(self, element: str) -> bool:
        return element in self.members


def validate_inputs(sets: list[InputSet], universe: Universe) -> dict[int, frozenset[str]]:
    """Check party indices are distinct and members live in the universe."""
    by_party: dict[int, frozenset[str]] = {}
    for s in sets:
        if s.party in by_party:
            raise ValueError(f"duplicate input set for party {s.party}")
        stray = None
        for e in s.members:
            if e not in universe:
                stray = e
                break
        if stray is not None:
            raise ValueError(f"party {s.party} holds {stray!r} outside the universe")
        by_party[s.party] = s.members
    return by_party


# --- parsing ---------------------------------------------------------------


class _Node:
    pass


@dataclass
class _Lit(_Node):
    literal: Literal
    start: int
    end: int


@dataclass
class _Op(_Node):
    op: str                     # '&' or '|'
    children: list[_Node]
    start: int
    end: int


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()&|!":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch == "S":
            j = i + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            if j == i + 1:
                raise ExpressionSyntaxError("expected party number after 'S'", i + 1)
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ExpressionSyntaxError(f"unexpected character {ch!r}", i)
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        if tok is None:
            raise ExpressionSyntaxError("unexpected end of expression", len(self.text))
        self.pos += 1
        return tok

    def parse(self) -> _Node:
        node = self.parse_or()
        tok = self.peek()
        if tok is not None:
            raise ExpressionSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def parse_or(self) -> _Node:
        children = [self.parse_and()]
        while self.peek() and self.peek()[0] == "|":
            self.take()
            children.append(self.parse_and())
        if len(children) == 1:
            return children[0]
        return _Op("|", children, children[0].start, children[-1].end)

    def parse_and(self) -> _Node:
        children = [self.parse_atom()]
        while self.peek() and self.peek()[0] == "&":
            self.take()
            children.append(self.parse_atom())
        if len(children) == 1:
            return children[0]
        return _Op("&", children, children[0].start, children[-1].end)

    def parse_atom(self) -> _Node:
        tok = self.take()
        kind, value, pos = tok
        if kind == "!":
            inner = self.parse_atom()
            if not isinstance(inner, _Lit):
                raise ExpressionSyntaxError("'!' applies to a single set", pos)
            lit = inner.literal
            return _Lit(Literal(lit.party, not lit.negated), pos, inner.end)
        if kind == "ident":
            party = int(value[1:])
            if party < 1:
                raise ExpressionSyntaxError("party numbers start at S1", pos)
            return _Lit(Literal(party), pos, pos + len(value))
        if kind == "(":
            inner = self.parse_or()
            closing = self.take()
            if closing[0] != ")":
                raise ExpressionSyntaxError("expected ')'", closing[2])
            return inner
        raise ExpressionSyntaxError(f"unexpected {value!r}", pos)


def _render(node: _Node, text: str) -> str:
    return text[node.start:node.end]


def _flatten(node: _Node, op: str) -> list[_Node]:
    if isinstance(node, _Op) and node.op == op:
        return node.children
    return [node]


def _group_literals(node: _Node, inner_op: str, text: str) -> tuple[Literal, ...]:
    literals = []
    for child in _flatten(node, inner_op):
        if not isinstance(child, _Lit):
            raise ExpressionShapeError("expected a literal here", _render(child, text))
        literals.append(child.literal)
    # Duplicate literals inside a group are harmless; drop them quietly.
    deduped = tuple(dict.fromkeys(literals))
    for lit in deduped:
        if lit.complement() in deduped:
            raise ValueError(
                f"clause mixes S{lit.party} with its complement: {_render(node, text)}")
    return deduped


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into whichever normal form its structure matches.

    A pure conjunction of union-groups parses as CNF, a pure disjunction
    of intersection-groups as DNF.  Flat expressions that fit both (a lone
    literal, a single '&' or '|' chain) come back as CNF.  Anything with
    deeper nesting raises ``ExpressionShapeError`` naming the subterm.
    """
    if not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    root = _Parser(text).parse()
    try:
        clauses = tuple(_group_literals(g, "|", text) for g in _flatten(root, "&"))
        return CnfExpression(clauses)
    except ExpressionShapeError:
        pass
    try:
        terms = tuple(_group_literals(g, "&", text) for g in _flatten(root, "|"))
        return DnfExpression(terms)
    except ExpressionShapeError:
        pass
    # Report the subterm that defeats both readings: the first group of the
    # top-level operator that is not a plain literal group.
    top = _flatten(root, "&" if isinstance(root, _Op) and root.op == "&" else "|")
    for group in top:
        try:
            _group_literals(group, "|", text)
            _group_literals(group, "&", text)
        except ExpressionShapeError as exc:
            raise ExpressionShapeError(
                "expression is neither CNF nor DNF", exc.subterm) from None
    raise ExpressionShapeError("expression is neither CNF nor DNF", text)


# --- evaluation ------------------------------------------------------------


def _literal_set(lit: Literal, by_party: dict[int, frozenset[str]],
                 universe_set: frozenset[str]) -> frozenset[str]:
    if lit.party not in by_party:
        raise ValueError(f"expression references S{lit.party} but no such input set")
    members = by_party[lit.party]
    return universe_set - members if lit.negated else members


def oracle_evaluate(expr: Expression, sets: list[InputSet],
                    universe: Universe) -> frozenset[str]:
    """Plaintext ground truth: evaluate ``expr`` by direct set algebra."""
    universe_set = frozenset(universe.elements)
    by_party = {s.party: s.members & universe_set for s in sets}
    if len(by_party) != len(sets):
        raise ValueError("duplicate party index among input sets")
    if isinstance(expr, CnfExpression):
        result = universe_set
        for clause in expr.clauses:
            union: frozenset[str] = frozenset()
            for lit in clause:
                union |= _literal_set(lit, by_party, universe_set)
            result &= union
        return result
    result = frozenset()
    for term in expr.terms:
        inter = universe_set
        for lit in term:
            inter &= _literal_set(lit, by_party, universe_set)
        result |= inter
    return result


# --- normal-form conversion ------------------------------------------------


def _distribute(groups: tuple[tuple[Literal, ...], ...],
                cap: int) -> tuple[tuple[Literal, ...], ...]:
    size = 1
    for group in groups:
        size *= len(group)
        if size > cap:
            raise ConversionSizeError(
                f"conversion would produce more than {cap} groups")
    products: list[tuple[Literal, ...]] = []
    seen = set()
    stack = [(0, ())]
    while stack:
        idx, partial = stack.pop()
        if idx == len(groups):
            # Contradictory products (S_i together with !S_i) are identities
            # of the target form and are dropped.
            lits = tuple(dict.fromkeys(partial))
            if any(l.complement() in lits for l in lits):
                continue
            key = tuple(sorted(lits))
            if key not in seen:
                seen.add(key)
                products.append(lits)
            continue
        for lit in reversed(groups[idx]):
            stack.append((idx + 1, partial + (lit,)))
    if not products:
        # Everything cancelled: the expression degenerates to the identity
        # of the source form (empty set for DNF output, universe for CNF).
        # The normal forms cannot express that directly, so keep a single
        # contradictory group, which evaluates to exactly that identity.
        first = groups[0][0]
        return ((first, first.complement()),)
    return tuple(products)


def cnf_to_dnf(expr: CnfExpression, cap: int = CONVERSION_CAP) -> DnfExpression:
    products = _distribute(expr.clauses, cap)
    validate = not any(l.complement() in term for term in products for l in term)
    return DnfExpression(products, _validate=validate)


def dnf_to_cnf(expr: DnfExpression, cap: int = CONVERSION_CAP) -> CnfExpression:
    products = _distribute(expr.terms, cap)
    validate = not any(l.complement() in clause for clause in products for l in clause)
    return CnfExpression(products, _validate=validate)


def as_dnf(expr: Expression, cap: int = CONVERSION_CAP) -> DnfExpression:
    return expr if isinstance(expr, DnfExpression) else cnf_to_dnf(expr, cap)


def as_cnf(expr: Expression, cap: int = CONVERSION_CAP) -> CnfExpression:
    return expr if isinstance(expr, CnfExpression) else dnf_to_cnf(expr, cap)


# --- Venn regions -----------------------------------------------------------


def venn_region_of(element: str, sets: list[InputSet]) -> int:
    """Bitmask of the parties holding ``element``; bit i-1 is party i.

    Returns ``EXCLUDED_REGION`` (0) for an element held by nobody.
    """
    mask = 0
    for s in sets:
        if element in s.members:
            mask |= 1 << (s.party - 1)
    return mask


def region_label(mask: int, n: int) -> str:
    """Render a region mask with party 1 leftmost, e.g. mask 6, n=3 -> '011'."""
    return "".join("1" if mask >> (i - 1) & 1 else "0" for i in range(1, n + 1))


def all_regions(n: int) -> list[int]:
    """Every observable region: all party subsets except the empty one."""
    return list(range(1, 1 << n))


def term_regions(term: tuple[Literal, ...], n: int) -> set[int]:
    """Region masks consistent with one DNF term, region 0 excluded."""
    regions = set()
    for mask in all_regions(n):
        ok = True
        for lit in term:
            bit = mask >> (lit.party - 1) & 1
            if bit == (1 if lit.negated else 0):
                ok = False
                break
        if ok:
            regions.add(mask)
    return regions


def matching_regions(expr: DnfExpression, n: int) -> set[int]:
    """All region masks covered by the DNF expression."""
    if expr.max_party > n:
        raise ValueError(f"expression references S{expr.max_party} with only {n} parties")
    covered: set[int] = set()
    for term in expr.terms:
        covered |= term_regions(term, n)
    return covered


# --- file formats -----------------------------------------------------------


def load_elements(path: str) -> list[str]:
    """One element label per line; blank lines ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_universe(path: str) -> Universe:
    return Universe(tuple(load_elements(path)))


def load_run_config(path: str) -> tuple[Universe | None, list[InputSet]]:
    """Sectioned config: ``[universe]`` (optional) and ``[party K]`` blocks,
    each followed by newline-separated element labels."""
    universe_elems: list[str] | None = None
    sets: list[InputSet] = []
    current: list[str] | None = None
    current_party: int | None = None

    def flush():
        nonlocal current, current_party
        if current is None:
            return
        if current_party is None:
            pass
        else:
            sets.append(InputSet(current_party, frozenset(current)))
        current = None
        current_party = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                flush()
                header = line[1:-1].strip().lower()
                if header == "universe":
                    universe_elems = []
                    current = universe_elems
                    current_party = None
                elif header.startswith("party"):
                    try:
                        current_party = int(header.split()[1])
                    except (IndexError, ValueError):
                        raise ValueError(f"bad party header on line {lineno}: {line}")
                    current = []
                else:
                    raise ValueError(f"unknown section on line {lineno}: {line}")
            else:
                if current is None:
                    raise ValueError(f"element outside any section on line {lineno}")
                current.append(line)
    flush()
    universe = Universe(tuple(universe_elems)) if universe_elems is not None else None
    return universe, sets


def random_cnf(n: int, rng: random.Random, max_beta: int | None = None) -> CnfExpression:
    """Random well-formed CNF over parties 1..n, for randomized testing."""
    beta = rng.randint(1, max_beta or n)
    clauses = []
    for _ in range(beta):
        parties = rng.sample(range(1, n + 1), rng.randint(1, n))
        clauses.append(tuple(Literal(p, rng.random() < 0.3) for p in sorted(parties)))
    return CnfExpression(tuple(clauses))
