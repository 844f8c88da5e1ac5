"""A compact PDDL subset: parsing, printing, grounding, and STRIPS semantics.

Supported grammar: s-expression domains and problems with ``:action`` schemas,
conjunctive positive preconditions, and add/delete effects. Typing blocks,
disjunctions, quantifiers, and conditional effects are rejected with a syntax
error. Symbols are case-insensitive and normalized to lowercase.

Two tolerated departures from the strict grammar, both needed for fixture
files that circulate in this form:

* a domain file may be a bare sequence of ``(:action ...)`` forms with no
  ``(define (domain ...))`` wrapper; predicate schemas are then inferred from
  first use;
* an ``:effect`` keyword may appear *inside* an unclosed precondition
  conjunction (a common typo); the conjunction is split at the marker, and
  parentheses left unclosed at end of text are closed implicitly.

An action schema whose add effects contain exactly one ``around`` atom is
tagged probabilistic; deterministic schemas must not mention ``around`` in
their effects at all. Anything else is a parse error.
"""
from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "PddlError",
    "ParseError",
    "PreconditionError",
    "PredicateSchema",
    "LiftedAtom",
    "GroundAtom",
    "ActionSchema",
    "GroundAction",
    "DomainDef",
    "ProblemDef",
    "parse_domain",
    "parse_problem",
    "print_domain",
    "print_problem",
    "applicable",
    "apply_action",
    "ground",
]

AROUND = "around"

# ---------------------------------------------------------------------------
# Errors


class PddlError(Exception):
    pass


class ParseError(PddlError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = f"line {line}, column {col}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


class PreconditionError(PddlError):
    """Raised when a ground action is applied in a state it is not applicable in."""


# ---------------------------------------------------------------------------
# Lexing and reading


@dataclass(frozen=True)
class Sym:
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    tokens: list = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            col += 1
            i += 1
            continue
        if ch in "()":
            tokens.append(Sym(ch, line, col))
            col += 1
            i += 1
            continue
        start = i
        start_col = col
        while i < n and text[i] not in " \t\r\n();":
            i += 1
            col += 1
        tokens.append(Sym(text[start:i].lower(), line, start_col))
    return tokens


def _read_forms(tokens: list[Sym]) -> list:
    """Read all top-level s-expressions from a token list.

    Lists left unclosed at end of text are closed implicitly (truncated
    listings circulate; mid-text imbalance still raises).
    """
    forms: list = []
    stack: list[list] = []
    for tok in tokens:
        if tok.text == "(":
            stack.append([])
        elif tok.text == ")":
            if not stack:
                raise ParseError("unexpected ')'", tok.line, tok.col)
            done = stack.pop()
            (stack[-1] if stack else forms).append(done)
        else:
            (stack[-1] if stack else forms).append(tok)
    while stack:
        done = stack.pop()
        (stack[-1] if stack else forms).append(done)
    return forms


def _sym_text(item) -> str:
    if not isinstance(item, Sym):
        raise ParseError("expected a symbol, found a list")
    return item.text


def _loc(item) -> tuple[int | None, int | None]:
    if isinstance(item, Sym):
        return item.line, item.col
    for sub in item:
        return _loc(sub)
    return None, None


# ---------------------------------------------------------------------------
# Core types


@dataclass(frozen=True)
class PredicateSchema:
    name: str
    arity: int

    def __str__(self) -> str:
        return f"{self.name}/{self.arity}"


@dataclass(frozen=True)
class LiftedAtom:
    """A predicate applied to parameters; args starting with '?' are variables."""

    predicate: PredicateSchema
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.args) != self.predicate.arity:
            raise ParseError(
                f"predicate {self.predicate.name} expects {self.predicate.arity} "
                f"arguments, got {len(self.args)}"
            )

    def variables(self) -> tuple[str, ...]:
        return tuple(a for a in self.args if a.startswith("?"))

    def substitute(self, binding: dict[str, str]) -> "GroundAtom":
        args = tuple(binding.get(a, a) for a in self.args)
        for a in args:
            if a.startswith("?"):
                raise PddlError(f"unbound variable {a} in {self}")
        return GroundAtom(self.predicate, args)

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate.name,) + self.args) + ")"


@dataclass(frozen=True)
class GroundAtom:
    predicate: PredicateSchema
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.args) != self.predicate.arity:
            raise PddlError(
                f"predicate {self.predicate.name} expects {self.predicate.arity} "
                f"arguments, got {len(self.args)}"
            )

    @property
    def name(self) -> str:
        return self.predicate.name

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate.name,) + self.args) + ")"


def atom(name: str, *args: str) -> GroundAtom:
    """Convenience constructor used by the planner and tests."""
    return GroundAtom(PredicateSchema(name, len(args)), tuple(args))


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[str, ...]
    preconditions: tuple[LiftedAtom, ...]
    add_effects: tuple[LiftedAtom, ...]
    del_effects: tuple[LiftedAtom, ...]

    @property
    def probabilistic(self) -> bool:
        return any(a.predicate.name == AROUND for a in self.add_effects)

    def ground(self, args: tuple[str, ...] | list[str]) -> "GroundAction":
        args = tuple(args)
        if len(args) != len(self.parameters):
            raise PddlError(
                f"action {self.name} expects {len(self.parameters)} arguments, "
                f"got {len(args)}"
            )
        binding = dict(zip(self.parameters, args))
        return GroundAction(
            schema=self,
            args=args,
            preconditions=frozenset(a.substitute(binding) for a in self.preconditions),
            add_effects=frozenset(a.substitute(binding) for a in self.add_effects),
            del_effects=frozenset(a.substitute(binding) for a in self.del_effects),
        )


@dataclass(frozen=True)
class GroundAction:
    schema: ActionSchema
    args: tuple[str, ...]
    preconditions: frozenset[GroundAtom]
    add_effects: frozenset[GroundAtom]
    del_effects: frozenset[GroundAtom]

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def probabilistic(self) -> bool:
        return self.schema.probabilistic

    def __str__(self) -> str:
        return "(" + " ".join((self.schema.name,) + self.args) + ")"


# SymbolicStates are plain frozensets of GroundAtoms throughout the package.
SymbolicState = frozenset


@dataclass
class DomainDef:
    name: str
    predicates: dict[str, PredicateSchema]
    actions: dict[str, ActionSchema]
    declared_predicates: bool = True

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDef):
            return NotImplemented
        return (
            self.name == other.name
            and self.predicates == other.predicates
            and self.actions == other.actions
        )


@dataclass
class ProblemDef:
    name: str
    domain_name: str
    objects: tuple[str, ...]
    init: frozenset
    goal: frozenset

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProblemDef):
            return NotImplemented
        return (
            self.name == other.name
            and self.domain_name == other.domain_name
            and set(self.objects) == set(other.objects)
            and self.init == other.init
            and self.goal == other.goal
        )


# ---------------------------------------------------------------------------
# Parsing helpers


_REJECTED_FEATURES = {
    ":types",
    ":functions",
    ":constants",
    "or",
    "forall",
    "exists",
    "when",
    "imply",
}


class _PredicateTable:
    """Tracks declared or inferred predicate schemas with arity checking."""

    def __init__(self, declared: dict[str, PredicateSchema] | None):
        self.declared = declared is not None
        self.table: dict[str, PredicateSchema] = dict(declared or {})

    def resolve(self, name: str, arity: int, line, col) -> PredicateSchema:
        schema = self.table.get(name)
        if schema is None:
            if self.declared:
                raise ParseError(f"undeclared predicate '{name}'", line, col)
            schema = PredicateSchema(name, arity)
            self.table[name] = schema
            return schema
        if schema.arity != arity:
            raise ParseError(
                f"predicate '{name}' used with {arity} arguments, "
                f"declared with {schema.arity}",
                line,
                col,
            )
        return schema


def _parse_atom(form, preds: _PredicateTable) -> LiftedAtom:
    if isinstance(form, Sym):
        raise ParseError("expected an atom '(pred ...)'", form.line, form.col)
    if not form:
        raise ParseError("empty atom")
    head = form[0]
    name = _sym_text(head)
    if name in _REJECTED_FEATURES:
        raise ParseError(f"unsupported construct '{name}'", head.line, head.col)
    args = tuple(_sym_text(a) for a in form[1:])
    schema = preds.resolve(name, len(args), head.line, head.col)
    return LiftedAtom(schema, args)


def _split_at_effect(items: list) -> tuple[list, list | None]:
    """Split a conjunction's items at an embedded ':effect' keyword, if any."""
    for i, item in enumerate(items):
        if isinstance(item, Sym) and item.text == ":effect":
            return items[:i], items[i + 1 :]
    return items, None


def _parse_conjunction(form, preds: _PredicateTable, allow_not: bool):
    """Parse an atom or an (and ...) block.

    Returns (positives, negatives, trailing) where trailing is the remainder
    of a conjunction that was split at a misplaced ':effect' keyword.
    """
    positives: list[LiftedAtom] = []
    negatives: list[LiftedAtom] = []
    trailing: list | None = None
    if isinstance(form, Sym):
        raise ParseError("expected a formula", form.line, form.col)
    head = form[0] if form else None
    if isinstance(head, Sym) and head.text == "and":
        items, trailing = _split_at_effect(form[1:])
    else:
        items = [form]
    for item in items:
        if not isinstance(item, Sym) and item and isinstance(item[0], Sym) \
                and item[0].text == "not":
            if not allow_not:
                line, col = _loc(item)
                raise ParseError("negated preconditions are not supported", line, col)
            if len(item) != 2:
                line, col = _loc(item)
                raise ParseError("'not' takes exactly one atom", line, col)
            negatives.append(_parse_atom(item[1], preds))
        else:
            positives.append(_parse_atom(item, preds))
    return positives, negatives, trailing


def _check_schema_variables(schema_name: str, params: tuple[str, ...], atoms) -> None:
    declared = set(params)
    for la in atoms:
        for v in la.variables():
            if v not in declared:
                raise ParseError(
                    f"unbound variable {v} in action '{schema_name}'"
                )


def _parse_action(form, preds: _PredicateTable) -> ActionSchema:
    head = form[0]
    if len(form) < 2:
        raise ParseError("':action' needs a name", head.line, head.col)
    name = _sym_text(form[1])
    params: tuple[str, ...] = ()
    pre: list[LiftedAtom] = []
    adds: list[LiftedAtom] = []
    dels: list[LiftedAtom] = []
    saw_effect = False
    i = 2
    while i < len(form):
        key = form[i]
        key_text = _sym_text(key)
        if i + 1 >= len(form):
            raise ParseError(f"'{key_text}' needs a value", key.line, key.col)
        value = form[i + 1]
        if key_text == ":parameters":
            if isinstance(value, Sym):
                raise ParseError("':parameters' needs a list", key.line, key.col)
            params = tuple(_sym_text(p) for p in value)
            for p in params:
                if not p.startswith("?"):
                    raise ParseError(
                        f"parameter '{p}' must start with '?'", key.line, key.col
                    )
        elif key_text == ":precondition":
            positives, _, trailing = _parse_conjunction(value, preds, allow_not=False)
            pre = positives
            if trailing is not None:
                # Misplaced ':effect' inside the precondition conjunction.
                if len(trailing) != 1:
                    raise ParseError(
                        "expected a single effect formula after misplaced ':effect'",
                        key.line,
                        key.col,
                    )
                a, d, t2 = _parse_conjunction(trailing[0], preds, allow_not=True)
                if t2 is not None:
                    raise ParseError("nested ':effect' markers", key.line, key.col)
                adds, dels = a, d
                saw_effect = True
        elif key_text == ":effect":
            adds, dels, trailing = _parse_conjunction(value, preds, allow_not=True)
            if trailing is not None:
                raise ParseError("':effect' inside an effect", key.line, key.col)
            saw_effect = True
        else:
            raise ParseError(f"unsupported action key '{key_text}'", key.line, key.col)
        i += 2
    if not saw_effect:
        raise ParseError(f"action '{name}' has no ':effect'", head.line, head.col)
    _check_schema_variables(name, params, list(pre) + adds + dels)
    overlap = {str(a) for a in adds} & {str(a) for a in dels}
    if overlap:
        raise ParseError(f"action '{name}' adds and deletes {sorted(overlap)}")
    schema = ActionSchema(name, params, tuple(pre), tuple(adds), tuple(dels))
    _check_probabilistic_tag(schema, head)
    return schema


def _check_probabilistic_tag(schema: ActionSchema, head: Sym) -> None:
    around_adds = [a for a in schema.add_effects if a.predicate.name == AROUND]
    around_dels = [a for a in schema.del_effects if a.predicate.name == AROUND]
    if around_dels:
        raise ParseError(
            f"action '{schema.name}' deletes an '{AROUND}' atom; effects may "
            "only add it",
            head.line,
            head.col,
        )
    if len(around_adds) > 1:
        raise ParseError(
            f"action '{schema.name}' adds {len(around_adds)} '{AROUND}' atoms; "
            "a probabilistic action adds exactly one",
            head.line,
            head.col,
        )


def parse_domain(text: str) -> DomainDef:
    """Parse a domain: a (define (domain ...)) form or bare (:action ...) forms."""
    forms = _read_forms(_tokenize(text))
    if not forms:
        raise ParseError("empty domain text")
    first = forms[0]
    if (
        len(forms) == 1
        and not isinstance(first, Sym)
        and first
        and isinstance(first[0], Sym)
        and first[0].text == "define"
    ):
        return _parse_domain_define(first)
    return _parse_domain_bare(forms)


def _parse_domain_define(form) -> DomainDef:
    if len(form) < 2 or isinstance(form[1], Sym):
        line, col = _loc(form)
        raise ParseError("expected '(domain <name>)' after 'define'", line, col)
    header = form[1]
    if _sym_text(header[0]) != "domain" or len(header) != 2:
        line, col = _loc(header)
        raise ParseError("expected '(domain <name>)'", line, col)
    name = _sym_text(header[1])
    declared: dict[str, PredicateSchema] | None = None
    action_forms = []
    for block in form[2:]:
        if isinstance(block, Sym) or not block:
            line, col = _loc(block)
            raise ParseError("unexpected item in domain body", line, col)
        key = _sym_text(block[0])
        if key == ":requirements":
            continue
        if key == ":predicates":
            declared = {}
            for pform in block[1:]:
                if isinstance(pform, Sym) or not pform:
                    line, col = _loc(pform)
                    raise ParseError("malformed predicate declaration", line, col)
                pname = _sym_text(pform[0])
                arity = len(pform) - 1
                for v in pform[1:]:
                    if not _sym_text(v).startswith("?"):
                        line, col = _loc(v)
                        raise ParseError(
                            "predicate parameters must start with '?'", line, col
                        )
                if pname in declared:
                    line, col = _loc(pform)
                    raise ParseError(f"duplicate predicate '{pname}'", line, col)
                declared[pname] = PredicateSchema(pname, arity)
        elif key == ":action":
            action_forms.append(block)
        elif key in _REJECTED_FEATURES:
            line, col = _loc(block)
            raise ParseError(f"unsupported construct '{key}'", line, col)
        else:
            line, col = _loc(block)
            raise ParseError(f"unsupported domain block '{key}'", line, col)
    preds = _PredicateTable(declared)
    actions: dict[str, ActionSchema] = {}
    for aform in action_forms:
        schema = _parse_action(aform, preds)
        if schema.name in actions:
            raise ParseError(f"duplicate action '{schema.name}'")
        actions[schema.name] = schema
    return DomainDef(name, preds.table, actions, declared_predicates=declared is not None)


def _parse_domain_bare(forms) -> DomainDef:
    preds = _PredicateTable(None)
    actions: dict[str, ActionSchema] = {}
    for form in forms:
        if isinstance(form, Sym) or not form or _sym_text(form[0]) != ":action":
            line, col = _loc(form)
            raise ParseError("expected an '(:action ...)' form", line, col)
        schema = _parse_action(form, preds)
        if schema.name in actions:
            raise ParseError(f"duplicate action '{schema.name}'")
        actions[schema.name] = schema
    return DomainDef("anonymous", preds.table, actions, declared_predicates=False)


def parse_problem(text: str, domain: DomainDef) -> ProblemDef:
    """Parse a problem file against a parsed domain."""
    forms = _read_forms(_tokenize(text))
    if len(forms) != 1 or isinstance(forms[0], Sym):
        raise ParseError("expected a single '(define (problem ...))' form")
    form = forms[0]
    if _sym_text(form[0]) != "define":
        line, col = _loc(form)
        raise ParseError("expected '(define ...)'", line, col)
    header = form[1]
    if isinstance(header, Sym) or _sym_text(header[0]) != "problem" or len(header) != 2:
        line, col = _loc(header)
        raise ParseError("expected '(problem <name>)'", line, col)
    name = _sym_text(header[1])
    domain_name: str | None = None
    objects: tuple[str, ...] = ()
    init: list[GroundAtom] = []
    goal: list[GroundAtom] = []
    preds = _PredicateTable(domain.predicates if domain.declared_predicates else None)
    if not domain.declared_predicates:
        preds.table.update(domain.predicates)

    def ground_atom(aform) -> GroundAtom:
        la = _parse_atom(aform, preds)
        for arg in la.args:
            if arg.startswith("?"):
                line, col = _loc(aform)
                raise ParseError("variables are not allowed here", line, col)
            if arg not in objects:
                line, col = _loc(aform)
                raise ParseError(f"unknown object '{arg}'", line, col)
        return GroundAtom(la.predicate, la.args)

    for block in form[2:]:
        if isinstance(block, Sym) or not block:
            line, col = _loc(block)
            raise ParseError("unexpected item in problem body", line, col)
        key = _sym_text(block[0])
        if key == ":domain":
            domain_name = _sym_text(block[1])
        elif key == ":objects":
            objects = tuple(_sym_text(o) for o in block[1:])
            if len(set(objects)) != len(objects):
                line, col = _loc(block)
                raise ParseError("duplicate object names", line, col)
        elif key == ":init":
            init = [ground_atom(a) for a in block[1:]]
        elif key == ":goal":
            if len(block) != 2:
                line, col = _loc(block)
                raise ParseError("':goal' takes one formula", line, col)
            gform = block[1]
            if not isinstance(gform, Sym) and gform \
                    and isinstance(gform[0], Sym) and gform[0].text == "and":
                goal = [ground_atom(a) for a in gform[1:]]
            else:
                goal = [ground_atom(gform)]
        else:
            line, col = _loc(block)
            raise ParseError(f"unsupported problem block '{key}'", line, col)
    if domain_name is None:
        raise ParseError(f"problem '{name}' has no ':domain' block")
    if domain_name != domain.name and domain.name != "anonymous":
        raise ParseError(
            f"problem '{name}' references domain '{domain_name}', "
            f"expected '{domain.name}'"
        )
    if not goal:
        raise ParseError(f"problem '{name}' has no ':goal'")
    return ProblemDef(name, domain_name, objects, frozenset(init), frozenset(goal))


# ---------------------------------------------------------------------------
# Printing


def _fmt_lifted(a: LiftedAtom) -> str:
    return str(a)


def print_domain(domain: DomainDef) -> str:
    """Pretty-print a domain with canonical whitespace."""
    lines = [f"(define (domain {domain.name})"]
    if domain.predicates:
        lines.append("  (:predicates")
        for schema in domain.predicates.values():
            params = " ".join(f"?v{i}" for i in range(schema.arity))
            sep = " " if params else ""
            lines.append(f"    ({schema.name}{sep}{params})")
        lines[-1] += ")"
    for schema in domain.actions.values():
        lines.append(f"  (:action {schema.name}")
        lines.append("    :parameters (" + " ".join(schema.parameters) + ")")
        if len(schema.preconditions) == 1:
            pre = _fmt_lifted(schema.preconditions[0])
        else:
            pre = "(and " + " ".join(_fmt_lifted(a) for a in schema.preconditions) + ")"
        lines.append(f"    :precondition {pre}")
        effects = [_fmt_lifted(a) for a in schema.add_effects]
        effects += [f"(not {_fmt_lifted(a)})" for a in schema.del_effects]
        if len(effects) == 1:
            eff = effects[0]
        else:
            eff = "(and " + " ".join(effects) + ")"
        lines.append(f"    :effect {eff})")
    return "\n".join(lines) + ")\n"


def print_problem(problem: ProblemDef) -> str:
    lines = [f"(define (problem {problem.name})"]
    lines.append(f"  (:domain {problem.domain_name})")
    lines.append("  (:objects " + " ".join(problem.objects) + ")")
    lines.append("  (:init")
    for ga in sorted(problem.init, key=str):
        lines.append(f"    {ga}")
    lines[-1] += ")"
    goal_atoms = sorted(problem.goal, key=str)
    if len(goal_atoms) == 1:
        lines.append(f"  (:goal {goal_atoms[0]})")
    else:
        lines.append("  (:goal (and " + " ".join(str(a) for a in goal_atoms) + "))")
    return "\n".join(lines) + ")\n"


# ---------------------------------------------------------------------------
# STRIPS semantics


def applicable(state: frozenset, action: GroundAction) -> bool:
    """True iff every precondition atom is present in the state."""
    return action.preconditions <= state


def apply_action(state: frozenset, action: GroundAction) -> frozenset:
    """Successor state (state - deletes) | adds; raises if not applicable."""
    if not applicable(state, action):
        missing = sorted(str(a) for a in action.preconditions - state)
        raise PreconditionError(
            f"action {action} is not applicable; missing {', '.join(missing)}"
        )
    return (state - action.del_effects) | action.add_effects


def ground(schema: ActionSchema, args) -> GroundAction:
    return schema.ground(tuple(args))
