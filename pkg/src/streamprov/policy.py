"""Label vocabulary, rule types and the declarative policy file format.

A policy file has five sections::

    [init]       kind label pattern          -- initial labels by name/path
    [transfer]   label1 events label2 dir    -- process<->file label transfer
    [derived]    label events condition      -- event-triggered process labels
    [phf]        labels...                   -- potentially harmful functionality
    [judgment]   severity condition name     -- alerting predicates

Blank lines and ``#`` comments are ignored.  Event sets are written ``E0/E15``;
label alternatives ``PB6|PB7``.  Patterns are Python regular expressions and
must match the whole path (``re.fullmatch``), except ``args~`` conditions
which use ``re.search``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, FrozenSet, Iterable, Optional, Union

from .events import EntityKind, EventType


class PolicyError(ValueError):
    """Base class for policy problems."""


class PolicyParseError(PolicyError):
    def __init__(self, message: str, lineno: Optional[int] = None) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


class UnknownLabel(PolicyError):
    pass


class UnknownEventTypeInPolicy(PolicyError):
    pass


class Label(Enum):
    # process status labels (inherited across fork)
    PS1 = "PS1"
    PS2 = "PS2"
    PS3 = "PS3"
    PS4 = "PS4"
    PS5 = "PS5"
    PS6 = "PS6"
    PS7 = "PS7"
    # process behavior labels
    PB1 = "PB1"
    PB2 = "PB2"
    PB3 = "PB3"
    PB4 = "PB4"
    PB5 = "PB5"
    PB6 = "PB6"
    PB7 = "PB7"
    PB8 = "PB8"
    # file labels: untrusted / high-value
    FU1 = "FU1"
    FU2 = "FU2"
    FU3 = "FU3"
    FU4 = "FU4"
    FU5 = "FU5"
    FU6 = "FU6"
    FH1 = "FH1"
    FH2 = "FH2"
    FH3 = "FH3"
    FH4 = "FH4"
    FH5 = "FH5"

    @property
    def is_process_label(self) -> bool:
        return self.value[0] == "P"

    @property
    def is_file_label(self) -> bool:
        return self.value[0] == "F"

    @property
    def is_status(self) -> bool:
        return self.value.startswith("PS")

    @property
    def is_behavior(self) -> bool:
        return self.value.startswith("PB")

    @property
    def is_untrusted(self) -> bool:
        return self.value.startswith("FU")

    @property
    def is_high_value(self) -> bool:
        return self.value.startswith("FH")


STATUS_LABELS = frozenset(l for l in Label if l.is_status)
DEFAULT_PHF = frozenset({Label.PS2, Label.PS3, Label.PS5, Label.PB1, Label.PB2, Label.PB5})


class Direction(Enum):
    D = "D"  # subject process label -> object file
    R = "R"  # object file label -> subject process


class Severity(Enum):
    THREAT = "Threat"
    APT = "APT"


@dataclass(frozen=True)
class InitRule:
    target_kind: EntityKind
    pattern: re.Pattern
    label: Label

    def matches(self, name: str) -> bool:
        return self.pattern.fullmatch(name) is not None


@dataclass(frozen=True)
class TransferRule:
    """One row of the transfer table.

    ``source_labels`` holds the row's Label1 alternatives; only D rows may list
    more than one.
    """

    source_labels: FrozenSet[Label]
    events: FrozenSet[EventType]
    co_label: Label
    direction: Direction

    @property
    def source_label(self) -> Label:
        (only,) = self.source_labels
        return only

    def __str__(self) -> str:
        src = "|".join(sorted(l.value for l in self.source_labels))
        evs = "/".join(sorted((e.value for e in self.events), key=lambda c: (c[0], int(c[1:]))))
        return f"{src}-{evs}-{self.co_label.value}-{self.direction.value}"


@dataclass(frozen=True)
class DerivedRule:
    """Sets ``label`` on the subject process of a matching event.

    Exactly one guard is set; ``always`` rules have none.
    """

    label: Label
    events: FrozenSet[EventType]
    subject_any: FrozenSet[Label] = frozenset()
    object_any: FrozenSet[Label] = frozenset()
    object_pattern: Optional[re.Pattern] = None
    args_pattern: Optional[re.Pattern] = None


# --- boolean conditions over label sets -------------------------------------

Predicate = Callable[[Iterable[Label]], bool]


class Condition:
    """A parsed ``&``/``|`` expression over label codes."""

    def __init__(self, text: str) -> None:
        self.text = text
        self._tokens = _tokenize(text)
        self._pos = 0
        self._tree = self._parse_or()
        if self._pos != len(self._tokens):
            raise PolicyParseError(f"trailing input in condition {text!r}")
        del self._tokens
        self.labels: FrozenSet[Label] = frozenset(_tree_labels(self._tree))

    def __call__(self, labels) -> bool:
        return _eval(self._tree, labels)

    def __str__(self) -> str:
        return self.text

    def __repr__(self) -> str:
        return f"Condition({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Condition) and self._tree == other._tree

    def __hash__(self) -> int:
        return hash(repr(self._tree))

    def _peek(self):
        return self._tokens[self._pos] if self._pos < len(self._tokens) else None

    def _take(self):
        tok = self._peek()
        self._pos += 1
        return tok

    def _parse_or(self):
        items = [self._parse_and()]
        while self._peek() == "|":
            self._take()
            items.append(self._parse_and())
        return items[0] if len(items) == 1 else ("or", tuple(items))

    def _parse_and(self):
        items = [self._parse_atom()]
        while self._peek() == "&":
            self._take()
            items.append(self._parse_atom())
        return items[0] if len(items) == 1 else ("and", tuple(items))

    def _parse_atom(self):
        tok = self._take()
        if tok == "(":
            inner = self._parse_or()
            if self._take() != ")":
                raise PolicyParseError(f"unbalanced parentheses in {self.text!r}")
            return inner
        if tok is None or tok in "&|)":
            raise PolicyParseError(f"unexpected {tok!r} in condition {self.text!r}")
        return parse_label(tok)


def _tokenize(text: str) -> list[str]:
    tokens = re.findall(r"[A-Z]{2}\d+|[&|()]|\S", text.replace(" ", ""))
    if not tokens:
        raise PolicyParseError("empty condition")
    return tokens


def _tree_labels(node):
    if isinstance(node, Label):
        yield node
    else:
        for child in node[1]:
            yield from _tree_labels(child)


def _eval(node, labels) -> bool:
    if isinstance(node, Label):
        return node in labels
    op, children = node
    if op == "and":
        return all(_eval(c, labels) for c in children)
    return any(_eval(c, labels) for c in children)


@dataclass(frozen=True)
class JudgmentRule:
    alert_name: str
    condition: Condition
    severity: Severity

    def matches(self, labels) -> bool:
        return self.condition(labels)


@dataclass(frozen=True)
class Policy:
    init_rules: tuple[InitRule, ...]
    transfer_rules: tuple[TransferRule, ...]
    derived_rules: tuple[DerivedRule, ...]
    phf_set: FrozenSet[Label]
    judgment_rules: tuple[JudgmentRule, ...]

    def referenced_labels(self) -> set[Label]:
        out: set[Label] = set(self.phf_set)
        for r in self.init_rules:
            out.add(r.label)
        for t in self.transfer_rules:
            out |= t.source_labels
            out.add(t.co_label)
        for d in self.derived_rules:
            out |= {d.label} | d.subject_any | d.object_any
        for j in self.judgment_rules:
            out |= j.condition.labels
        return out


# --- parsing ----------------------------------------------------------------

_SECTIONS = ("init", "transfer", "derived", "phf", "judgment")
_LABELS = {l.value: l for l in Label}
_ETYPES = {t.value: t for t in EventType}


def parse_label(code: str, lineno: Optional[int] = None) -> Label:
    try:
        return _LABELS[code]
    except KeyError:
        raise UnknownLabel(f"line {lineno}: unknown label {code!r}" if lineno else f"unknown label {code!r}") from None


def _labels(text: str, lineno: int) -> FrozenSet[Label]:
    return frozenset(parse_label(c, lineno) for c in text.split("|"))


def _events(text: str, lineno: int) -> FrozenSet[EventType]:
    out = set()
    for code in text.split("/"):
        if code not in _ETYPES:
            raise UnknownEventTypeInPolicy(f"line {lineno}: unknown event type {code!r}")
        out.add(_ETYPES[code])
    return frozenset(out)


def _regex(text: str, lineno: int) -> re.Pattern:
    try:
        return re.compile(text)
    except re.error as exc:
        raise PolicyParseError(f"bad pattern {text!r}: {exc}", lineno) from None


def _split(line: str, n: int, lineno: int) -> list[str]:
    parts = line.split(None, n - 1)
    if len(parts) != n:
        raise PolicyParseError(f"expected {n} fields, got {len(parts)}", lineno)
    return parts


def _parse_init(line: str, lineno: int) -> InitRule:
    kind_s, label_s, pattern = _split(line, 3, lineno)
    kinds = {"process": EntityKind.PROCESS, "file": EntityKind.FILE}
    if kind_s not in kinds:
        raise PolicyParseError(f"init target must be 'process' or 'file', got {kind_s!r}", lineno)
    label = parse_label(label_s, lineno)
    kind = kinds[kind_s]
    if (kind is EntityKind.PROCESS) != label.is_process_label:
        raise PolicyParseError(f"label {label.value} does not fit target {kind_s}", lineno)
    return InitRule(kind, _regex(pattern.strip(), lineno), label)


def _parse_transfer(line: str, lineno: int) -> TransferRule:
    parts = line.split()
    if len(parts) != 4:
        raise PolicyParseError(f"transfer rule needs 4 fields, got {len(parts)}", lineno)
    src_s, ev_s, co_s, dir_s = parts
    try:
        direction = Direction(dir_s)
    except ValueError:
        raise PolicyParseError(f"direction must be D or R, got {dir_s!r}", lineno) from None
    sources = _labels(src_s, lineno)
    co = parse_label(co_s, lineno)
    if not all(l.is_process_label for l in sources):
        raise PolicyParseError("label1 must be process labels", lineno)
    if not co.is_file_label:
        raise PolicyParseError("label2 must be a file label", lineno)
    if direction is Direction.R and len(sources) != 1:
        raise PolicyParseError("an R rule sets exactly one process label", lineno)
    return TransferRule(sources, _events(ev_s, lineno), co, direction)


def _parse_derived(line: str, lineno: int) -> DerivedRule:
    label_s, ev_s, cond = _split(line, 3, lineno)
    label = parse_label(label_s, lineno)
    if not label.is_process_label:
        raise PolicyParseError("derived rules set process labels", lineno)
    events = _events(ev_s, lineno)
    cond = cond.strip()
    if cond == "always":
        return DerivedRule(label, events)
    if cond.startswith("subject:"):
        return DerivedRule(label, events, subject_any=_labels(cond[8:], lineno))
    if cond.startswith("object:"):
        return DerivedRule(label, events, object_any=_labels(cond[7:], lineno))
    if cond.startswith("object~"):
        return DerivedRule(label, events, object_pattern=_regex(cond[7:], lineno))
    if cond.startswith("args~"):
        return DerivedRule(label, events, args_pattern=_regex(cond[5:], lineno))
    raise PolicyParseError(f"unknown derived condition {cond!r}", lineno)


def _parse_judgment(line: str, lineno: int) -> JudgmentRule:
    sev_s, cond_s, name = _split(line, 3, lineno)
    try:
        severity = Severity(sev_s)
    except ValueError:
        raise PolicyParseError(f"severity must be Threat or APT, got {sev_s!r}", lineno) from None
    try:
        cond = Condition(cond_s)
    except UnknownLabel as exc:
        raise UnknownLabel(f"line {lineno}: {exc}") from None
    except PolicyParseError as exc:
        raise PolicyParseError(str(exc), lineno) from None
    return JudgmentRule(name.strip(), cond, severity)


def parse_policy(text: str) -> Policy:
    sections: dict[str, list] = {s: [] for s in _SECTIONS}
    phf: set[Label] = set()
    seen_phf = False
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        # full-line comments, or trailing comments introduced by " #"
        line = raw.strip()
        if line.startswith("#"):
            continue
        line = line.split(" #", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            current = m.group(1)
            if current not in sections:
                raise PolicyParseError(f"unknown section [{current}]", lineno)
            seen_phf |= current == "phf"
            continue
        if current is None:
            raise PolicyParseError("rule outside of any section", lineno)
        if current == "init":
            sections["init"].append(_parse_init(line, lineno))
        elif current == "transfer":
            sections["transfer"].append(_parse_transfer(line, lineno))
        elif current == "derived":
            sections["derived"].append(_parse_derived(line, lineno))
        elif current == "phf":
            phf |= {parse_label(tok, lineno) for tok in line.replace(",", " ").split()}
        else:
            sections["judgment"].append(_parse_judgment(line, lineno))

    names = [j.alert_name for j in sections["judgment"]]
    if len(set(names)) != len(names):
        raise PolicyParseError("duplicate judgment rule names")
    return Policy(
        init_rules=tuple(sections["init"]),
        transfer_rules=tuple(sections["transfer"]),
        derived_rules=tuple(sections["derived"]),
        phf_set=frozenset(phf) if seen_phf else DEFAULT_PHF,
        judgment_rules=tuple(sections["judgment"]),
    )


def default_policy_text() -> str:
    return resources.files("streamprov").joinpath("data/default.policy").read_text()


def load_policy(path: Union[str, Path, None] = None) -> Policy:
    """Load a policy file; ``None`` or ``"default"`` gives the shipped policy."""
    if path is None or str(path) == "default":
        return parse_policy(default_policy_text())
    return parse_policy(Path(path).read_text())
