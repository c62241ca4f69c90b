"""Tokenizer, parser, validator, and renderer for structured rollout text.

A rollout is a sequence of tagged segments:

    <think>...</think>
    <dt_plan>...</dt_plan>
    <dt_rep>...</dt_rep>
    (<think>...</think> [<execute>...</execute> <results>...</results>])*
    <task>...</task>
    <answer>...</answer>

Markers are exact, case-sensitive literal strings and may not nest; segment
content may not contain any marker substring. The `<dt_rep>` and `<results>`
segments are inserted by the environment rather than generated by the policy,
which is tracked via `Origin` so trainers can exclude those spans.

Two parse modes:

* non-strict: untagged non-whitespace between segments is ignored, and a
  text that ends mid-grammar with a valid prefix parses with terminal
  ``TOKEN_LIMIT_TRUNCATED``.
* strict: any stray non-whitespace or incomplete structure is an error.
  Reward scoring uses strict mode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence


class TagKind(Enum):
    THINK = "think"
    DT_PLAN = "dt_plan"
    DT_REP = "dt_rep"
    EXECUTE = "execute"
    RESULTS = "results"
    TASK = "task"
    ANSWER = "answer"

    @property
    def open_marker(self) -> str:
        return f"<{self.value}>"

    @property
    def close_marker(self) -> str:
        return f"</{self.value}>"


class Origin(Enum):
    POLICY_GENERATED = "policy"
    SYSTEM_INSERTED = "system"


class Terminal(Enum):
    ANSWERED = "answered"
    TOKEN_LIMIT_TRUNCATED = "token_limit_truncated"


class ParseErrorKind(Enum):
    UNKNOWN_TAG = "unknown_tag"
    UNBALANCED_TAG = "unbalanced_tag"
    OUT_OF_ORDER = "out_of_order"
    MISSING_REQUIRED = "missing_required"
    DUPLICATE_TERMINAL = "duplicate_terminal"
    TRAILING_GARBAGE = "trailing_garbage"


class RolloutParseError(Exception):
    """First grammar violation found in a rollout text."""

    def __init__(self, kind: ParseErrorKind, position: int, detail: str):
        super().__init__(f"{kind.value} at {position}: {detail}")
        self.kind = kind
        self.position = position
        self.detail = detail


SYSTEM_KINDS = frozenset({TagKind.DT_REP, TagKind.RESULTS})

_MARKER_RE = re.compile(r"</?(?:think|dt_plan|dt_rep|execute|results|task|answer)>")
_TAG_SHAPED_RE = re.compile(r"</?[A-Za-z_]\w*>")

_OPEN = {k.open_marker: k for k in TagKind}
_CLOSE = {k.close_marker: k for k in TagKind}
_ALL_MARKERS = tuple(_OPEN) + tuple(_CLOSE)


@dataclass(frozen=True)
class Segment:
    kind: TagKind
    content: str
    span: tuple[int, int]  # content offsets, half-open, markers excluded
    origin: Origin

    def span_with_markers(self) -> tuple[int, int]:
        return (
            self.span[0] - len(self.kind.open_marker),
            self.span[1] + len(self.kind.close_marker),
        )


@dataclass(frozen=True)
class RolloutSequence:
    source_text: str
    segments: tuple[Segment, ...]
    iteration_count: int
    terminal: Terminal

    @classmethod
    def from_parts(
        cls,
        parts: Sequence[tuple[TagKind, str]],
        terminal: Terminal = Terminal.ANSWERED,
    ) -> "RolloutSequence":
        """Build a sequence mechanically from (kind, content) pairs.

        No grammar checking: this is the programmatic constructor used to
        represent sequences that would not parse, e.g. for validate_order
        fixtures. Segment spans index into the rendered source text.
        """
        pieces = []
        segments = []
        pos = 0
        for i, (kind, content) in enumerate(parts):
            if i > 0:
                pieces.append("\n")
                pos += 1
            start = pos + len(kind.open_marker)
            end = start + len(content)
            origin = (
                Origin.SYSTEM_INSERTED if kind in SYSTEM_KINDS else Origin.POLICY_GENERATED
            )
            segments.append(Segment(kind, content, (start, end), origin))
            piece = f"{kind.open_marker}{content}{kind.close_marker}"
            pieces.append(piece)
            pos += len(piece)
        return cls(
            source_text="".join(pieces),
            segments=tuple(segments),
            iteration_count=_count_iterations(segments),
            terminal=terminal,
        )


@dataclass(frozen=True)
class FormatVerdict:
    ok: bool
    first_violation: Optional[RolloutParseError]


# Grammar automaton. States name what is expected next.
_S_THINK0, _S_PLAN, _S_REP, _S_ITER, _S_AFTER_THINK, _S_RESULTS, _S_ANSWER, _S_DONE = range(8)

_ALLOWED: dict[int, dict[TagKind, int]] = {
    _S_THINK0: {TagKind.THINK: _S_PLAN},
    _S_PLAN: {TagKind.DT_PLAN: _S_REP},
    _S_REP: {TagKind.DT_REP: _S_ITER},
    _S_ITER: {TagKind.THINK: _S_AFTER_THINK, TagKind.TASK: _S_ANSWER},
    _S_AFTER_THINK: {
        TagKind.EXECUTE: _S_RESULTS,
        TagKind.THINK: _S_AFTER_THINK,
        TagKind.TASK: _S_ANSWER,
    },
    _S_RESULTS: {TagKind.RESULTS: _S_ITER},
    _S_ANSWER: {TagKind.ANSWER: _S_DONE},
    _S_DONE: {},
}

# First tag on the shortest completion path, used for missing-required details.
_FINISH_NEXT = {
    _S_THINK0: TagKind.THINK,
    _S_PLAN: TagKind.DT_PLAN,
    _S_REP: TagKind.DT_REP,
    _S_ITER: TagKind.TASK,
    _S_AFTER_THINK: TagKind.TASK,
    _S_RESULTS: TagKind.RESULTS,
    _S_ANSWER: TagKind.ANSWER,
}


def _missing_before(state: int, kind: TagKind) -> Optional[TagKind]:
    """First tag that must be inserted before `kind` becomes legal, or None."""
    frontier = [(state, None)]
    seen = {state}
    while frontier:
        nxt = []
        for st, first in frontier:
            for k, st2 in _ALLOWED[st].items():
                if k is kind:
                    return first if first is not None else k
                if st2 not in seen:
                    seen.add(st2)
                    nxt.append((st2, first if first is not None else k))
        frontier = nxt
    return None


def _count_iterations(segments: Iterable[Segment]) -> int:
    m = 0
    seen_rep = False
    for seg in segments:
        if seg.kind is TagKind.DT_REP:
            seen_rep = True
        elif seg.kind is TagKind.THINK and seen_rep:
            m += 1
    return m


def _partial_marker(candidate: str) -> bool:
    return bool(candidate) and any(
        marker.startswith(candidate) and marker != candidate for marker in _ALL_MARKERS
    )


def _raise_gap_error(text: str, gap_start: int, gap: str) -> None:
    offset = gap_start + (len(gap) - len(gap.lstrip()))
    rest = text[offset:]
    if _partial_marker(rest):
        raise RolloutParseError(
            ParseErrorKind.UNBALANCED_TAG, offset, f"truncated marker {rest!r}"
        )
    shaped = _TAG_SHAPED_RE.match(rest)
    if shaped:
        raise RolloutParseError(
            ParseErrorKind.UNKNOWN_TAG, offset, f"unknown tag {shaped.group()}"
        )
    raise RolloutParseError(
        ParseErrorKind.TRAILING_GARBAGE, offset, "untagged text between segments"
    )


def _raise_order_error(
    text: str, state: int, kind: TagKind, pos: int, seen_terminal: set[TagKind]
) -> None:
    if kind in (TagKind.TASK, TagKind.ANSWER) and kind in seen_terminal:
        raise RolloutParseError(
            ParseErrorKind.DUPLICATE_TERMINAL, pos, f"second {kind.open_marker}"
        )
    if state == _S_DONE:
        raise RolloutParseError(
            ParseErrorKind.TRAILING_GARBAGE,
            pos,
            f"{kind.open_marker} after {TagKind.ANSWER.close_marker}",
        )
    missing = _missing_before(state, kind)
    if missing is None:
        raise RolloutParseError(
            ParseErrorKind.OUT_OF_ORDER, pos, f"{kind.open_marker} not allowed here"
        )
    if missing.open_marker in text[pos:]:
        raise RolloutParseError(
            ParseErrorKind.OUT_OF_ORDER,
            pos,
            f"{kind.open_marker} before {missing.open_marker}",
        )
    raise RolloutParseError(
        ParseErrorKind.MISSING_REQUIRED,
        pos,
        f"missing {missing.open_marker} before {kind.open_marker}",
    )


def parse_rollout(text: str, strict: bool = False) -> RolloutSequence:
    """Parse rollout text into an ordered segment sequence.

    Raises RolloutParseError with the first violation. In non-strict mode a
    text that ends mid-grammar with a valid prefix is returned with terminal
    TOKEN_LIMIT_TRUNCATED instead of raising.
    """
    segments: list[Segment] = []
    state = _S_THINK0
    pos = 0
    seen_terminal: set[TagKind] = set()
    truncated = False

    while True:
        match = _MARKER_RE.search(text, pos)
        gap_end = match.start() if match else len(text)
        gap = text[pos:gap_end]
        if strict and gap.strip():
            _raise_gap_error(text, pos, gap)
        if match is None:
            break
        marker = match.group()
        if marker in _CLOSE:
            raise RolloutParseError(
                ParseErrorKind.UNBALANCED_TAG,
                match.start(),
                f"{marker} without matching open marker",
            )
        kind = _OPEN[marker]
        if kind not in _ALLOWED[state]:
            _raise_order_error(text, state, kind, match.start(), seen_terminal)
        close_match = _MARKER_RE.search(text, match.end())
        if close_match is None:
            if strict:
                raise RolloutParseError(
                    ParseErrorKind.UNBALANCED_TAG,
                    match.start(),
                    f"unclosed {marker}",
                )
            truncated = True
            break
        if close_match.group() != kind.close_marker:
            raise RolloutParseError(
                ParseErrorKind.UNBALANCED_TAG,
                close_match.start(),
                f"expected {kind.close_marker}, found {close_match.group()}",
            )
        origin = (
            Origin.SYSTEM_INSERTED if kind in SYSTEM_KINDS else Origin.POLICY_GENERATED
        )
        segments.append(
            Segment(kind, text[match.end() : close_match.start()],
                    (match.end(), close_match.start()), origin)
        )
        if kind in (TagKind.TASK, TagKind.ANSWER):
            seen_terminal.add(kind)
        state = _ALLOWED[state][kind]
        pos = close_match.end()

    if state == _S_DONE:
        terminal = Terminal.ANSWERED
    else:
        tail = text[pos:]
        has_partial = _partial_marker(tail.lstrip()) if tail.strip() else False
        if strict:
            if tail.strip():
                _raise_gap_error(text, pos, tail)
            raise RolloutParseError(
                ParseErrorKind.MISSING_REQUIRED,
                len(text),
                f"missing {_FINISH_NEXT[state].open_marker}",
            )
        if not (segments or truncated or has_partial):
            raise RolloutParseError(
                ParseErrorKind.MISSING_REQUIRED,
                len(text),
                f"missing {_FINISH_NEXT[state].open_marker}",
            )
        terminal = Terminal.TOKEN_LIMIT_TRUNCATED

    return RolloutSequence(
        source_text=text,
        segments=tuple(segments),
        iteration_count=_count_iterations(segments),
        terminal=terminal,
    )


def validate_order(seq: RolloutSequence) -> FormatVerdict:
    """Full-grammar verdict: ok iff the source parses strictly to completion."""
    try:
        parse_rollout(seq.source_text, strict=True)
    except RolloutParseError as err:
        return FormatVerdict(ok=False, first_violation=err)
    return FormatVerdict(ok=True, first_violation=None)


def render(seq: RolloutSequence) -> str:
    """Canonical text: marker-wrapped contents joined by newlines."""
    return "\n".join(
        f"{s.kind.open_marker}{s.content}{s.kind.close_marker}" for s in seq.segments
    )


def insert_system_segment(prefix: str, kind: TagKind, payload: str) -> str:
    """Append an environment-produced segment to a generation prefix.

    The prefix must end exactly at `</dt_plan>` for a DT_REP insertion or at
    `</execute>` for a RESULTS insertion.
    """
    expected = {
        TagKind.DT_REP: TagKind.DT_PLAN.close_marker,
        TagKind.RESULTS: TagKind.EXECUTE.close_marker,
    }
    if kind not in expected:
        raise ValueError(f"only dt_rep and results segments are system-inserted, not {kind.value}")
    if not prefix.endswith(expected[kind]):
        raise ValueError(
            f"prefix must end at {expected[kind]} to insert {kind.open_marker}"
        )
    return f"{prefix}\n{kind.open_marker}{payload}{kind.close_marker}"


def extract_contents(seq: RolloutSequence, kind: TagKind) -> list[str]:
    return [s.content for s in seq.segments if s.kind is kind]


def scan_tag_pairs(text: str, kind: TagKind) -> list[str]:
    """Lenient extraction of marker-pair contents, ignoring grammar.

    Used by reward scoring so that malformed rollouts still yield whatever
    plan/task/answer content they carry.
    """
    contents = []
    pos = 0
    open_m, close_m = kind.open_marker, kind.close_marker
    while True:
        start = text.find(open_m, pos)
        if start < 0:
            break
        end = text.find(close_m, start + len(open_m))
        if end < 0:
            break
        contents.append(text[start + len(open_m) : end])
        pos = end + len(close_m)
    return contents


def first_tag_content(text: str, kind: TagKind) -> Optional[str]:
    found = scan_tag_pairs(text, kind)
    return found[0] if found else None
