"""Code-execution and judge interfaces with deterministic stand-ins.

The real system runs policy-written Python in an external sandbox and asks
an external judge model about free-text answers. Here both are interfaces:
`TwinQueryExecutor` evaluates a tiny, total query language directly against
a twin (no loops, decidable, auditable), and `MockJudge` decides by token
overlap. Remote clients speak the versioned wire schemas but are not used
by the test suite.

Executor query language (one expression per code block):

    arithmetic  + - * /          comparisons  < > <= >= == !=
    mean_depth(instance, frame)  std_depth(instance, frame)
    bbox(instance, frame)        mask(instance, frame)
    instance_count(frame)        iou(mask_a, mask_b)
    frames_where(expr)           `frame` is bound per frame inside the expr
    sleep(seconds)               test aid for timeout behavior

Failed executions carry a single error line with no file-path fragments,
mirroring how verbose tracebacks are reduced before being fed back.
"""

from __future__ import annotations

import json
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

from .masks import BinaryMask
from .metrics import mask_iou
from .records import canonical_json
from .twin import DigitalTwin

EXEC_WIRE_SCHEMA = "dtr1-exec/1"
JUDGE_WIRE_SCHEMA = "dtr1-judge/1"

_PATH_RE = re.compile(r"[/\\]")
_ERROR_CLASS_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_.]*)\s*:")


class ExecTransportError(Exception):
    pass


class JudgeTransportError(Exception):
    pass


@dataclass(frozen=True)
class ExecRequest:
    code: str
    twin_ref: str = ""
    timeout: float = 5.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class ExecOutcome:
    success: bool
    output: str
    error_line: Optional[str] = None

    def __post_init__(self):
        if self.success and self.error_line is not None:
            raise ValueError("successful outcomes carry no error line")
        if self.error_line is not None:
            if "\n" in self.error_line or "\r" in self.error_line:
                raise ValueError("error line must be a single line")
            if _PATH_RE.search(self.error_line):
                raise ValueError("error line must not contain path fragments")

    def to_wire(self) -> dict:
        return {
            "schema": EXEC_WIRE_SCHEMA,
            "success": self.success,
            "output": self.output,
            "error_line": self.error_line,
        }

    @classmethod
    def from_wire(cls, data: dict) -> "ExecOutcome":
        if data.get("schema") != EXEC_WIRE_SCHEMA:
            raise ValueError(f"expected schema {EXEC_WIRE_SCHEMA!r}")
        return cls(
            success=bool(data["success"]),
            output=str(data.get("output", "")),
            error_line=data.get("error_line"),
        )


def exec_request_to_wire(req: ExecRequest) -> dict:
    return {
        "schema": EXEC_WIRE_SCHEMA,
        "code": req.code,
        "twin_ref": req.twin_ref,
        "timeout": req.timeout,
    }


def exec_request_from_wire(data: dict) -> ExecRequest:
    if data.get("schema") != EXEC_WIRE_SCHEMA:
        raise ValueError(f"expected schema {EXEC_WIRE_SCHEMA!r}")
    return ExecRequest(
        code=str(data["code"]),
        twin_ref=str(data.get("twin_ref", "")),
        timeout=float(data.get("timeout", 5.0)),
    )


@dataclass(frozen=True)
class JudgeRequest:
    candidate: str
    reference: str
    rubric: str = ""

    def to_wire(self) -> dict:
        return {
            "schema": JUDGE_WIRE_SCHEMA,
            "candidate": self.candidate,
            "reference": self.reference,
            "rubric": self.rubric,
        }

    @classmethod
    def from_wire(cls, data: dict) -> "JudgeRequest":
        if data.get("schema") != JUDGE_WIRE_SCHEMA:
            raise ValueError(f"expected schema {JUDGE_WIRE_SCHEMA!r}")
        return cls(
            candidate=str(data["candidate"]),
            reference=str(data["reference"]),
            rubric=str(data.get("rubric", "")),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    rationale: str = ""

    def to_wire(self) -> dict:
        return {
            "schema": JUDGE_WIRE_SCHEMA,
            "correct": self.correct,
            "rationale": self.rationale,
        }

    @classmethod
    def from_wire(cls, data: dict) -> "JudgeVerdict":
        if data.get("schema") != JUDGE_WIRE_SCHEMA:
            raise ValueError(f"expected schema {JUDGE_WIRE_SCHEMA!r}")
        return cls(correct=bool(data["correct"]), rationale=str(data.get("rationale", "")))


def truncate_error(raw_error: str) -> str:
    """Reduce a multi-line error to one relevant line.

    The last non-empty line wins; if it contains a path fragment, the last
    path-free line wins instead; if every line has paths, the error-class
    token of the final line is returned.
    """
    lines = [line.strip() for line in raw_error.splitlines() if line.strip()]
    if not lines:
        return "Error"
    if not _PATH_RE.search(lines[-1]):
        return lines[-1]
    for line in reversed(lines[:-1]):
        if not _PATH_RE.search(line):
            return line
    match = _ERROR_CLASS_RE.match(lines[-1])
    if match and not _PATH_RE.search(match.group(1)):
        return match.group(1)
    return "Error"


class ToolExecutor(Protocol):
    def run(self, req: ExecRequest) -> ExecOutcome: ...


class JudgeClient(Protocol):
    def judge(self, req: JudgeRequest) -> JudgeVerdict: ...


def execute(req: ExecRequest, executor: ToolExecutor) -> ExecOutcome:
    """Run a request under its timeout; failures never escape as exceptions."""
    box: dict = {}

    def target():
        try:
            box["outcome"] = executor.run(req)
        except Exception as err:  # noqa: BLE001 - boundary turns failures into outcomes
            box["error"] = err

    worker = threading.Thread(target=target, daemon=True)
    worker.start()
    worker.join(req.timeout)
    if worker.is_alive():
        return ExecOutcome(success=False, output="", error_line="execution timeout")
    if "error" in box:
        err = box["error"]
        return ExecOutcome(
            success=False,
            output="",
            error_line=truncate_error(f"{type(err).__name__}: {err}"),
        )
    return box["outcome"]


# ---------------------------------------------------------------------------
# Mini query language over a bound twin.
# ---------------------------------------------------------------------------


class QueryError(Exception):
    pass


@dataclass(frozen=True)
class _MaskValue:
    mask: BinaryMask

    def render(self) -> str:
        return f"mask {self.mask.width}x{self.mask.height}"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op><=|>=|==|!=|[+\-*/(),=<>]))"
)


def _tokenize(code: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(code):
        match = _TOKEN_RE.match(code, pos)
        if match is None or match.end() == pos:
            rest = code[pos:].strip()
            if not rest:
                break
            raise QueryError(f"SyntaxError: unexpected character {rest[0]!r}")
        if match.group("number") is not None:
            tokens.append(("number", match.group("number")))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    return tokens


class _Parser:
    """Recursive descent over the token list; produces a small AST."""

    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise QueryError("SyntaxError: unexpected end of expression")
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        tok = self.take()
        if tok != ("op", op):
            raise QueryError(f"SyntaxError: expected {op!r}")

    def parse(self):
        node = self.comparison()
        if self.peek() is not None:
            raise QueryError(f"SyntaxError: trailing tokens after expression")
        return node

    def comparison(self):
        left = self.arith()
        tok = self.peek()
        if tok is not None and tok[0] == "op" and tok[1] in ("<", ">", "<=", ">=", "==", "!="):
            self.take()
            right = self.arith()
            return ("cmp", tok[1], left, right)
        return left

    def arith(self):
        node = self.term()
        while True:
            tok = self.peek()
            if tok is not None and tok[0] == "op" and tok[1] in ("+", "-"):
                self.take()
                node = ("bin", tok[1], node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            tok = self.peek()
            if tok is not None and tok[0] == "op" and tok[1] in ("*", "/"):
                self.take()
                node = ("bin", tok[1], node, self.unary())
            else:
                return node

    def unary(self):
        tok = self.peek()
        if tok == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        kind, value = self.take()
        if kind == "number":
            return ("num", float(value) if "." in value else int(value))
        if kind == "name":
            if self.peek() == ("op", "("):
                self.take()
                args, kwargs = self.arguments()
                return ("call", value, args, kwargs)
            return ("var", value)
        if (kind, value) == ("op", "("):
            node = self.comparison()
            self.expect_op(")")
            return node
        raise QueryError(f"SyntaxError: unexpected token {value!r}")

    def arguments(self):
        args: list = []
        kwargs: dict = {}
        if self.peek() == ("op", ")"):
            self.take()
            return args, kwargs
        while True:
            tok = self.peek()
            if (
                tok is not None
                and tok[0] == "name"
                and self.pos + 1 < len(self.tokens)
                and self.tokens[self.pos + 1] == ("op", "=")
            ):
                self.take()
                self.take()
                kwargs[tok[1]] = self.comparison()
            else:
                args.append(self.comparison())
            tok = self.take()
            if tok == ("op", ")"):
                return args, kwargs
            if tok != ("op", ","):
                raise QueryError("SyntaxError: expected ',' or ')' in argument list")


_SIGNATURES = {
    "mean_depth": ("instance", "frame"),
    "std_depth": ("instance", "frame"),
    "bbox": ("instance", "frame"),
    "mask": ("instance", "frame"),
    "instance_count": ("frame",),
    "iou": ("a", "b"),
    "sleep": ("seconds",),
}


class TwinQueryExecutor:
    """Deterministic executor evaluating query expressions against a twin.

    Stateless between calls: equal (code, twin) always produce equal
    outcomes. Masks referenced by path are loaded relative to `base_dir`.
    """

    def __init__(self, twin: DigitalTwin, base_dir: Optional[str | Path] = None):
        self.twin = twin
        self.base_dir = base_dir

    def run(self, req: ExecRequest) -> ExecOutcome:
        try:
            rendered = self.evaluate(req.code)
        except QueryError as err:
            return ExecOutcome(success=False, output="", error_line=truncate_error(str(err)))
        return ExecOutcome(success=True, output=rendered, error_line=None)

    def evaluate(self, code: str) -> str:
        code = code.strip()
        if not code:
            raise QueryError("SyntaxError: empty code block")
        node = _Parser(_tokenize(code)).parse()
        return self._render(self._eval(node, {}))

    # -- evaluation ---------------------------------------------------------

    def _eval(self, node, env: dict):
        tag = node[0]
        if tag == "num":
            return node[1]
        if tag == "var":
            if node[1] in env:
                return env[node[1]]
            raise QueryError(f"NameError: unknown name {node[1]!r}")
        if tag == "neg":
            value = self._eval(node[1], env)
            self._require_number(value)
            return -value
        if tag == "bin":
            op, left_node, right_node = node[1], node[2], node[3]
            left = self._eval(left_node, env)
            right = self._eval(right_node, env)
            self._require_number(left)
            self._require_number(right)
            if op == "+":
                return left + right
            if op == "-":
                return left - right
            if op == "*":
                return left * right
            if right == 0:
                raise QueryError("ZeroDivisionError: division by zero")
            return left / right
        if tag == "cmp":
            op = node[1]
            left = self._eval(node[2], env)
            right = self._eval(node[3], env)
            if op in ("==", "!="):
                result = left == right
                return result if op == "==" else not result
            self._require_number(left)
            self._require_number(right)
            return {"<": left < right, ">": left > right, "<=": left <= right, ">=": left >= right}[op]
        if tag == "call":
            return self._call(node[1], node[2], node[3], env)
        raise QueryError(f"RuntimeError: unhandled node {tag!r}")

    @staticmethod
    def _require_number(value) -> None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise QueryError("TypeError: arithmetic needs numeric operands")

    def _call(self, name: str, arg_nodes, kwarg_nodes, env: dict):
        if name == "frames_where":
            if kwarg_nodes or len(arg_nodes) != 1:
                raise QueryError("TypeError: frames_where takes one predicate expression")
            hits = []
            for t in range(self.twin.frame_count):
                if self._truthy(self._eval(arg_nodes[0], {**env, "frame": t})):
                    hits.append(t)
            return hits
        if name not in _SIGNATURES:
            raise QueryError(f"NameError: unknown function {name!r}")
        params = _SIGNATURES[name]
        values = [self._eval(a, env) for a in arg_nodes]
        for key, node in kwarg_nodes.items():
            if key not in params:
                raise QueryError(f"TypeError: {name} has no parameter {key!r}")
            index = params.index(key)
            while len(values) < index:
                raise QueryError(f"TypeError: missing argument before {key!r} in {name}")
            if index < len(values):
                raise QueryError(f"TypeError: duplicate argument {key!r} in {name}")
            values.append(self._eval(node, env))
        if len(values) != len(params):
            raise QueryError(
                f"TypeError: {name} expects {len(params)} arguments, got {len(values)}"
            )
        return self._builtin(name, values)

    def _builtin(self, name: str, values: list):
        if name == "sleep":
            self._require_number(values[0])
            time.sleep(float(values[0]))
            return float(values[0])
        if name == "iou":
            a, b = values
            if not isinstance(a, _MaskValue) or not isinstance(b, _MaskValue):
                raise QueryError("TypeError: iou expects two masks")
            return mask_iou(a.mask, b.mask)
        if name == "instance_count":
            frame = self._frame(values[0])
            return len(frame.instances)
        instance = self._instance(values[0], values[1])
        if name == "mask":
            try:
                return _MaskValue(instance.load_mask(self.base_dir))
            except (OSError, ValueError) as err:
                raise QueryError(f"IOError: cannot load mask for instance {instance.instance_id}") from err
        if name == "bbox":
            coords = instance.bbox.to_list()
            return tuple(int(c) if float(c).is_integer() else c for c in coords)
        if instance.depth is None:
            raise QueryError(
                f"ValueError: instance {instance.instance_id} has no depth statistics"
            )
        return instance.depth.mean if name == "mean_depth" else instance.depth.std

    def _frame(self, value):
        if isinstance(value, bool) or not isinstance(value, int):
            raise QueryError("TypeError: frame index must be an integer")
        try:
            return self.twin.frame(value)
        except KeyError as err:
            raise QueryError(f"KeyError: no frame {value}") from err

    def _instance(self, instance_id, frame_index):
        if isinstance(instance_id, bool) or not isinstance(instance_id, int):
            raise QueryError("TypeError: instance id must be an integer")
        frame = self._frame(frame_index)
        try:
            return frame.instance(instance_id)
        except KeyError as err:
            raise QueryError(f"KeyError: no instance {instance_id} in frame {frame.t}") from err

    @staticmethod
    def _truthy(value) -> bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, (int, float)):
            return value != 0
        raise QueryError("TypeError: predicate must be boolean or numeric")

    def _render(self, value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, int):
            return str(value)
        if isinstance(value, tuple):
            return "(" + ", ".join(self._render(v) for v in value) + ")"
        if isinstance(value, list):
            return "[" + ", ".join(self._render(v) for v in value) + "]"
        if isinstance(value, _MaskValue):
            return value.render()
        raise QueryError(f"TypeError: cannot render value of type {type(value).__name__}")


# ---------------------------------------------------------------------------
# Judges.
# ---------------------------------------------------------------------------

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_RE = re.compile(r"[^\w\s]")


def _normalize_tokens(text: str) -> frozenset[str]:
    cleaned = _PUNCT_RE.sub(" ", text.lower())
    return frozenset(tok for tok in cleaned.split() if tok not in _ARTICLES)


class MockJudge:
    """Deterministic judge: token-set containment F1 against the reference."""

    def __init__(self, threshold: float = 0.6):
        if not (0 < threshold <= 1):
            raise ValueError("threshold must be in (0, 1]")
        self.threshold = threshold

    def judge(self, req: JudgeRequest) -> JudgeVerdict:
        cand = _normalize_tokens(req.candidate)
        ref = _normalize_tokens(req.reference)
        if not cand and not ref:
            return JudgeVerdict(correct=True, rationale="both sides empty")
        if not cand or not ref:
            return JudgeVerdict(correct=False, rationale="one side empty")
        overlap = len(cand & ref)
        f1 = 2 * overlap / (len(cand) + len(ref))
        return JudgeVerdict(
            correct=f1 >= self.threshold,
            rationale=f"token containment F1 {f1:.3f} vs threshold {self.threshold}",
        )


# ---------------------------------------------------------------------------
# Remote clients (wire contract only; the suite exercises the mocks).
# ---------------------------------------------------------------------------


def _post_json(url: str, body: dict, timeout: float) -> dict:
    data = canonical_json(body).encode("utf-8")
    request = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


class RemoteExecutorClient:
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def run(self, req: ExecRequest) -> ExecOutcome:
        try:
            raw = _post_json(self.url, exec_request_to_wire(req), self.timeout)
        except (urllib.error.URLError, OSError, ValueError) as err:
            raise ExecTransportError(str(err)) from err
        return ExecOutcome.from_wire(raw)


class RemoteJudgeClient:
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def judge(self, req: JudgeRequest) -> JudgeVerdict:
        try:
            raw = _post_json(self.url, req.to_wire(), self.timeout)
        except (urllib.error.URLError, OSError, ValueError) as err:
            raise JudgeTransportError(str(err)) from err
        return JudgeVerdict.from_wire(raw)
