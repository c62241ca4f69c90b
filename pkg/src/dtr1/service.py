"""Stateless scoring service over HTTP.

Endpoints (request/response bodies are canonical JSON, schema dtr1-api/1):

    POST /v1/score          score a rollout against ground truth
    POST /v1/validate-plan  plan verdict (always 200 with the verdict body)
    POST /v1/mask           training mask for a rollout (truncated accepted)
    GET  /v1/registry       configured model registry
    GET  /healthz           version and registry hash

The service never executes code: execution outcomes come from the request's
exec_replay or, absent that, from the results-sentinel convention (a
results segment starting with "ERR:" marks a failed block; executes without
a paired results segment count as failures). All state is immutable
configuration loaded at startup, so concurrent identical requests produce
byte-identical responses.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import __version__
from .execution import ExecOutcome, JudgeTransportError, MockJudge, RemoteJudgeClient
from .grammar import RolloutParseError, TagKind, parse_rollout, scan_tag_pairs
from .grpo import TrainingMask, training_mask
from .plan import ModelRegistry, default_registry, validate_plan_text
from .records import canonical_json
from .reward import ExecPenaltyMode, GroundTruth, RewardConfig, ScoreDeps, SegFrameRule, score

API_SCHEMA = "dtr1-api/1"


class _BadRequest(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class _NotFound(Exception):
    pass


@dataclass(frozen=True)
class ServiceSettings:
    registry_path: Optional[str] = None
    alpha: float = 1.0
    beta: float = 1.0
    iou_threshold: float = 0.5
    judge_threshold: float = 0.6
    judge_url: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8350

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceSettings":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)

    def with_env(self) -> "ServiceSettings":
        """Environment overrides: DTR1_LISTEN, DTR1_REGISTRY, DTR1_ALPHA, DTR1_BETA."""
        settings = self
        listen = os.environ.get("DTR1_LISTEN")
        if listen:
            host, _, port = listen.rpartition(":")
            settings = replace(settings, host=host or settings.host,
                               port=int(port) if port else settings.port)
        if os.environ.get("DTR1_REGISTRY"):
            settings = replace(settings, registry_path=os.environ["DTR1_REGISTRY"])
        if os.environ.get("DTR1_ALPHA"):
            settings = replace(settings, alpha=float(os.environ["DTR1_ALPHA"]))
        if os.environ.get("DTR1_BETA"):
            settings = replace(settings, beta=float(os.environ["DTR1_BETA"]))
        return settings


def _require(data: dict, key: str, kind: type, path: Optional[str] = None):
    path = path or key
    if key not in data:
        raise _BadRequest(path, "missing required field")
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise _BadRequest(path, f"expected {kind.__name__}")
    return value


def _parse_reward_config(raw: Optional[dict], settings: ServiceSettings) -> RewardConfig:
    base = {
        "alpha": settings.alpha,
        "beta": settings.beta,
        "iou_threshold": settings.iou_threshold,
        "exec_penalty_mode": ExecPenaltyMode.ANY_FAILURE,
    }
    if raw is not None:
        if not isinstance(raw, dict):
            raise _BadRequest("config", "expected object")
        for key in ("alpha", "beta", "iou_threshold"):
            if key in raw:
                value = raw[key]
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise _BadRequest(f"config.{key}", "expected number")
                base[key] = float(value)
        if "exec_penalty_mode" in raw:
            try:
                base["exec_penalty_mode"] = ExecPenaltyMode(raw["exec_penalty_mode"])
            except ValueError as err:
                raise _BadRequest("config.exec_penalty_mode", str(err)) from err
        if "seg_frame_rule" in raw:
            try:
                base["seg_frame_rule"] = SegFrameRule(raw["seg_frame_rule"])
            except ValueError as err:
                raise _BadRequest("config.seg_frame_rule", str(err)) from err
    try:
        return RewardConfig(**base)
    except ValueError as err:
        raise _BadRequest("config", str(err)) from err


def _parse_ground_truth(raw, base_dir: Optional[Path]) -> GroundTruth:
    if not isinstance(raw, dict):
        raise _BadRequest("ground_truth", "expected object")
    if "manifest" in raw:
        manifest = Path(raw["manifest"])
        if base_dir is not None and not manifest.is_absolute():
            manifest = base_dir / manifest
        if not manifest.exists():
            raise _NotFound(f"ground truth manifest not found: {manifest}")
        try:
            return GroundTruth.from_manifest(manifest)
        except (ValueError, KeyError, OSError) as err:
            raise _BadRequest("ground_truth.manifest", str(err)) from err
    try:
        return GroundTruth.from_dict(raw, base_dir=base_dir)
    except FileNotFoundError as err:
        raise _NotFound(str(err)) from err
    except (ValueError, KeyError, TypeError) as err:
        raise _BadRequest("ground_truth", str(err)) from err


def _parse_replay(raw, rollout_text: str) -> Optional[list[ExecOutcome]]:
    if raw is None:
        return None
    if not isinstance(raw, list):
        raise _BadRequest("exec_replay", "expected list")
    outcomes = []
    for i, item in enumerate(raw):
        try:
            outcomes.append(ExecOutcome.from_wire(item))
        except (ValueError, KeyError, TypeError) as err:
            raise _BadRequest(f"exec_replay[{i}]", str(err)) from err
    execute_count = len(scan_tag_pairs(rollout_text, TagKind.EXECUTE))
    if len(outcomes) != execute_count:
        raise _BadRequest(
            "exec_replay",
            f"{len(outcomes)} outcomes for {execute_count} execute blocks",
        )
    return outcomes


def _mask_dict(rollout_text: str) -> Optional[dict]:
    try:
        return training_mask(parse_rollout(rollout_text)).to_dict()
    except RolloutParseError:
        return None


def build_score_response(
    rollout_text: str,
    gt: GroundTruth,
    cfg: RewardConfig,
    deps: ScoreDeps,
) -> dict:
    """The canonical score-response body; shared by handler, CLI, and tests."""
    diagnostics: list[str] = []
    breakdown = score(rollout_text, gt, cfg, deps, diagnostics=diagnostics)
    return {
        "schema": API_SCHEMA,
        "breakdown": breakdown.to_record(),
        "mask": _mask_dict(rollout_text),
        "diagnostics": diagnostics,
    }


def _canonical_response(body: dict, status_code: int = 200) -> Response:
    return Response(
        content=canonical_json(body),
        status_code=status_code,
        media_type="application/json",
    )


def create_app(settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = (settings or ServiceSettings()).with_env()
    registry = (
        ModelRegistry.load(settings.registry_path)
        if settings.registry_path
        else default_registry()
    )
    judge = (
        RemoteJudgeClient(settings.judge_url)
        if settings.judge_url
        else MockJudge(threshold=settings.judge_threshold)
    )
    registry_hash = hashlib.sha256(registry.canonical_text().encode("utf-8")).hexdigest()
    app = FastAPI(title="dtr1 scoring service", version=__version__)

    @app.exception_handler(_BadRequest)
    async def bad_request_handler(_request: Request, exc: _BadRequest):
        return JSONResponse(
            status_code=400,
            content={"schema": API_SCHEMA, "error": {"path": exc.path, "message": exc.message}},
        )

    @app.exception_handler(_NotFound)
    async def not_found_handler(_request: Request, exc: _NotFound):
        return JSONResponse(
            status_code=404,
            content={"schema": API_SCHEMA, "error": {"path": "ground_truth", "message": str(exc)}},
        )

    async def _body(request: Request) -> dict:
        try:
            data = await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError) as err:
            raise _BadRequest("$", f"invalid JSON body: {err}") from err
        if not isinstance(data, dict):
            raise _BadRequest("$", "body must be a JSON object")
        return data

    @app.post("/v1/score")
    async def score_endpoint(request: Request):
        data = await _body(request)
        rollout_text = _require(data, "rollout_text", str)
        gt = _parse_ground_truth(data.get("ground_truth"), base_dir=None)
        cfg = _parse_reward_config(data.get("config"), settings)
        replay = _parse_replay(data.get("exec_replay"), rollout_text)
        deps = ScoreDeps(registry=registry, judge=judge, exec_replay=replay)
        try:
            body = build_score_response(rollout_text, gt, cfg, deps)
        except JudgeTransportError as err:
            return JSONResponse(
                status_code=502,
                content={
                    "schema": API_SCHEMA,
                    "error": {"path": "judge", "message": str(err)},
                },
            )
        return _canonical_response(body)

    @app.post("/v1/validate-plan")
    async def validate_plan_endpoint(request: Request):
        data = await _body(request)
        plan_text = _require(data, "plan", str)
        reg = registry
        if data.get("registry") is not None:
            raw = data["registry"]
            try:
                reg = (
                    ModelRegistry.load(raw)
                    if isinstance(raw, str)
                    else ModelRegistry.from_dict(raw)
                )
            except (ValueError, KeyError, OSError, TypeError) as err:
                raise _BadRequest("registry", str(err)) from err
        verdict = validate_plan_text(plan_text, reg)
        return _canonical_response({"schema": API_SCHEMA, "verdict": verdict.to_dict()})

    @app.post("/v1/mask")
    async def mask_endpoint(request: Request):
        data = await _body(request)
        rollout_text = _require(data, "rollout_text", str)
        try:
            mask = training_mask(parse_rollout(rollout_text))
        except RolloutParseError as err:
            raise _BadRequest("rollout_text", str(err)) from err
        return _canonical_response({"schema": API_SCHEMA, "mask": mask.to_dict()})

    @app.get("/v1/registry")
    async def registry_endpoint():
        return _canonical_response({"schema": API_SCHEMA, "registry": registry.to_dict()})

    @app.get("/healthz")
    async def healthz():
        return _canonical_response(
            {
                "schema": API_SCHEMA,
                "ok": True,
                "version": __version__,
                "registry_hash": registry_hash,
            }
        )

    return app
