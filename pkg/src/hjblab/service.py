"""FastAPI service wrapping the laboratory: clients post a study command with
a configuration and receive the check outcomes, every artifact file, and the
run manifest.  The service holds no mutable state; identical requests produce
identical exact-mode artifacts.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, apply_overrides, parse_config, schema_text
from .problem import BUILTIN_INSTANCES
from .studies import COMMANDS, StudyError, emit_plotdata, execute


class RunRequest(BaseModel):
    command: str
    config_text: str = ""
    overrides: dict[str, str] = Field(default_factory=dict)
    seed: int | None = None
    workers: int | None = None


class CheckOut(BaseModel):
    name: str
    passed: bool
    measured: float
    bound: float


class ArtifactOut(BaseModel):
    name: str
    content: str


class RunResponse(BaseModel):
    command: str
    passed: bool
    checks: list[CheckOut]
    artifacts: list[ArtifactOut]
    manifest: dict


class PlotdataRequest(BaseModel):
    csv_text: str


class PlotdataResponse(BaseModel):
    csv_text: str


class InfoResponse(BaseModel):
    version: str
    commands: list[str]
    instances: list[str]
    config_schema: str


app = FastAPI(title="hjblab", version=__version__,
              description="Path-dependent stochastic control laboratory")


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.get("/info", response_model=InfoResponse)
def info() -> InfoResponse:
    return InfoResponse(version=__version__, commands=list(COMMANDS),
                        instances=list(BUILTIN_INSTANCES),
                        config_schema=schema_text())


@app.post("/runs", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    if req.command not in COMMANDS:
        raise HTTPException(status_code=400,
                            detail=f"unknown command {req.command!r}")
    try:
        cfg = parse_config(req.config_text)
        cfg = apply_overrides(cfg, req.overrides)
        if req.seed is not None:
            cfg.seed = req.seed
        if req.workers is not None:
            cfg.workers = req.workers
        result, files, manifest = execute(req.command, cfg)
    except (ConfigError, StudyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return RunResponse(
        command=result.command,
        passed=result.passed,
        checks=[CheckOut(name=c.name, passed=c.passed, measured=c.measured,
                         bound=c.bound) for c in result.checks],
        artifacts=[ArtifactOut(name=name, content=content)
                   for name, content in sorted(files.items())],
        manifest=manifest,
    )


@app.post("/plotdata", response_model=PlotdataResponse)
def plotdata(req: PlotdataRequest) -> PlotdataResponse:
    try:
        return PlotdataResponse(csv_text=emit_plotdata(req.csv_text))
    except Exception as exc:
        raise HTTPException(status_code=422, detail=f"malformed CSV: {exc}") from exc
