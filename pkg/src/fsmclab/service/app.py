"""FastAPI wiring: one POST endpoint per CLI subcommand, plus /health.

Package errors map to structured JSON: validation-flavored ones become 400,
runtime ones 500, always as {"error": <class name>, "detail": <message>}.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FsmclabError
from ..harness import parse_config
from . import handlers, models


def _config_from_body(body: models.ConfigBody):
    return parse_config(body.model_dump(exclude_none=True))


def _status_for(exc: FsmclabError) -> int:
    return 400 if isinstance(exc, (ValueError, OverflowError, IndexError)) else 500


def create_app() -> FastAPI:
    app = FastAPI(title="fsmclab", version=__version__)

    @app.exception_handler(FsmclabError)
    async def _package_error(request: Request, exc: FsmclabError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/validate", response_model=models.ValidateResponse)
    def validate(req: models.ValidateRequest):
        return handlers.handle_validate(_config_from_body(req.config))

    @app.post("/capacity", response_model=models.CapacityResponse)
    def capacity(req: models.CapacityRequest):
        return handlers.handle_capacity(_config_from_body(req.config))

    @app.post("/alloc", response_model=models.AllocResponse)
    def alloc(req: models.AllocRequest):
        return handlers.handle_alloc(_config_from_body(req.config))

    @app.post("/simulate", response_model=models.TableResponse)
    def simulate(req: models.SimulateRequest):
        return handlers.handle_simulate(_config_from_body(req.config))

    @app.post("/pe-curve", response_model=models.PeCurveResponse)
    def pe_curve(req: models.PeCurveRequest):
        return handlers.handle_pe_curve(_config_from_body(req.config),
                                        n_paths=req.n_paths, mode=req.mode,
                                        unbiased=req.unbiased)

    @app.post("/growth", response_model=models.GrowthResponse)
    def growth(req: models.GrowthRequest):
        return handlers.handle_growth(_config_from_body(req.config),
                                      horizon=req.horizon, seeds=req.seeds)

    @app.post("/mss", response_model=models.MssResponse)
    def mss(req: models.MssRequest):
        return handlers.handle_mss(_config_from_body(req.config),
                                   factors=req.factors, horizon=req.horizon,
                                   n_paths=req.n_paths)

    @app.post("/cheap-control", response_model=models.CheapControlResponse)
    def cheap_control(req: models.CheapControlRequest):
        return handlers.handle_cheap_control(_config_from_body(req.config),
                                             factors=req.factors,
                                             horizon=req.horizon,
                                             n_paths=req.n_paths)

    @app.post("/reproduce-paper-example", response_model=models.ReproduceResponse)
    def reproduce(req: models.ReproduceRequest):
        return handlers.handle_reproduce(trials=req.trials, workers=req.workers)

    return app


app = create_app()
