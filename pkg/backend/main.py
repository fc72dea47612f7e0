"""FastAPI backend for the SpiralLab local application."""

from __future__ import annotations

import logging
import math
import time
from contextlib import asynccontextmanager

import numpy as np
import uvicorn
from config import RuntimeSettings
from diophantine import (
    ApproximatePair,
    SearchExhaustedError,
    dirichlet_solve,
    multiplicative_solve,
)
from experiments import RUN_ERRORS, ExperimentOutcome, execute
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from geometry import DimensionError
from lattice import (
    EnumerationLimitError,
    LatticeBasis,
    PrecisionError,
    enumerate_in_ball,
    from_alpha,
)
from models import (
    EXPERIMENT_NAMES,
    APIError,
    ApplicationMetadata,
    ApproximatePairModel,
    ApproximationRequest,
    ApproximationResponse,
    CellValue,
    EnumerationRequest,
    EnumerationResponse,
    ErrorResponse,
    ExperimentConfig,
    ExperimentResponse,
    LatticePointModel,
    ReadinessResponse,
    RunSummary,
    ServiceResponse,
    ValidationIssue,
)
from starlette.concurrency import run_in_threadpool

logger = logging.getLogger(__name__)

CAPABILITIES = [
    "lattice-enumeration",
    "spherical-averages",
    "spiraling-ratios",
    "cusp-divergence",
    "diophantine-search",
    "reproducible-experiments",
]
MAX_SEARCH_DENOMINATORS = 2_000_000
MAX_EXPERIMENT_SAMPLES = 50_000
MAX_VOLUME_SAMPLES = 5_000_000
FILE_SOURCES = {"alpha-file", "basis-file"}


class APIException(Exception):
    def __init__(self, status_code: int, code: str, message: str) -> None:
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message


def error_response(
    *,
    status_code: int,
    code: str,
    message: str,
    details: list[ValidationIssue] | None = None,
) -> JSONResponse:
    payload = ErrorResponse(error=APIError(code=code, message=message, details=details))
    return JSONResponse(
        status_code=status_code,
        content=payload.model_dump(by_alias=True, exclude_none=True),
    )


def search_size(Q: float, n: int) -> int:
    """Denominators the multiplicative search walks; it dominates the Dirichlet one."""
    side = 2 * math.floor(Q**n) + 1
    return side**n


def pair_model(pair: ApproximatePair) -> ApproximatePairModel:
    return ApproximatePairModel(
        q=list(pair.q), p=list(pair.p), errors=list(pair.errors), height=pair.height
    )


def cell(value: object) -> CellValue:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return str(value)


def experiment_response(
    config: ExperimentConfig, outcome: ExperimentOutcome, wall_seconds: float
) -> ExperimentResponse:
    summary = RunSummary(
        experiment=config.experiment,
        passed=outcome.passed,
        rows=len(outcome.rows),
        seed=config.seed,
        wall_seconds=wall_seconds,
        checks=outcome.checks,
    )
    return ExperimentResponse(
        summary=summary,
        columns=list(outcome.columns),
        rows=[[cell(value) for value in row] for row in outcome.rows],
    )


def create_app(settings: RuntimeSettings | None = None) -> FastAPI:
    runtime = settings or RuntimeSettings.from_env()

    @asynccontextmanager
    async def lifespan(application: FastAPI):
        application.state.ready = True
        yield
        application.state.ready = False

    application = FastAPI(
        title="SpiralLab API",
        version=runtime.application_version,
        lifespan=lifespan,
    )
    application.state.runtime_settings = runtime
    application.state.ready = False

    @application.exception_handler(APIException)
    async def handle_api_exception(
        _request: Request, exception: APIException
    ) -> JSONResponse:
        return error_response(
            status_code=exception.status_code,
            code=exception.code,
            message=exception.message,
        )

    @application.exception_handler(EnumerationLimitError)
    async def handle_enumeration_limit(
        _request: Request, exception: EnumerationLimitError
    ) -> JSONResponse:
        return error_response(
            status_code=413,
            code="enumeration_limit",
            message=f"{exception} Lower the radius or raise the point cap.",
        )

    @application.exception_handler(RequestValidationError)
    async def handle_validation_exception(
        _request: Request, exception: RequestValidationError
    ) -> JSONResponse:
        details = [
            ValidationIssue(
                location=list(error["loc"]),
                message=error["msg"],
                type=error["type"],
            )
            for error in exception.errors()
        ]
        return error_response(
            status_code=422,
            code="validation_error",
            message="Request validation failed.",
            details=details,
        )

    @application.exception_handler(Exception)
    async def handle_unexpected_exception(
        _request: Request, exception: Exception
    ) -> JSONResponse:
        logger.exception("Unhandled error", exc_info=exception)
        return error_response(
            status_code=500,
            code="internal_error",
            message="The SpiralLab API could not complete the request. "
            "Check the terminal and retry.",
        )

    @application.get("/", response_model=ServiceResponse)
    async def root() -> ServiceResponse:
        return ServiceResponse(
            status="ok",
            service=runtime.service_name,
            version=runtime.application_version,
        )

    @application.get("/health", response_model=ServiceResponse)
    async def health() -> ServiceResponse:
        return ServiceResponse(
            status="ok",
            service=runtime.service_name,
            version=runtime.application_version,
        )

    @application.get("/metadata", response_model=ApplicationMetadata)
    async def metadata() -> ApplicationMetadata:
        return ApplicationMetadata(
            schema_version=1,
            id="spirallab",
            name="SpiralLab",
            descriptor="Local geometry-of-numbers lab",
            version=runtime.application_version,
            api_url=runtime.api_url,
            health_url=f"{runtime.api_url}/health",
            readiness_url=f"{runtime.api_url}/ready",
            network_mode=runtime.network_mode,
            experiments=list(EXPERIMENT_NAMES),
            capabilities=CAPABILITIES,
        )

    @application.get("/ready", response_model=ReadinessResponse)
    async def ready(request: Request) -> ReadinessResponse | JSONResponse:
        is_ready = bool(request.app.state.ready)
        response = ReadinessResponse(
            status="ready" if is_ready else "not_ready",
            service=runtime.service_name,
            version=runtime.application_version,
            capabilities=CAPABILITIES if is_ready else [],
        )
        if is_ready:
            return response
        return JSONResponse(
            status_code=503,
            content=response.model_dump(by_alias=True),
        )

    def request_lattice(request: EnumerationRequest) -> LatticeBasis:
        try:
            if request.basis is not None:
                return LatticeBasis(np.asarray(request.basis, dtype=float))
            if request.alpha is not None:
                return from_alpha(request.alpha)
            assert request.dimension is not None
            return LatticeBasis.identity(request.dimension)
        except DimensionError as error:
            raise APIException(422, "invalid_lattice", str(error)) from None

    @application.post(
        "/api/enumerate",
        response_model=EnumerationResponse,
        responses={
            413: {"model": ErrorResponse},
            422: {"model": ErrorResponse},
        },
    )
    async def enumerate_endpoint(request: EnumerationRequest) -> EnumerationResponse:
        lattice = request_lattice(request)
        try:
            points = await run_in_threadpool(
                enumerate_in_ball,
                lattice,
                request.radius,
                point_cap=request.max_points,
            )
        except PrecisionError as error:
            raise APIException(422, "precision_error", str(error)) from None
        return EnumerationResponse(
            success=True,
            count=len(points),
            points=[
                LatticePointModel(
                    coeffs=list(point.coeffs),
                    coords=list(point.coords),
                    norm=point.norm,
                )
                for point in points
            ],
        )

    def approximate(request: ApproximationRequest) -> ApproximationResponse:
        alpha = np.asarray(request.alpha, dtype=float)
        return ApproximationResponse(
            success=True,
            dirichlet=pair_model(dirichlet_solve(alpha, request.Q)),
            multiplicative=pair_model(multiplicative_solve(alpha, request.Q)),
        )

    @application.post(
        "/api/approximates",
        response_model=ApproximationResponse,
        responses={
            413: {"model": ErrorResponse},
            422: {"model": ErrorResponse},
        },
    )
    async def approximates_endpoint(
        request: ApproximationRequest,
    ) -> ApproximationResponse:
        n = len(request.alpha[0])
        if search_size(request.Q, n) > MAX_SEARCH_DENOMINATORS:
            raise APIException(
                413,
                "search_too_large",
                "The denominator search is too large; lower Q or use the lab "
                "command line.",
            )
        try:
            return await run_in_threadpool(approximate, request)
        except SearchExhaustedError as error:
            raise APIException(422, "search_exhausted", str(error)) from None

    def run_experiment(config: ExperimentConfig) -> ExperimentResponse:
        started = time.perf_counter()
        outcome = execute(config, runtime)
        return experiment_response(config, outcome, time.perf_counter() - started)

    @application.post(
        "/api/experiments",
        response_model=ExperimentResponse,
        responses={
            413: {"model": ErrorResponse},
            422: {"model": ErrorResponse},
        },
    )
    async def experiments_endpoint(config: ExperimentConfig) -> ExperimentResponse:
        if config.lattice in FILE_SOURCES:
            raise APIException(
                422,
                "file_source_unavailable",
                "Lattice files are read by the lab command line only.",
            )
        if (
            config.samples > MAX_EXPERIMENT_SAMPLES
            or config.volume_samples > MAX_VOLUME_SAMPLES
        ):
            raise APIException(
                413,
                "samples_too_large",
                f"The API runs at most {MAX_EXPERIMENT_SAMPLES} samples and "
                f"{MAX_VOLUME_SAMPLES} volume samples; use the lab command line "
                "for larger runs.",
            )
        try:
            return await run_in_threadpool(run_experiment, config)
        except EnumerationLimitError:
            raise
        except RUN_ERRORS as error:
            raise APIException(422, "experiment_error", str(error)) from None

    return application


SETTINGS = RuntimeSettings.from_env()
app = create_app(SETTINGS)


if __name__ == "__main__":
    uvicorn.run(
        app,
        host=SETTINGS.api_host,
        port=SETTINGS.api_port,
    )
