"""
Scenario router.
Lists shipped scenarios and runs scenarios with the modal or the baseline controller.
"""

import asyncio
from typing import Optional

from fastapi import APIRouter, Depends, HTTPException, status

from config import Settings, get_settings
from models.api import ScenarioListResponse, ScenarioRunRequest, ScenarioRunResponse, ShippedRunRequest
from models.scenario import Scenario
from routers.errors import to_http_exception
from services.baseline_service import run_baseline
from services.exceptions import DeformationControlError
from services.export_service import summarize
from services.scenario_service import SCENARIO_SUFFIX, list_scenarios, load_scenario, run_scenario

router = APIRouter()


async def _execute(scenario: Scenario, baseline: bool, seed: Optional[int], include_rows: bool) -> ScenarioRunResponse:
    runner = run_baseline if baseline else run_scenario
    try:
        record = await asyncio.to_thread(runner, scenario, seed)
    except DeformationControlError as e:
        raise to_http_exception(e)
    return ScenarioRunResponse(
        summary=summarize(record),
        s_star=record.s_star,
        rows=record.rows if include_rows else [],
    )


@router.get("/", response_model=ScenarioListResponse)
async def get_scenarios(settings: Settings = Depends(get_settings)):
    """Names of the shipped scenarios."""
    return ScenarioListResponse(scenarios=[path.stem for path in list_scenarios(settings.scenario_dir)])


@router.post("/run", response_model=ScenarioRunResponse)
async def run_inline_scenario(request: ScenarioRunRequest):
    """Run a scenario supplied in the request body."""
    return await _execute(request.scenario, request.baseline, request.seed, request.include_rows)


@router.post("/{name}/run", response_model=ScenarioRunResponse)
async def run_shipped_scenario(
    name: str,
    request: Optional[ShippedRunRequest] = None,
    settings: Settings = Depends(get_settings),
):
    """Run a shipped scenario by name."""
    request = request or ShippedRunRequest()
    path = settings.scenario_dir / f"{name}{SCENARIO_SUFFIX}"
    if not path.is_file():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Scenario '{name}' not found"
        )
    try:
        scenario = load_scenario(path)
    except DeformationControlError as e:
        raise to_http_exception(e)
    return await _execute(scenario, request.baseline, request.seed, request.include_rows)
