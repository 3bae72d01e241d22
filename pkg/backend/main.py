"""
Modal Deformation Control - Main FastAPI Application
HTTP entry point: scenario runs, base-mesh generation and modal analysis.
"""

import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from config import configure_logging, get_settings
from database.modal_cache import get_modal_cache
from routers import meshes, scenarios

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager for startup and shutdown events."""
    configure_logging()
    get_modal_cache().initialize()
    logger.info("Backend startup complete")
    yield
    cache = get_modal_cache()
    logger.info(f"Shutting down; modal cache served {cache.hits} hits and {cache.misses} misses")


settings = get_settings()

app = FastAPI(
    title=settings.app_name,
    description="Model-free 3D shape control of deformable objects with modal deformation features",
    version="1.0.0",
    lifespan=lifespan
)

# CORS middleware configuration
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(scenarios.router, prefix="/api/scenarios", tags=["Scenarios"])
app.include_router(meshes.router, prefix="/api/meshes", tags=["Meshes"])


@app.get("/")
async def root():
    """Root endpoint for health check."""
    return {"message": f"{settings.app_name} API", "status": "running"}


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy", "service": settings.app_name}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
