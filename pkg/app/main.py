from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import uvicorn

from app.routers import closed_form, datasets, state_evolution
from app.config import settings


app = FastAPI(
    title="glmlab API",
    description="ML-VAMP learning of GLMs with state-evolution and closed-form test-error predictions",
    version="1.0.0",
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(state_evolution.router, prefix=f"{settings.api_prefix}/se", tags=["state-evolution"])
app.include_router(closed_form.router, prefix=f"{settings.api_prefix}/closed-form", tags=["closed-form"])
app.include_router(datasets.router, prefix=f"{settings.api_prefix}/datasets", tags=["datasets"])


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": "glmlab API",
        "version": "1.0.0",
        "docs": "/docs"
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "project": settings.project_name}


if __name__ == "__main__":
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=settings.debug
    )
