from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import logging
import os
from datetime import datetime
from app.config import settings
from app.models.schemas import HealthResponse
from app.routes import routing
from app.services.engine import Engine
from app.utils.logger import setup_logging

# Configurar logging
setup_logging()
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Gerencia ciclo de vida da aplicação"""
    # Inicialização
    logger.info("=" * 60)
    logger.info(f"Iniciando {settings.APP_NAME} API")
    logger.info(f"Ambiente: {settings.ENVIRONMENT}")
    logger.info(f"Configuração do motor: {settings.ENGINE_CONFIG_PATH}")
    logger.info("=" * 60)

    try:
        engine = Engine.from_path(settings.ENGINE_CONFIG_PATH)
        routing.set_engine(engine)
        logger.info(
            f"Motor carregado: {engine.pool.N} modelos, "
            f"scorer {'carregado' if engine.scorer else 'ausente'}"
        )
    except Exception as e:
        logger.error(f"Erro ao carregar motor: {e}")

    yield

    # Shutdown
    logger.info(f"Desligando {settings.APP_NAME} API...")
    routing.set_engine(None)

# Criar aplicação FastAPI
app = FastAPI(
    title=f"{settings.APP_NAME} API",
    description="Roteamento em camadas de múltiplos LLMs com scorer e mistura de juízes",
    version="1.0.0",
    lifespan=lifespan,
    docs_url="/api/docs",
    redoc_url="/api/redoc"
)

# Configurar CORS
origins = settings.CORS_ORIGINS.split(",") if "," in settings.CORS_ORIGINS else ["*"]
app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Registrar rotas da API
app.include_router(routing.router, prefix=settings.API_PREFIX, tags=["routing"])


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint"""
    engine = routing._engine
    return HealthResponse(
        status="healthy" if engine is not None else "degraded",
        service="moarouter-api",
        environment=settings.ENVIRONMENT,
        timestamp=datetime.now().isoformat(),
        scorer_loaded=engine is not None and engine.scorer is not None
    )


@app.get("/api")
async def api_info():
    """API information"""
    return {
        "name": f"{settings.APP_NAME} API",
        "description": "Roteamento em camadas de múltiplos LLMs",
        "version": "1.0.0",
        "endpoints": {
            "pool": "/api/pool",
            "score": "/api/score",
            "route": "/api/route"
        }
    }

if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=int(os.getenv("PORT", 8000)),
        reload=settings.ENVIRONMENT == "development"
    )
