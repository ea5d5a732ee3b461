from pydantic_settings import BaseSettings, SettingsConfigDict
import os
from dotenv import load_dotenv

load_dotenv()


class Settings(BaseSettings):
    # Probability machinery
    PROB_TOLERANCE: float = float(os.getenv("BBCOMM_PROB_TOLERANCE", "1e-12"))
    TYPICALITY_SLACK: float = 1e-12

    # Solver settings
    DEFAULT_TOL: float = float(os.getenv("BBCOMM_DEFAULT_TOL", "1e-4"))  # bits
    DEFAULT_EPS: float = float(os.getenv("BBCOMM_DEFAULT_EPS", "0.05"))
    SOLVER_MAX_ITERATIONS: int = 20000
    SOLVER_PATIENCE: int = 50
    SLOPE_MAX: float = 1e3
    BISECTION_STEPS: int = 80

    # Resource guards
    MEMORY_GUARD: int = int(os.getenv("BBCOMM_MEMORY_GUARD", str(2**26)))  # codewords * letters
    E2_STATE_BUDGET: int = 2**24

    # Monte Carlo settings
    CI_LEVEL: float = 0.95
    MIN_TRIALS: int = 100
    WORKERS: int = int(os.getenv("BBCOMM_WORKERS", "1"))

    # Multi-user limits
    MAX_USERS: int = 6
    MAX_PAIRS: int = 12

    # Output
    PLOT_FORMAT: str = os.getenv("BBCOMM_PLOT_FORMAT", "png")
    SCHEMA_VERSION: int = 1

    # Logging
    LOG_LEVEL: str = os.getenv("BBCOMM_LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("BBCOMM_LOG_DIR", "logs")
    LOG_TO_FILE: bool = os.getenv("BBCOMM_LOG_TO_FILE", "False").lower() == "true"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="BBCOMM_", extra="ignore")


settings = Settings()
