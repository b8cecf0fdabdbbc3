from pydantic.v1 import BaseSettings


class Settings(BaseSettings):
    class Config:
        env_file = ['.env', '../.env', '../../.env', '../../../.env']
        env_file_encoding = 'utf-8'
        extra = 'ignore'

    APP_NAME: str = "chemostat"
    LOG_LEVEL: str = "INFO"
    WORKERS: int = 4
    OUTPUT_DIR: str = "out"

    # Deterministic integration
    ODE_RTOL: float = 1e-9
    ODE_ATOL_FRACTION: float = 1e-9  # absolute tolerance as a fraction of z_f
    LINE_THETA_TOL: float = 1e-9

    # Stochastic integration
    SDE_DT: float = 1e-3
    EXTINCTION_FRACTION: float = 1e-6  # extinct below this fraction of z_f

    # Asymptotics
    SINGULARITY_GUARD: float = 1e-2

    # Fokker-Planck
    FP_GRID_H: float = 0.01
    FP_DT: float = 0.05
    FP_SOLVER_RTOL: float = 1e-10
    FP_CI_HORIZON: float = 500.0
    FP_FULL_HORIZON: float = 7000.0
    FP_CLIP_TOLERANCE: float = 1e-12


SETTINGS = Settings()
