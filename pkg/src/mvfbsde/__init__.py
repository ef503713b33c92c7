"""Deep Picard solver for McKean-Vlasov FBSDEs with common noise."""
from .errors import (
    CheckpointError,
    ConfigurationError,
    MVFBSDEError,
    SimulationError,
    TrainingError,
)
from .models import (
    GrowthModelParams,
    SystemicRiskParams,
    analytic_solution,
    build_model,
    growth_model,
    quantile_interaction_model,
    systemic_risk_model,
)
from .orchestrator import RunConfig, run, sample_after_training, soft_update
from .solvers import Networks, TrainingPlan
from .stochastics import NoisePair, PathBatch, TimeGrid, sample_noise

__version__ = "0.1.0"
