"""Robust consumption-investment under g-expectations, solved through BSDEs."""

__version__ = "0.1.0"

from .bsde import BSDESolution, Driver, RegressionBackend, TreeBackend, linear_bsde_oracle, solve_backward
from .errors import (
    BackendError,
    ConfigurationError,
    DomainError,
    GeumError,
    InadmissibleStrategyError,
    NumericalDegeneracyError,
    QuadraticBlowupError,
    SimulationBlowupError,
    UsageError,
)
from .generators import Generator, make_kappa_ignorance, make_linear, make_zero, validate_generator
from .gexpectation import GExpectation, Payoff, axiom_suite, default_payoffs, girsanov_grid
from .market import (
    IncomeSpec,
    MarketModel,
    PathEnsemble,
    Profile,
    TimeGrid,
    load_ensemble,
    market_price_of_risk,
    save_ensemble,
    simulate_ensemble,
    wealth_absolute,
    wealth_fractional,
)
from .pointwise import (
    ConstraintSpec,
    ConsumptionSet,
    InvestmentSet,
    PointwiseSolution,
    inf_consumption,
    inf_investment_log,
    inf_investment_power,
    sup_investment_exp,
)
from .utility import HFunction, UtilityProblem, h_exponential, h_log
from .verify import (
    DriftReport,
    StrategyPair,
    compare,
    drift_field,
    extract_optimal,
    perturbation_battery,
    value_of,
)
