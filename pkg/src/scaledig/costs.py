"""Affine resource-cost models for scaling scene collections.

Two-stage training amortizes a one-time cost: total time to reach N scenes
is t(N) = t1 + (N - N1) * tau and memory m(N) = m1 + (N - N1) * mu, against
a per-scene baseline N * tau_rgb / N * mu_rgb. The fixture constants
reproduce the published arithmetic and anchor the unit conventions
(minutes; MB = 2^20 bytes, under which a 3*64^2*32 float32 plane set is
exactly 1.50 MB).
"""

from dataclasses import dataclass

MB = float(2 ** 20)

PAPER_T1_MIN = 31.2 * 60.0
PAPER_TAU = 2.23
PAPER_M1_MB = 361.0
PAPER_MU_MB = 0.48
PAPER_N1 = 500
PAPER_TAU_RGB = 16.02
PAPER_MU_RGB = 1.50


@dataclass
class CostModel:
    """One-time stage-1 cost plus per-scene stage-2 slope."""

    t1: float
    tau: float
    m1: float
    mu: float
    n1: int

    def __post_init__(self):
        for name in ("t1", "tau", "m1", "mu", "n1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def paper_fixtures() -> tuple[CostModel, float, float]:
    """(model, tau_rgb, mu_rgb) with the published constants."""
    model = CostModel(t1=PAPER_T1_MIN, tau=PAPER_TAU, m1=PAPER_M1_MB,
                      mu=PAPER_MU_MB, n1=PAPER_N1)
    return model, PAPER_TAU_RGB, PAPER_MU_RGB


def _check_n(model: CostModel, n: float, extrapolate: bool) -> None:
    if not extrapolate and n < model.n1:
        raise ValueError(f"N={n} is below the stage-1 scene count "
                         f"{model.n1}; the model starts there")


def cost_time(model: CostModel, n: float, extrapolate: bool = False) -> float:
    """Total training minutes to reach N scenes."""
    _check_n(model, n, extrapolate)
    return model.t1 + (n - model.n1) * model.tau


def cost_mem(model: CostModel, n: float, extrapolate: bool = False) -> float:
    """Total stored MB to reach N scenes."""
    _check_n(model, n, extrapolate)
    return model.m1 + (n - model.n1) * model.mu


def baseline_time(tau_rgb: float, n: float) -> float:
    """Per-scene baseline: N scenes cost N * tau_rgb minutes."""
    return n * tau_rgb


def baseline_mem(mu_rgb: float, n: float) -> float:
    return n * mu_rgb


def crossover(model: CostModel, tau_rgb: float) -> float:
    """Scene count where the amortized model beats the per-scene baseline.

    Root of t1 + (N - N1) tau = N tau_rgb; beyond it the affine model is
    strictly cheaper. Requires tau < tau_rgb, otherwise no crossover exists.
    """
    if tau_rgb <= model.tau:
        raise ValueError("baseline slope must exceed the per-scene slope")
    return (model.t1 - model.n1 * model.tau) / (tau_rgb - model.tau)


def bytes_to_mb(nbytes: float) -> float:
    return nbytes / MB


def fit_cost_model(reports) -> CostModel:
    """Instantiate the cost symbols from measured training reports.

    Stage-1 reports contribute their totals to t1/m1; stage-2 reports
    contribute per-scene means to tau/mu.
    """
    stage1 = [r for r in reports if r.stage == "stage1"]
    stage2 = [r for r in reports if r.stage == "stage2"]
    if not stage1 or not stage2:
        raise ValueError("need at least one stage-1 and one stage-2 report")
    t1 = sum(r.wall_minutes for r in stage1)
    m1 = sum(r.stored_mb for r in stage1)
    n1 = sum(r.n_scenes for r in stage1)
    n2 = sum(r.n_scenes for r in stage2)
    tau = sum(r.wall_minutes for r in stage2) / n2
    mu = sum(r.stored_mb for r in stage2) / n2
    return CostModel(t1=t1, tau=tau, m1=m1, mu=mu, n1=n1)
