"""Training configuration: defaults, JSON round trip, variant projection.

Field names mirror the hyperparameter tables: scene counts n1/n2, plane
shape (f_mic, f_mac, m, resolution), loss weights, and one optimization
block per phase (warm-up, stage-1 training, latent supervision, RGB
alignment) carrying batch size, per-group learning rates, and scheduler.
"""

import json
from dataclasses import asdict, dataclass, field, replace

from .optim import ScheduleSpec
from .triplane import VARIANTS

LR_ROLES = ("micro", "renderer", "coeffs", "basis", "encoder", "decoder")


@dataclass
class PhaseOpt:
    """One phase's optimization block."""

    batch_size: int
    lr: dict
    scheduler: str = "constant"
    decay_factor: float = 1.0
    milestones: tuple = ()

    def __post_init__(self):
        self.milestones = tuple(self.milestones)
        unknown = set(self.lr) - set(LR_ROLES)
        if unknown:
            raise ValueError(f"unknown learning-rate roles {sorted(unknown)}")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay factor must lie in (0, 1]")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")
        ScheduleSpec(self.scheduler, self.decay_factor, self.milestones)

    def schedule(self) -> ScheduleSpec:
        return ScheduleSpec(self.scheduler, self.decay_factor,
                            self.milestones)


def _default_warmup() -> PhaseOpt:
    return PhaseOpt(batch_size=512,
                    lr={"micro": 1e-2, "renderer": 1e-2,
                        "coeffs": 1e-2, "basis": 1e-2},
                    scheduler="multistep", decay_factor=0.3,
                    milestones=(20, 40))


def _default_stage1() -> PhaseOpt:
    return PhaseOpt(batch_size=32,
                    lr={"encoder": 1e-4, "decoder": 1e-4, "micro": 1e-4,
                        "renderer": 1e-4, "coeffs": 1e-2, "basis": 1e-2},
                    scheduler="multistep", decay_factor=0.3,
                    milestones=(20, 40))


def _default_ls() -> PhaseOpt:
    return PhaseOpt(batch_size=32,
                    lr={"micro": 1e-2, "renderer": 1e-2,
                        "coeffs": 1e-2, "basis": 1e-2},
                    scheduler="exponential", decay_factor=0.941)


def _default_ra() -> PhaseOpt:
    return PhaseOpt(batch_size=32,
                    lr={"decoder": 1e-4, "micro": 1e-3, "renderer": 1e-3,
                        "coeffs": 1e-2, "basis": 1e-2},
                    scheduler="exponential", decay_factor=0.941)


@dataclass
class TrainConfig:
    """Full pipeline configuration; defaults are the published settings."""

    # scenes and views
    n1: int = 500
    n2: int = 1500
    v: int = 160
    image_size: int = 64
    pose_mode: str = "hemisphere"
    train_fraction: float = 0.9
    seed: int = 0
    variant: str = "ours"
    # tri-planes
    f_mic: int = 10
    f_mac: int = 22
    m: int = 50
    k: int = 64
    # loss weights
    lambda_latent: float = 1.0
    lambda_rgb: float = 1.0
    lambda_ae: float = 0.1
    # epoch budgets
    warmup_epochs: int = 50
    stage1_epochs: int = 50
    ls_epochs: int = 30
    ra_epochs: int = 50
    # rendering and latent space
    n_samples: int = 64
    ae_stages: tuple = ((16, 2), (32, 2))
    c_lat: int = 4
    # per-phase optimization
    warmup: PhaseOpt = field(default_factory=_default_warmup)
    stage1: PhaseOpt = field(default_factory=_default_stage1)
    latent_supervision: PhaseOpt = field(default_factory=_default_ls)
    rgb_alignment: PhaseOpt = field(default_factory=_default_ra)

    def __post_init__(self):
        self.ae_stages = tuple(tuple(s) for s in self.ae_stages)
        validate(self)

    @property
    def f_total(self) -> int:
        return self.f_mic + self.f_mac

    @property
    def latent_mode(self) -> bool:
        return self.variant not in ("ours-rgb", "rgb-baseline")

    @property
    def has_basis(self) -> bool:
        return self.variant != "rgb-baseline" and self.f_mac > 0

    @property
    def c_out(self) -> int:
        return self.c_lat if self.latent_mode else 3

    @property
    def ae_factor(self) -> int:
        out = 1
        for _, s in self.ae_stages:
            out *= s
        return out


class ConfigError(ValueError):
    pass


def validate(cfg: TrainConfig) -> None:
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{cfg.variant}'")
    if cfg.n1 < 1 or cfg.n2 < 1:
        raise ConfigError("scene counts must be positive")
    # the published setting has n1 < n2; equality is allowed so small
    # pipeline checks can run both stages at the same scene count
    if cfg.n1 > cfg.n2:
        raise ConfigError(f"n1={cfg.n1} must not exceed n2={cfg.n2}")
    if cfg.v < 2:
        raise ConfigError("need at least 2 views per scene")
    if cfg.f_mic < 0 or cfg.f_mac < 0 or cfg.f_total < 1:
        raise ConfigError("feature counts must be nonnegative and sum >= 1")
    if cfg.m < 1:
        raise ConfigError("basis size must be at least 1")
    if cfg.k < 2:
        raise ConfigError("plane resolution must be at least 2")
    for lam in (cfg.lambda_latent, cfg.lambda_rgb, cfg.lambda_ae):
        if lam < 0:
            raise ConfigError("loss weights must be nonnegative")
    if min(cfg.warmup_epochs, cfg.stage1_epochs, cfg.ls_epochs,
           cfg.ra_epochs) < 0:
        raise ConfigError("epoch counts must be nonnegative")
    if cfg.n_samples < 1:
        raise ConfigError("need at least one sample per ray")
    if cfg.latent_mode and cfg.image_size % cfg.ae_factor:
        raise ConfigError(f"image size {cfg.image_size} not divisible by "
                          f"the latent factor {cfg.ae_factor}")
    if cfg.variant == "ours-macro" and cfg.f_mic != 0:
        raise ConfigError("ours-macro requires f_mic = 0")
    if cfg.variant in ("ours-micro", "rgb-baseline") and cfg.f_mac != 0:
        raise ConfigError(f"{cfg.variant} requires f_mac = 0")
    if cfg.variant == "ours-m1" and cfg.m != 1:
        raise ConfigError("ours-m1 requires m = 1")


def project_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Degenerate copy of a base config for an ablation variant.

    Keeps the total feature budget: disabling the macro (or micro) side
    moves its channels to the other side rather than shrinking the planes.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}'")
    kw = {"variant": variant}
    if variant in ("ours-micro", "rgb-baseline"):
        kw.update(f_mic=cfg.f_total, f_mac=0)
    elif variant == "ours-macro":
        kw.update(f_mic=0, f_mac=cfg.f_total)
    elif variant == "ours-m1":
        kw.update(m=1)
    return replace(cfg, **kw)


def to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    for phase in ("warmup", "stage1", "latent_supervision", "rgb_alignment"):
        if phase in d and isinstance(d[phase], dict):
            d[phase] = PhaseOpt(**d[phase])
    unknown = set(d) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        return TrainConfig(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str) -> TrainConfig:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return from_dict(raw)


def save_config(cfg: TrainConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(to_dict(cfg), f, sort_keys=True, indent=1)
        f.write("\n")
