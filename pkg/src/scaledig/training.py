"""Two-stage multi-scene training.

Stage 1 jointly learns the latent space (encoder/decoder), the renderer,
the shared basis planes, and the first scene set, preceded by a warm-up
that freezes the autoencoder and matches encoded latents only. Stage 2
adds scenes cheaply: Latent Supervision epochs match frozen-encoder
latents, then RGB Alignment epochs match decoded pixels while fine-tuning
the decoder. Each phase hands the optimizer an explicit group list, so
everything outside it stays bit-identical.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autoencoder import AEConfig, decode, encode, init_decoder_params, \
    init_encoder_params, params_from, reconstruct
from .config import TrainConfig
from .costs import bytes_to_mb
from .metrics import psnr, ssim
from .optim import AdamState, adam_step
from .params import ParamStore
from .renderer import CameraPose, head_from, init_head_params, render
from .triplane import compose_planes, init_basis, init_coeffs, init_micro, \
    trainable_count


class TrainAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries phase/epoch/step."""

    def __init__(self, phase: str, epoch: int, step: int, op: str):
        super().__init__(f"non-finite loss in {phase} at epoch {epoch} "
                         f"step {step} (operation '{op}')")
        self.phase = phase
        self.epoch = epoch
        self.step = step
        self.op = op


@dataclass
class TrainReport:
    """Loss curves and resource measurements for one training stage."""

    stage: str
    variant: str
    n_scenes: int
    epochs: list = field(default_factory=list)
    stored_mb: float = 0.0
    wall_minutes: float = 0.0
    phase_minutes: dict = field(default_factory=dict)

    def public_dict(self) -> dict:
        """Deterministic content; wall-clock lives in timing_dict."""
        return {"stage": self.stage, "variant": self.variant,
                "n_scenes": self.n_scenes, "stored_mb": self.stored_mb,
                "epochs": self.epochs}

    def timing_dict(self) -> dict:
        return {"wall_minutes": self.wall_minutes,
                "phase_minutes": self.phase_minutes}


def micro_group(i: int) -> str:
    return f"micro_planes[{i}]"


def coeff_group(i: int) -> str:
    return f"basis_weights[{i}]"


def _role_of(group: str) -> str:
    if group.startswith("micro_planes"):
        return "micro"
    if group.startswith("basis_weights"):
        return "coeffs"
    return {"basis_planes": "basis", "renderer_mlp": "renderer",
            "encoder": "encoder", "decoder": "decoder"}[group]


def ae_config(cfg: TrainConfig) -> AEConfig:
    return AEConfig(stages=cfg.ae_stages, c_lat=cfg.c_lat)


def init_params(cfg: TrainConfig, n_scenes: int, seed_tag: int) -> ParamStore:
    """Fresh parameter store for one stage's scene set."""
    store = ParamStore()
    if cfg.f_mic > 0:
        for i in range(n_scenes):
            rng = np.random.default_rng([cfg.seed, seed_tag, 10, i])
            store.add(micro_group(i), "planes",
                      init_micro(rng, cfg.k, cfg.f_mic))
    if cfg.has_basis:
        for i in range(n_scenes):
            rng = np.random.default_rng([cfg.seed, seed_tag, 11, i])
            store.add(coeff_group(i), "coeffs", init_coeffs(rng, cfg.m))
        rng = np.random.default_rng([cfg.seed, seed_tag, 12])
        store.add("basis_planes", "planes",
                  init_basis(rng, cfg.m, cfg.k, cfg.f_mac))
    rng = np.random.default_rng([cfg.seed, seed_tag, 13])
    for name, arr in init_head_params(rng, cfg.f_total, cfg.c_out).items():
        store.add("renderer_mlp", name, arr)
    if cfg.latent_mode:
        acfg = ae_config(cfg)
        rng = np.random.default_rng([cfg.seed, seed_tag, 14])
        for name, arr in init_encoder_params(rng, acfg).items():
            store.add("encoder", name, arr)
        rng = np.random.default_rng([cfg.seed, seed_tag, 15])
        for name, arr in init_decoder_params(rng, acfg).items():
            store.add("decoder", name, arr)
    return store


def loss_latent(z, z_rendered):
    """Mean squared error between target and rendered latent images."""
    if ad.val(z).shape != ad.val(z_rendered).shape:
        raise ValueError(f"latent shape mismatch: {ad.val(z).shape} vs "
                         f"{ad.val(z_rendered).shape}")
    return ad.mse(z, z_rendered)


def loss_rgb(x, x_decoded):
    """Mean squared error between ground truth and decoded rendering."""
    if ad.val(x).shape != ad.val(x_decoded).shape:
        raise ValueError(f"image shape mismatch: {ad.val(x).shape} vs "
                         f"{ad.val(x_decoded).shape}")
    return ad.mse(x, x_decoded)


def loss_ae(x, x_reconstructed):
    """Mean squared error of the autoencoder round trip."""
    if ad.val(x).shape != ad.val(x_reconstructed).shape:
        raise ValueError(f"image shape mismatch: {ad.val(x).shape} vs "
                         f"{ad.val(x_reconstructed).shape}")
    return ad.mse(x, x_reconstructed)


def _latent_pose(pose: CameraPose, d: int) -> CameraPose:
    return CameraPose(pose.cam_to_world, pose.fov,
                      pose.height // d, pose.width // d)


def white_latent_background(phi: dict, cfg: TrainConfig):
    """Spatial mean of the encoded all-white image.

    Empty space must render to "white" in latent space; this is the latent
    the encoder itself assigns to white, so the choice tracks the encoder
    as it trains (gradients flow into it when phi holds tape variables).
    """
    acfg = ae_config(cfg)
    white = np.ones((cfg.image_size, cfg.image_size, 3), dtype=np.float32)
    z = encode(white, phi, acfg)
    hw = ad.val(z).shape[0] * ad.val(z).shape[1]
    flat = ad.reshape(z, (hw, cfg.c_lat))
    return ad.mul(ad.reshape(ad.matmul(
        np.ones((1, hw), dtype=np.float32), flat), (cfg.c_lat,)), 1.0 / hw)


def _scene_planes(lookup, cfg: TrainConfig, i: int):
    micro = lookup(micro_group(i), "planes") if cfg.f_mic > 0 else None
    if cfg.has_basis:
        return compose_planes(micro, lookup(coeff_group(i), "coeffs"),
                              lookup("basis_planes", "planes"))
    return micro


def render_scene(lookup, cfg: TrainConfig, i: int, pose: CameraPose,
                 background):
    """Latent (or RGB) rendering of scene i under the current parameters."""
    tri = _scene_planes(lookup, cfg, i)
    head = head_from(lookup, cfg.c_out, bounded=not cfg.latent_mode)
    p = _latent_pose(pose, cfg.ae_factor) if cfg.latent_mode else pose
    return render(tri, p, head, background, n_samples=cfg.n_samples)


def stage1_objective(batch, lookup, cfg: TrainConfig, terms_out=None):
    """Batch-mean combined objective of the joint stage.

    batch: sequence of (scene index, ground-truth image, pose). In latent
    mode the three weighted terms apply; RGB variants reduce to the
    weighted RGB term on direct renders.
    """
    acfg = ae_config(cfg)
    if cfg.latent_mode:
        phi = params_from(lookup, "encoder", acfg)
        psi = params_from(lookup, "decoder", acfg)
        background = white_latent_background(phi, cfg)
    else:
        background = np.ones(3, dtype=np.float32)
    sums = {"loss_latent": 0.0, "loss_rgb": 0.0, "loss_ae": 0.0} \
        if cfg.latent_mode else {"loss_rgb": 0.0}
    total = None
    for i, x, pose in batch:
        zt = render_scene(lookup, cfg, i, pose, background)
        if cfg.latent_mode:
            z = encode(x, phi, acfg)
            l_lat = loss_latent(z, zt)
            l_rgb = loss_rgb(x, decode(zt, psi, acfg))
            l_ae = loss_ae(x, reconstruct(x, phi, psi, acfg))
            term = ad.add(ad.add(ad.mul(l_lat, cfg.lambda_latent),
                                 ad.mul(l_rgb, cfg.lambda_rgb)),
                          ad.mul(l_ae, cfg.lambda_ae))
            sums["loss_latent"] += float(ad.val(l_lat))
            sums["loss_rgb"] += float(ad.val(l_rgb))
            sums["loss_ae"] += float(ad.val(l_ae))
        else:
            l_rgb = loss_rgb(x, zt)
            term = ad.mul(l_rgb, cfg.lambda_rgb)
            sums["loss_rgb"] += float(ad.val(l_rgb))
        total = term if total is None else ad.add(total, term)
    if terms_out is not None:
        for k, v in sums.items():
            terms_out[k] = terms_out.get(k, 0.0) + v / len(batch)
    return ad.mul(total, 1.0 / len(batch))


def latent_match_objective(batch, lookup, cfg: TrainConfig, latents,
                           background, terms_out=None):
    """Batch-mean latent loss against precomputed frozen-encoder latents."""
    total = None
    acc = 0.0
    for i, _, pose, j in batch:
        zt = render_scene(lookup, cfg, i, pose, background)
        l = loss_latent(latents[(i, j)], zt)
        acc += float(ad.val(l))
        term = ad.mul(l, cfg.lambda_latent)
        total = term if total is None else ad.add(total, term)
    if terms_out is not None:
        terms_out["loss_latent"] = terms_out.get("loss_latent", 0.0) \
            + acc / len(batch)
    return ad.mul(total, 1.0 / len(batch))


def rgb_align_objective(batch, lookup, cfg: TrainConfig, background,
                        terms_out=None):
    """Batch-mean RGB loss through the decoder (or direct in RGB mode)."""
    acfg = ae_config(cfg)
    psi = params_from(lookup, "decoder", acfg) if cfg.latent_mode else None
    total = None
    acc = 0.0
    for i, x, pose, _ in batch:
        zt = render_scene(lookup, cfg, i, pose, background)
        out = decode(zt, psi, acfg) if cfg.latent_mode else zt
        l = loss_rgb(x, out)
        acc += float(ad.val(l))
        term = ad.mul(l, cfg.lambda_rgb)
        total = term if total is None else ad.add(total, term)
    if terms_out is not None:
        terms_out["loss_rgb"] = terms_out.get("loss_rgb", 0.0) \
            + acc / len(batch)
    return ad.mul(total, 1.0 / len(batch))


def _train_pairs(dataset) -> list:
    return dataset.view_indices("train")


def _scene_groups(cfg: TrainConfig, scenes) -> list:
    out = []
    for i in sorted(set(scenes)):
        if cfg.f_mic > 0:
            out.append(micro_group(i))
        if cfg.has_basis:
            out.append(coeff_group(i))
    return out


def _shared_groups(store: ParamStore, roles) -> list:
    return [g for g in store.groups()
            if g in ("basis_planes", "renderer_mlp", "encoder", "decoder")
            and _role_of(g) in roles]


def run_phase(phase: str, store: ParamStore, dataset, cfg: TrainConfig,
              opt, epochs: int, shared_roles, objective_fn,
              report: TrainReport, shuffle_seed: int) -> None:
    """Epoch loop for one phase: shuffle pairs, batch, step active groups.

    objective_fn(batch, lookup, terms_out) -> scalar; batch items are
    (scene, image, pose, view) tuples. Groups outside the phase's roles
    are never stepped and stay bit-identical.
    """
    pairs = _train_pairs(dataset)
    schedule = opt.schedule()
    state = AdamState()
    shared = _shared_groups(store, shared_roles)
    rng = np.random.default_rng([cfg.seed, shuffle_seed])
    t0 = time.perf_counter()
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        rates = {role: schedule.at(base, epoch)
                 for role, base in opt.lr.items()}
        terms: dict = {}
        n_batches = 0
        obj_sum = 0.0
        for start in range(0, len(order), opt.batch_size):
            chunk = [pairs[t] for t in order[start:start + opt.batch_size]]
            batch = [(i, dataset.scenes[i].views[j].image,
                      dataset.scenes[i].views[j].pose, j)
                     for i, j in chunk]
            active = shared + _scene_groups(cfg, [i for i, _ in chunk])
            lr_map = {g: rates[_role_of(g)] for g in active}
            step = start // opt.batch_size
            try:
                value, grads = ad.value_and_grad(
                    lambda lookup: objective_fn(batch, lookup, terms),
                    store, active)
            except ad.NonFiniteError as e:
                raise TrainAbort(phase, epoch, step, e.op) from e
            if not np.isfinite(value):
                raise TrainAbort(phase, epoch, step, "objective")
            adam_step(store, grads, state, lr_map, active)
            obj_sum += value
            n_batches += 1
        row = {"phase": phase, "epoch": epoch,
               "objective": obj_sum / n_batches}
        for k, v in terms.items():
            row[k] = v / n_batches
        report.epochs.append(row)
    report.phase_minutes[phase] = (time.perf_counter() - t0) / 60.0


def frozen_latents(store: ParamStore, dataset, cfg: TrainConfig) -> dict:
    """Encode every training view once with the frozen encoder."""
    acfg = ae_config(cfg)
    phi = params_from(lambda g, n: store.get(g, n), "encoder", acfg)
    out = {}
    for i, j in _train_pairs(dataset):
        out[(i, j)] = encode(dataset.scenes[i].views[j].image, phi, acfg)
    return out


def _frozen_background(store: ParamStore, cfg: TrainConfig):
    if not cfg.latent_mode:
        return np.ones(3, dtype=np.float32)
    acfg = ae_config(cfg)
    phi = params_from(lambda g, n: store.get(g, n), "encoder", acfg)
    return np.asarray(white_latent_background(phi, cfg))


def train_stage1(dataset, cfg: TrainConfig):
    """Warm-up plus joint training on the first scene set."""
    if dataset.n_scenes < cfg.n1:
        raise ValueError(f"dataset has {dataset.n_scenes} scenes, "
                         f"config expects n1={cfg.n1}")
    store = init_params(cfg, cfg.n1, seed_tag=1)
    _, nbytes = trainable_count(cfg, "one", cfg.variant)
    report = TrainReport(stage="stage1", variant=cfg.variant,
                         n_scenes=cfg.n1,
                         stored_mb=bytes_to_mb(nbytes * cfg.n1))
    t0 = time.perf_counter()
    scene_roles = {"micro", "coeffs"} if cfg.has_basis else {"micro"}
    if cfg.warmup_epochs > 0:
        # autoencoder frozen: latents and background are plain arrays
        if cfg.latent_mode:
            latents = frozen_latents(store, dataset, cfg)
        else:
            latents = None
        bg = _frozen_background(store, cfg)

        def warm_obj(batch, lookup, terms):
            if cfg.latent_mode:
                return latent_match_objective(batch, lookup, cfg, latents,
                                              bg, terms)
            return rgb_align_objective(batch, lookup, cfg, bg, terms)

        run_phase("warmup", store, dataset, cfg, cfg.warmup,
                  cfg.warmup_epochs, {"basis", "renderer"} | scene_roles,
                  warm_obj, report, shuffle_seed=20)
    if cfg.stage1_epochs > 0:
        roles = {"basis", "renderer"} | scene_roles
        if cfg.latent_mode:
            roles |= {"encoder", "decoder"}

        def main_obj(batch, lookup, terms):
            b3 = [(i, x, pose) for i, x, pose, _ in batch]
            return stage1_objective(b3, lookup, cfg, terms)

        run_phase("stage1", store, dataset, cfg, cfg.stage1,
                  cfg.stage1_epochs, roles, main_obj, report,
                  shuffle_seed=21)
    report.wall_minutes = (time.perf_counter() - t0) / 60.0
    return store, report


def train_stage2(dataset, stage1_store: ParamStore, cfg: TrainConfig):
    """Latent Supervision then RGB Alignment on a new scene set."""
    if dataset.n_scenes < cfg.n2:
        raise ValueError(f"dataset has {dataset.n_scenes} scenes, "
                         f"config expects n2={cfg.n2}")
    store = init_params(cfg, cfg.n2, seed_tag=2)
    for group in ("basis_planes", "renderer_mlp", "encoder", "decoder"):
        for (g, n), _ in list(store.items(group)):
            store.set(g, n, stage1_store.get(g, n).copy())
    _, nbytes = trainable_count(cfg, "two", cfg.variant)
    report = TrainReport(stage="stage2", variant=cfg.variant,
                         n_scenes=cfg.n2,
                         stored_mb=bytes_to_mb(nbytes * cfg.n2))
    t0 = time.perf_counter()
    scene_roles = {"micro", "coeffs"} if cfg.has_basis else {"micro"}
    bg = _frozen_background(store, cfg)
    if cfg.ls_epochs > 0:
        if cfg.latent_mode:
            latents = frozen_latents(store, dataset, cfg)

            def ls_obj(batch, lookup, terms):
                return latent_match_objective(batch, lookup, cfg, latents,
                                              bg, terms)
        else:
            def ls_obj(batch, lookup, terms):
                return rgb_align_objective(batch, lookup, cfg, bg, terms)

        run_phase("latent_supervision", store, dataset, cfg,
                  cfg.latent_supervision, cfg.ls_epochs,
                  {"basis", "renderer"} | scene_roles, ls_obj, report,
                  shuffle_seed=22)
    if cfg.ra_epochs > 0:
        roles = {"basis", "renderer"} | scene_roles
        if cfg.latent_mode:
            roles |= {"decoder"}

        def ra_obj(batch, lookup, terms):
            return rgb_align_objective(batch, lookup, cfg, bg, terms)

        run_phase("rgb_alignment", store, dataset, cfg, cfg.rgb_alignment,
                  cfg.ra_epochs, roles, ra_obj, report, shuffle_seed=23)
    report.wall_minutes = (time.perf_counter() - t0) / 60.0
    return store, report


def render_view(store: ParamStore, cfg: TrainConfig, i: int,
                pose: CameraPose) -> np.ndarray:
    """RGB prediction for one view under frozen parameters."""
    def lookup(g, n):
        return store.get(g, n)

    bg = _frozen_background(store, cfg)
    out = render_scene(lookup, cfg, i, pose, bg)
    if cfg.latent_mode:
        out = decode(out, params_from(lookup, "decoder", ae_config(cfg)),
                     ae_config(cfg))
    return np.clip(np.asarray(out), 0.0, 1.0)


def evaluate_dataset(dataset, store: ParamStore, cfg: TrainConfig,
                     split: str = "test") -> dict:
    """Per-scene PSNR/SSIM on the held-out views, plus means."""
    rows = []
    for i, scene in enumerate(dataset.scenes):
        ps, ss = [], []
        for j, view in enumerate(scene.views):
            if view.split != split:
                continue
            pred = render_view(store, cfg, i, view.pose)
            ps.append(psnr(view.image, pred))
            ss.append(ssim(view.image, pred))
        if ps:
            rows.append({"scene": i, "psnr": float(np.mean(ps)),
                         "ssim": float(np.mean(ss)), "views": len(ps)})
    if not rows:
        raise ValueError(f"dataset has no '{split}' views to evaluate")
    return {"rows": rows,
            "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
            "mean_ssim": float(np.mean([r["ssim"] for r in rows]))}


def train_variant(ds1, ds2, cfg: TrainConfig) -> dict:
    """Run both stages plus evaluation for one ablation variant."""
    store1, rep1 = train_stage1(ds1, cfg)
    store2, rep2 = train_stage2(ds2, store1, cfg)
    ev1 = evaluate_dataset(ds1, store1, cfg)
    ev2 = evaluate_dataset(ds2, store2, cfg)
    count2, nbytes2 = trainable_count(cfg, "two", cfg.variant)
    return {"variant": cfg.variant,
            "mu_mb": bytes_to_mb(nbytes2),
            "per_scene_values": count2,
            "stage1": rep1, "stage2": rep2,
            "eval_stage1": ev1, "eval_stage2": ev2}
