"""End-to-end training: alternating discriminator/main steps, checkpointing,
and the ablation switches.
"""

import json
from dataclasses import dataclass

import numpy as np
import torch

from .appearance import UNetConfig, init_appearance
from .config import RunConfig, config_from_dict, config_to_dict
from .errors import CheckpointError, TrainingDiverged
from .losses import (
    PerceptualExtractor,
    gan_discriminator_loss,
    gan_generator_loss,
    reconstruction_loss,
    structure_bce,
    total_loss,
)
from .optim import Adam
from .sgem import init_sgem
from .structure import init_discriminator, init_structure

CHECKPOINT_VERSION = 1


@dataclass
class TrainState:
    """Everything a run needs to continue: modules, optimizers, step, RNG."""

    config: RunConfig
    appearance: torch.nn.Module
    structure: torch.nn.Module
    sgem: torch.nn.Module
    discriminator: torch.nn.Module
    phi: PerceptualExtractor
    opt_main: Adam
    opt_disc: Adam
    rng: np.random.Generator
    step: int = 0

    def named_modules_for_checkpoint(self):
        return {
            "appearance": self.appearance,
            "structure": self.structure,
            "sgem": self.sgem,
            "discriminator": self.discriminator,
            "phi": self.phi,
        }


def build_baseline_edge_net(model_cfg, seed):
    """Plain U-Net edge predictor standing in for the generative model."""
    cfg = UNetConfig(
        depth=model_cfg.unet.depth,
        base_channels=model_cfg.unet.base_channels,
        channel_multipliers=model_cfg.unet.channel_multipliers,
        in_channels=model_cfg.unet.in_channels,
        out_channels=1,
    )
    return init_appearance(cfg, seed)


def build_state(run_cfg=None):
    """Construct a fresh TrainState; all parameters derive from train.seed."""
    run_cfg = run_cfg or RunConfig()
    model_cfg = run_cfg.model
    train_cfg = run_cfg.train
    seed = train_cfg.seed

    appearance = init_appearance(model_cfg.unet, seed)
    if train_cfg.baseline_edge_net:
        structure = build_baseline_edge_net(model_cfg, seed + 1)
    else:
        structure = init_structure(model_cfg.structure, seed + 1)
    sgem = init_sgem(model_cfg.sgem, seed + 2)
    discriminator = init_discriminator(model_cfg.discriminator, seed + 3)
    phi = PerceptualExtractor(
        in_channels=model_cfg.unet.in_channels,
        stage_channels=model_cfg.phi_channels,
        seed=model_cfg.phi_seed,
    )

    main_params = {}
    if not train_cfg.disable_appearance:
        main_params.update(
            {f"appearance.{k}": p for k, p in appearance.named_parameters()}
        )
    if not train_cfg.disable_structure:
        main_params.update(
            {f"structure.{k}": p for k, p in structure.named_parameters()}
        )
    main_params.update({f"sgem.{k}": p for k, p in sgem.named_parameters()})
    disc_params = {f"discriminator.{k}": p for k, p in discriminator.named_parameters()}

    opt_main = Adam(
        main_params, train_cfg.lr_main, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps
    )
    opt_disc = Adam(
        disc_params, train_cfg.lr_disc, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps
    )
    rng = np.random.default_rng(seed)
    return TrainState(
        config=run_cfg,
        appearance=appearance,
        structure=structure,
        sgem=sgem,
        discriminator=discriminator,
        phi=phi,
        opt_main=opt_main,
        opt_disc=opt_disc,
        rng=rng,
    )


def forward_pipeline(state, low, dump=False):
    """Full inference path: restored image, edge map, enhanced output."""
    cfg = state.config.train
    restored = low if cfg.disable_appearance else state.appearance(low)
    if cfg.disable_structure:
        edge = torch.zeros_like(low[:, :1])
    else:
        edge = state.structure(low)
    enhanced = state.sgem(restored, low, edge, use_guidance=not cfg.disable_guidance)
    if dump:
        return enhanced, restored, edge
    return enhanced


def train_step(state, batch):
    """One alternating update; returns a dict of the logged loss values.

    Phase 1 updates the discriminator on detached generator output; phase 2
    updates the main group (appearance, structure, enhancement) jointly.
    """
    cfg = state.config.train
    weights = cfg.weights
    low, high, edge_gt = batch.low, batch.high, batch.edge

    loss_d_val = 0.0
    if not cfg.disable_gan:
        with torch.no_grad():
            fake_edge = state.structure(low)
        state.opt_disc.zero_grad()
        state.opt_main.zero_grad()
        loss_d = gan_discriminator_loss(
            state.discriminator(edge_gt), state.discriminator(fake_edge)
        )
        if not torch.isfinite(loss_d):
            raise TrainingDiverged(
                "discriminator loss is non-finite", diagnostics={"loss_d": float(loss_d)}
            )
        loss_d.backward()
        state.opt_disc.step()
        loss_d_val = float(loss_d)

    state.opt_main.zero_grad()
    state.opt_disc.zero_grad()

    zero = low.new_zeros(())
    restored = low if cfg.disable_appearance else state.appearance(low)
    loss_a = zero if cfg.disable_appearance else reconstruction_loss(restored, high, state.phi)

    if cfg.disable_structure:
        edge_pred = torch.zeros_like(low[:, :1])
        loss_s = zero
        loss_g = zero
    else:
        edge_pred = state.structure(low)
        loss_s = structure_bce(edge_pred, edge_gt)
        loss_g = zero if cfg.disable_gan else gan_generator_loss(state.discriminator(edge_pred))

    edge_for_sgem = edge_pred.detach() if cfg.detach_structure else edge_pred
    enhanced = state.sgem(
        restored, low, edge_for_sgem, use_guidance=not cfg.disable_guidance
    )
    loss_m = reconstruction_loss(enhanced, high, state.phi)

    loss = total_loss(loss_a, loss_s, loss_g, loss_m, weights)
    loss.backward()
    state.opt_main.step()
    state.step += 1

    return {
        "step": state.step,
        "loss_a": float(loss_a),
        "loss_s": float(loss_s),
        "loss_g": float(loss_g),
        "loss_d": loss_d_val,
        "loss_m": float(loss_m),
        "loss_total": float(loss),
    }


def sample_ids(rng, ids, batch_size):
    """Draw a batch of ids; without replacement when the pool is large enough."""
    if batch_size <= len(ids):
        picks = rng.choice(len(ids), size=batch_size, replace=False)
    else:
        picks = rng.choice(len(ids), size=batch_size, replace=True)
    return [ids[int(i)] for i in picks]


def train_loop(state, load_fn, ids, steps, on_step=None):
    """Run `steps` updates, sampling batches with the state's RNG.

    `load_fn(ids)` must return a PairedBatch. `on_step(log)` is invoked after
    every update. Returns the list of loss logs.
    """
    logs = []
    batch_size = state.config.train.batch_size
    for _ in range(steps):
        batch_ids = sample_ids(state.rng, ids, batch_size)
        log = train_step(state, load_fn(batch_ids))
        logs.append(log)
        if on_step is not None:
            on_step(log)
    return logs


def save_checkpoint(state, path):
    """Write a self-describing container: every tensor by name, optimizer
    moments, step counter, RNG state, and the full run config."""
    arrays = {}
    for mod_name, module in state.named_modules_for_checkpoint().items():
        for key, tensor in module.state_dict().items():
            arrays[f"param/{mod_name}/{key}"] = tensor.detach().cpu().numpy()
    for opt_name, opt in (("opt_main", state.opt_main), ("opt_disc", state.opt_disc)):
        for key, tensor in opt.state_arrays().items():
            if key == "t":
                continue
            arrays[f"{opt_name}/{key}"] = tensor.detach().cpu().numpy()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "step": state.step,
        "opt_main_t": state.opt_main.t,
        "opt_disc_t": state.opt_disc.t,
        "rng_state": state.rng.bit_generator.state,
        "config": config_to_dict(state.config),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild a TrainState from a checkpoint file.

    Raises CheckpointError on version mismatch or missing/corrupt content;
    never returns partial state.
    """
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"checkpoint {path} has no metadata record")
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )

    run_cfg = config_from_dict(RunConfig, meta["config"])
    state = build_state(run_cfg)

    for mod_name, module in state.named_modules_for_checkpoint().items():
        prefix = f"param/{mod_name}/"
        tensors = {
            k[len(prefix):]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        missing = set(module.state_dict()) - set(tensors)
        if missing:
            raise CheckpointError(f"checkpoint missing tensors for {mod_name}: {sorted(missing)}")
        module.load_state_dict(tensors)

    for opt_name, opt, t_key in (
        ("opt_main", state.opt_main, "opt_main_t"),
        ("opt_disc", state.opt_disc, "opt_disc_t"),
    ):
        prefix = f"{opt_name}/"
        moments = {
            k[len(prefix):]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        try:
            opt.load_state_arrays(meta[t_key], moments)
        except KeyError as exc:
            raise CheckpointError(f"checkpoint missing optimizer state: {exc}") from exc

    state.rng.bit_generator.state = meta["rng_state"]
    state.step = int(meta["step"])
    return state
