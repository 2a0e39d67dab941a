"""VAE fine-tuning on the low-confidence seed set and synthetic data emission.

The VAE optimizes the negative evidence lower bound: pixel-space squared
reconstruction error (unit-variance Gaussian likelihood) plus the analytic
Gaussian-to-standard-normal KL term, with the posterior sample expressed as
z = mu + exp(logvar/2) * noise so gradients flow to both heads.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import LabeledSet, UnlabeledSet, concat_labeled
from .errors import DivergenceError, InvalidInputError, InvalidSpecError
from .models import ClassifierSpec, VAEModel, VAESpec, build_vae, save_encoder
from .optim import SGDMomentum
from .seeding import derive_seed, rng_for
from .supervised import TrainConfig, train_supervised
from . import storage


@dataclass(frozen=True)
class VAETrainConfig:
    latent_dim: int = 32
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 2e-3
    momentum: float = 0.9
    kl_weight: float = 1.0
    pad_count: int | None = None  # None = |D_REF_LOW| (doubles the seed set)
    seed: int = 0
    pretrained_encoder: str | None = None
    freeze_trunk: bool = False
    enc_depth: int = 10
    enc_width: int = 1
    dec_channels: tuple = (32, 16)

    def __post_init__(self):
        if self.kl_weight < 0:
            raise InvalidSpecError("kl_weight must be >= 0")
        if self.pad_count is not None and self.pad_count < 0:
            raise InvalidSpecError("pad_count must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidSpecError("epochs, batch_size must be positive and learning_rate > 0")


def pretrain_encoder(aux_data: LabeledSet, spec: ClassifierSpec, config: TrainConfig, path) -> str:
    """Train a classifier on an auxiliary dataset and save its trunk as an encoder init."""
    if len(aux_data) == 0:
        raise InvalidInputError("auxiliary dataset must be non-empty")
    rng = rng_for(config.seed, "pretrain-split")
    perm = rng.permutation(len(aux_data))
    n_val = max(1, len(aux_data) // 10)
    model, history = train_supervised(
        aux_data.take(perm[n_val:]), aux_data.take(perm[:n_val]), spec, config
    )
    save_encoder(model, path, training_step=history.records[-1]["step"])
    return str(path)


def assemble_vae_train_set(d_ref_low: LabeledSet, d_l: LabeledSet, pad_count: int, seed: int) -> LabeledSet:
    """d_ref_low plus pad_count distinct samples drawn uniformly from d_l."""
    if pad_count > len(d_l):
        raise InvalidInputError(f"pad_count {pad_count} exceeds |D_L| = {len(d_l)}")
    if pad_count == 0:
        return d_ref_low
    idx = rng_for(seed, "vae-pad").choice(len(d_l), size=pad_count, replace=False)
    return concat_labeled(d_ref_low, d_l.take(np.sort(idx)))


def _gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over dims, averaged over the batch."""
    return float(0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar).sum() / mu.shape[0])


def elbo_loss(vae: VAEModel, batch: np.ndarray, noise: np.ndarray,
              kl_weight: float = 1.0) -> tuple[float, float, float]:
    """Negative-ELBO pieces (total, recon, kl) for an explicit noise draw.

    Pure function of (parameters, batch, noise): batch statistics are used but
    running statistics are left untouched.
    """
    batch = np.asarray(batch, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != tuple(vae.spec.image_shape):
        raise InvalidInputError(f"batch shape {batch.shape} does not match {vae.spec.image_shape}")
    if noise.shape != (batch.shape[0], vae.spec.latent_dim):
        raise InvalidInputError(f"noise shape {noise.shape} must be (batch, latent_dim)")
    total, recon, kl, _ = _elbo_forward(vae, batch, noise, kl_weight, update_stats=False)
    return total, recon, kl


def _elbo_forward(vae, batch, noise, kl_weight, update_stats):
    batch = np.asarray(batch, dtype=vae.dtype)
    noise = np.asarray(noise, dtype=vae.dtype)
    mu, logvar = vae.encode_batch(batch, training=True, update_stats=update_stats)
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    xhat = vae.decode_batch(z, training=True)
    n = batch.shape[0]
    recon = float((np.asarray(xhat - batch, dtype=np.float64) ** 2).sum() / n)
    kl = _gaussian_kl(np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64))
    total = recon + kl_weight * kl
    cache = (batch, noise, mu, logvar, std, xhat, n)
    return total, recon, kl, cache


def elbo_backward(vae, kl_weight, cache):
    """Populate parameter gradients for the negative ELBO evaluated by _elbo_forward."""
    batch, noise, mu, logvar, std, xhat, n = cache
    dxhat = 2.0 * (xhat - batch) / n
    dz = vae.decoder.backward(dxhat)
    dmu = dz + kl_weight * mu / n
    dlogvar = dz * noise * 0.5 * std + kl_weight * 0.5 * (np.exp(logvar) - 1.0) / n
    dfeat = vae.mu_head.backward(dmu) + vae.logvar_head.backward(dlogvar)
    vae.trunk.backward(dfeat)


def train_vae(train_set: LabeledSet, config: VAETrainConfig) -> VAEModel:
    """Fine-tune the VAE on the assembled seed set; deterministic per seed."""
    if len(train_set) == 0:
        raise InvalidInputError("VAE training set must be non-empty")
    spec = VAESpec(
        latent_dim=config.latent_dim,
        image_shape=tuple(train_set.images.shape[1:]),
        enc_depth=config.enc_depth,
        enc_width=config.enc_width,
        dec_channels=tuple(config.dec_channels),
    )
    vae = build_vae(spec, seed=derive_seed(config.seed, "vae-init"),
                    pretrained_encoder=config.pretrained_encoder)
    frozen = set(vae.trunk.named_params(prefix="trunk.")) if config.freeze_trunk else set()
    params = {k: v for k, v in vae.named_params().items() if k not in frozen}
    optimizer = SGDMomentum(config.momentum)
    n = len(train_set)
    batch_size = min(config.batch_size, n)
    step = 0
    for epoch in range(config.epochs):
        perm = rng_for(config.seed, "vae-shuffle", epoch).permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            step += 1
            idx = perm[start : start + batch_size]
            batch = train_set.images[idx]
            noise = rng_for(config.seed, "vae-noise", step).standard_normal((len(idx), config.latent_dim))
            total, _, _, cache = _elbo_forward(vae, batch, noise, config.kl_weight, update_stats=True)
            if not np.isfinite(total):
                raise DivergenceError(step)
            elbo_backward(vae, config.kl_weight, cache)
            grads = {k: v for k, v in vae.named_grads().items() if k not in frozen}
            optimizer.step(params, grads, config.learning_rate)
    return vae


def heldout_reconstruction_mse(vae: VAEModel, data: LabeledSet, batch_size: int = 256) -> float:
    """Mean squared error per pixel of posterior-mean reconstructions."""
    from .models import decode, encode

    total = 0.0
    for start in range(0, len(data), batch_size):
        stop = min(start + batch_size, len(data))
        mu, _ = encode(vae, data.images[start:stop])
        total += float(((decode(vae, mu) - data.images[start:stop]) ** 2).sum())
    return total / data.images.size


def generate_reconstructions(vae: VAEModel, d_ref_low: LabeledSet,
                             id_start: int = 0, batch_size: int = 256) -> LabeledSet:
    """Posterior-mean reconstructions, label-aligned with the seed set."""
    from .models import decode, encode

    if len(d_ref_low) == 0:
        raise InvalidInputError("seed set must be non-empty")
    chunks = []
    for start in range(0, len(d_ref_low), batch_size):
        stop = min(start + batch_size, len(d_ref_low))
        mu, _ = encode(vae, d_ref_low.images[start:stop])
        chunks.append(decode(vae, mu))
    ids = id_start + np.arange(len(d_ref_low))
    return LabeledSet(np.concatenate(chunks), d_ref_low.labels.copy(), ids, d_ref_low.num_classes)


def generate_synthetic(vae: VAEModel, k: int, seed: int, batch_size: int = 256) -> UnlabeledSet:
    """Decode K standard-normal prior draws; carries no labels."""
    from .models import decode

    if k < 0:
        raise InvalidInputError("K must be >= 0")
    if k == 0:
        h, w, c = vae.spec.image_shape
        return UnlabeledSet(np.zeros((0, h, w, c)), np.zeros(0, dtype=np.int64))
    z = rng_for(seed, "synth-prior").standard_normal((k, vae.spec.latent_dim))
    chunks = [decode(vae, z[s : s + batch_size]) for s in range(0, k, batch_size)]
    return UnlabeledSet(np.concatenate(chunks), np.arange(k))


# ---------------------------------------------------------------------------
# artifact export

def export_augmented(d_rec: LabeledSet, seed_ids, d_synth: UnlabeledSet,
                     rec_dir, synth_dir) -> None:
    """Image directories plus manifests {id, source, seed_id (rec), label (rec)}."""
    rec_dir, synth_dir = Path(rec_dir), Path(synth_dir)
    entries = []
    for i in range(len(d_rec)):
        fname = f"rec_{int(d_rec.ids[i]):06d}.png"
        storage.save_image(rec_dir / fname, d_rec.images[i])
        entries.append({
            "id": int(d_rec.ids[i]), "source": "rec", "seed_id": int(seed_ids[i]),
            "label": int(d_rec.labels[i]), "file": fname,
        })
    storage.write_json(rec_dir / "manifest.json",
                       {"schema_version": storage.SCHEMA_VERSION, "samples": entries})
    entries = []
    for i in range(len(d_synth)):
        fname = f"synth_{int(d_synth.ids[i]):06d}.png"
        storage.save_image(synth_dir / fname, d_synth.images[i])
        entries.append({"id": int(d_synth.ids[i]), "source": "synth", "file": fname})
    storage.write_json(synth_dir / "manifest.json",
                       {"schema_version": storage.SCHEMA_VERSION, "samples": entries})


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_comparison_grid(seed_images: np.ndarray, recon_images: np.ndarray, path,
                         max_cols: int = 8) -> None:
    """Two-row grid: seed images on top, their reconstructions below."""
    n = min(len(seed_images), max_cols)
    h, w, c = seed_images.shape[1:]
    canvas = np.zeros((2 * h + 2, n * (w + 2), 3), dtype=np.uint8)
    for i in range(n):
        canvas[:h, i * (w + 2) : i * (w + 2) + w] = _to_uint8(np.broadcast_to(seed_images[i], (h, w, 3)))
        canvas[h + 2 : 2 * h + 2, i * (w + 2) : i * (w + 2) + w] = _to_uint8(
            np.broadcast_to(recon_images[i], (h, w, 3)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path, format="PNG")


def save_sample_grid(images: np.ndarray, path, cols: int = 8) -> None:
    n = len(images)
    if n == 0:
        raise InvalidInputError("no images to grid")
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    h, w = images.shape[1:3]
    canvas = np.zeros((rows * (h + 2), cols * (w + 2), 3), dtype=np.uint8)
    for i in range(n):
        r, col = divmod(i, cols)
        canvas[r * (h + 2) : r * (h + 2) + h, col * (w + 2) : col * (w + 2) + w] = _to_uint8(
            np.broadcast_to(images[i], (h, w, 3)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path, format="PNG")
