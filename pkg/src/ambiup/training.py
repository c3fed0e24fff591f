"""Training loop for the upscaler (L1 reconstruction loss, Adam)."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    lr: float = 1e-3
    batch_size: int = 4
    segment_seconds: float = 4.0
    grad_clip: float = 5.0
    seed: int = 0
    checkpoint_every: int = 0
    validate_every: int = 0
    # early stop when validation improves by less than this fraction
    # over `patience` validations (disabled when patience is 0)
    patience: int = 0
    min_rel_improvement: float = 1e-4

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    losses: list
    val_losses: list = field(default_factory=list)
    steps_run: int = 0
    stopped_early: bool = False

    def digest(self):
        """Short hash of the loss trace, stored in checkpoint metadata."""
        import hashlib

        return hashlib.sha256(np.asarray(self.losses, dtype=np.float64).tobytes()).hexdigest()[:16]


def _pair_arrays(pairs, dtype):
    xs, ys = [], []
    for p in pairs:
        if hasattr(p, "input"):
            x, y = p.input.data, p.target.data
        else:
            x, y = p
        xs.append(np.asarray(x, dtype=dtype))
        ys.append(np.asarray(y, dtype=dtype))
    return xs, ys


def evaluate_loss(model, pairs, batch_size=8):
    """Mean L1 loss over full-length pairs (grouped by equal length)."""
    xs, ys = _pair_arrays(pairs, model.dtype)
    total, count = 0.0, 0
    for i in range(0, len(xs), batch_size):
        chunk = range(i, min(i + batch_size, len(xs)))
        lengths = {xs[j].shape[1] for j in chunk}
        groups = [[j for j in chunk if xs[j].shape[1] == n] for n in sorted(lengths)]
        for g in groups:
            x = np.stack([xs[j] for j in g])
            y = np.stack([ys[j] for j in g])
            loss, _ = nn.l1_loss(model(x), y)
            total += loss * len(g)
            count += len(g)
    return total / count


def train(model, dataset, config=None, validation=None, checkpoint_path=None,
          callback=None):
    """Optimize ``model`` in place on ``dataset`` (TrainingPairs or
    ``(foa, hoa3)`` array tuples).

    Each step draws ``batch_size`` pairs and a random crop of
    ``segment_seconds`` from each, using an RNG seeded from ``config.seed``
    so the loss trace is reproducible.
    """
    cfg = config or TrainConfig()
    xs, ys = _pair_arrays(dataset, model.dtype)
    if not xs:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    seg = int(round(cfg.segment_seconds * model.config.sample_rate))
    seg = min([seg] + [x.shape[1] for x in xs])
    params = list(model.params.values())
    opt = nn.Adam(params, lr=cfg.lr)
    result = TrainResult(model, [])
    best = np.inf
    stale = 0

    for step in range(cfg.steps):
        idx = rng.integers(len(xs), size=cfg.batch_size)
        starts = [int(rng.integers(xs[i].shape[1] - seg + 1)) for i in idx]
        xb = np.stack([xs[i][:, s:s + seg] for i, s in zip(idx, starts)])
        yb = np.stack([ys[i][:, s:s + seg] for i, s in zip(idx, starts)])
        pred, tape = model.forward(xb)
        loss, grad = nn.l1_loss(pred, yb)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}")
        model.zero_grad()
        model.backward(grad, tape)
        if cfg.grad_clip:
            nn.clip_grad_norm(params, cfg.grad_clip)
        opt.step()
        result.losses.append(loss)
        result.steps_run = step + 1

        done = step + 1
        if validation is not None and cfg.validate_every and done % cfg.validate_every == 0:
            v = evaluate_loss(model, validation)
            result.val_losses.append((done, v))
            log.info("step %d loss %.5f val %.5f", done, loss, v)
            if cfg.patience:
                if v < best * (1 - cfg.min_rel_improvement):
                    best, stale = v, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        result.stopped_early = True
                        break
        if checkpoint_path and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            from .audio_io import save_checkpoint

            save_checkpoint(checkpoint_path, model, {"step": done, "seed": cfg.seed,
                                                     "loss_digest": result.digest()})
        if callback is not None:
            callback(done, loss)
    return result
