"""Training, evaluation, and introspection dumps.

Training is fully deterministic for a given (seed, config, data): parameter
init, batch shuffling, and stochastic-depth decisions all come from
counter-based streams, so repeated runs produce byte-identical checkpoints
and history files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import container, metrics
from .autodiff import Tape, backward
from .config import TrainConfig, parse_config_text, serialize_config
from .errors import InputError, NumericError
from .model import Model, count_flops, count_params
from .rng import DROP, SHUFFLE, counter_uniform, stream


class Adam:
    """Adam with fixed hyperparameters and no schedule."""

    def __init__(self, store, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(store.value(name)) for name in store.names()}
        self.v = {name: np.zeros_like(store.value(name)) for name in store.names()}

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name in self.store.names():
            g = self.store.grad(name)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p = self.store.var(name)
            p.value = p.value - (self.lr * update).astype(p.value.dtype)


def load_sequences(path) -> np.ndarray:
    arr = container.load_tensor(path)
    if arr.ndim != 5:
        raise InputError(f"sequence file must be [N,T,C,H,W], got rank {arr.ndim}")
    return arr


def _check_data(cfg: TrainConfig, data: np.ndarray, need_targets: bool):
    n, t, c, h, w = data.shape
    m = cfg.model
    need = m.t_in + m.t_out if need_targets else m.t_in
    if t < need:
        raise InputError(f"data has {t} frames, config needs {need}")
    if (c, h, w) != (m.c_in, m.height, m.width):
        raise InputError(
            f"data frames {c}x{h}x{w} do not match config {m.c_in}x{m.height}x{m.width}"
        )


@dataclass
class EpochRecord:
    epoch: int
    loss: float


def _sequence_loss(model: Model, seq: np.ndarray, cfg: TrainConfig, mode: str, drop_draw):
    m = cfg.model
    inputs = [seq[t] for t in range(m.t_in)]
    targets = [seq[m.t_in + t] for t in range(m.t_out)]
    preds = model.predict(inputs, mode=mode, drop_draw=drop_draw)
    total = None
    for pred, target in zip(preds, targets):
        diff = ad.sub(pred, np.asarray(target, dtype=model.dtype))
        frame_loss = ad.mean_all(ad.mul(diff, diff))
        total = frame_loss if total is None else ad.add(total, frame_loss)
    return ad.scale(total, 1.0 / len(preds))


def _first_nonfinite(store) -> str | None:
    for name in store.names():
        if not np.all(np.isfinite(store.value(name))):
            return name
    return None


def train(cfg: TrainConfig, data: np.ndarray, log=None) -> tuple[Model, list[EpochRecord]]:
    """Train on [N,T,C,H,W] sequences; loss is the spatially normalized MSE."""
    cfg.validate()
    _check_data(cfg, data, need_targets=True)
    model = Model.build(cfg.model, seed=cfg.seed, dtype=np.float32)
    opt = Adam(model.store, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    n = data.shape[0]
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = stream(cfg.seed, SHUFFLE, epoch).permutation(n)
        epoch_loss = 0.0
        for step, lo in enumerate(range(0, n, cfg.batch)):
            batch = order[lo : lo + cfg.batch]
            model.store.zero_grads()
            tape = Tape()
            with tape:
                total = None
                for j, idx in enumerate(batch):
                    def drop_draw(pass_idx, block_idx, _j=j):
                        return counter_uniform(
                            cfg.seed, DROP, (epoch, step, _j, pass_idx * 4096 + block_idx)
                        )
                    seq_loss = _sequence_loss(
                        model, data[idx], cfg, mode="train", drop_draw=drop_draw
                    )
                    total = seq_loss if total is None else ad.add(total, seq_loss)
                total = ad.scale(total, 1.0 / len(batch))
            tape.outputs = (total,)
            loss_value = float(total.value)
            if not np.isfinite(loss_value):
                culprit = _first_nonfinite(model.store)
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}"
                    + (f"; first non-finite parameter: '{culprit}'" if culprit else "")
                )
            backward(tape, np.asarray(1.0, dtype=total.value.dtype))
            opt.step()
            bad = _first_nonfinite(model.store)
            if bad is not None:
                raise NumericError(
                    f"non-finite values in parameter '{bad}' after epoch {epoch} step {step}"
                )
            epoch_loss += loss_value * len(batch)
        record = EpochRecord(epoch, epoch_loss / n)
        history.append(record)
        if log is not None:
            log(record)
    return model, history


def write_history_csv(path, history: list[EpochRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for rec in history:
            writer.writerow([rec.epoch, f"{rec.loss:.10g}"])


def save_model(path, cfg: TrainConfig, model: Model):
    container.save_checkpoint(path, serialize_config(cfg), dict(model.store.items()))


def load_model(path) -> tuple[TrainConfig, Model]:
    config_text, tensors = container.load_checkpoint(path)
    cfg = parse_config_text(config_text)
    cfg.validate()
    model = Model.build(cfg.model, seed=cfg.seed, dtype=np.float32)
    model.store.load_state(tensors)
    return cfg, model


def predict_batch(model: Model, data: np.ndarray) -> np.ndarray:
    """Eval-mode predictions for every sequence: [N, t_out, c_out, H, W]."""
    m = model.config
    _check_data_model(model, data)
    out = np.empty(
        (data.shape[0], m.t_out, m.c_out, m.height, m.width), dtype=model.dtype
    )
    for i in range(data.shape[0]):
        inputs = [data[i, t] for t in range(m.t_in)]
        preds = model.predict(inputs, mode="eval")
        for t, p in enumerate(preds):
            out[i, t] = p.value
    return out


def _check_data_model(model: Model, data: np.ndarray):
    if data.ndim != 5:
        raise InputError(f"sequence data must be [N,T,C,H,W], got rank {data.ndim}")
    m = model.config
    if data.shape[1] < m.t_in:
        raise InputError(f"data has {data.shape[1]} frames, model needs {m.t_in}")
    if data.shape[2:] != (m.c_in, m.height, m.width):
        raise InputError(
            f"data frames {data.shape[2:]} do not match model {(m.c_in, m.height, m.width)}"
        )


METRIC_NAMES = ("mse", "mse_norm", "mae", "psnr", "ssim", "params", "flops")


def evaluate(cfg: TrainConfig, model: Model, data: np.ndarray) -> dict[str, float]:
    """Run eval-mode prediction over a dataset and report the seven metrics."""
    m = cfg.model
    if data.shape[1] < m.t_in + m.t_out:
        raise InputError(
            f"data has {data.shape[1]} frames, evaluation needs {m.t_in + m.t_out}"
        )
    preds = predict_batch(model, data)
    gt = data[:, m.t_in : m.t_in + m.t_out].astype(np.float64)
    preds = preds.astype(np.float64)
    return {
        "mse": metrics.mse(preds, gt, normalized=False),
        "mse_norm": metrics.mse(preds, gt, normalized=True),
        "mae": metrics.mae(preds, gt),
        "psnr": metrics.psnr(preds, gt),
        "ssim": metrics.ssim(preds, gt),
        "params": float(count_params(m)),
        "flops": float(count_flops(m)),
    }


def write_metrics_csv(path, report: dict[str, float]):
    """Exactly one `metric,value` row per report entry (no header)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for name in METRIC_NAMES:
            writer.writerow([name, f"{report[name]:.10g}"])


# ---------------------------------------------------------------------------
# Introspection dumps
# ---------------------------------------------------------------------------


def write_pgm(path, gray: np.ndarray):
    """Binary P5 image, maxval 255."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise InputError(f"PGM payload must be 2-D, got {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.astype(np.uint8).tobytes())


def dump_gates(model: Model, input_sequence: np.ndarray, block_index: int, out_prefix):
    """Write the gate map of one block: full alpha CSV plus argmax PGM.

    The PGM maps the per-pixel argmax scale index (ties toward the smallest
    index) to evenly spaced gray levels. Returns the two output paths.
    """
    m = model.config
    if input_sequence.ndim != 4 or input_sequence.shape[0] < m.t_in:
        raise InputError(
            f"input sequence must be [T>={m.t_in},C,H,W], got {input_sequence.shape}"
        )
    frames = [input_sequence[t] for t in range(m.t_in)]
    alpha = model.gate_map(frames, block_index)
    k = alpha.shape[0]
    argmax = alpha.argmax(axis=0)
    levels = (
        np.zeros(1, dtype=np.uint8)
        if k == 1
        else np.round(255.0 * np.arange(k) / (k - 1)).astype(np.uint8)
    )
    prefix = Path(out_prefix)
    pgm_path = prefix.with_name(prefix.name + "_argmax.pgm")
    csv_path = prefix.with_name(prefix.name + "_alpha.csv")
    write_pgm(pgm_path, levels[argmax])
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "w"] + [f"alpha_{i}" for i in range(k)])
        for y in range(alpha.shape[1]):
            for x in range(alpha.shape[2]):
                writer.writerow([y, x] + [f"{alpha[i, y, x]:.10g}" for i in range(k)])
    return csv_path, pgm_path


def dump_betas(model: Model, out_csv):
    """Write every effective suppression coefficient: block, scale, channel, value."""
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "scale", "channel", "value"])
        for row in model.suppression_values():
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.10g}"])
