"""Minibatch training of the dissipativity model."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import AdamState, NonFiniteError, Tape, adam_step, value_of
from ..matnets import DissipativityModel
from .config import TrainConfig
from .dataset import TrajectoryDataset
from .losses import Batch, total_loss

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "batch", "L_d", "L_delta", "L_sp", "L_r", "total")


@dataclass
class TrainHistory:
    rows: list[tuple] = field(default_factory=list)

    def append(self, epoch: int, batch: int, parts: dict, total: float) -> None:
        self.rows.append((epoch, batch, parts["L_d"], parts["L_delta"], parts["L_sp"], parts["L_r"], total))

    def epoch_means(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(HISTORY_COLUMNS) - 1))
        a = np.array(self.rows, dtype=float)
        epochs = np.unique(a[:, 0])
        return np.array([[e, *a[a[:, 0] == e, 2:].mean(axis=0)] for e in epochs])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], *(repr(float(v)) for v in r[2:])])


def init_model(dataset: TrajectoryDataset, config: TrainConfig, anchor=None) -> DissipativityModel:
    """Fresh model for the dataset's dimensions.

    Inputs are scaled by the region bounds so both coordinate groups reach
    the networks with comparable magnitude. With ``state_weighting`` the
    matrix outputs are also weighted by ``max(bounds) / bounds`` (all >= 1),
    so a quadratic form that is O(1) in normalized coordinates is O(1) over
    the whole region. The storage carries a fixed gain (default ``1/dt``):
    a storage that bounds accumulated per-sample cost is roughly that many
    times larger than the per-sample supply.
    """
    rng = np.random.default_rng(config.seed)
    na, n = dataset.n_angles, dataset.n
    scale = np.concatenate([np.full(na, 1.0 / dataset.bounds.delta),
                            np.full(n - na, 1.0 / dataset.bounds.omega)])
    weight = scale / scale.min() if config.state_weighting else None
    gain = max(1.0, 1.0 / dataset.dt) if config.storage_gain is None else config.storage_gain
    model = DissipativityModel.init(n, dataset.m, rng, width=config.width, depth=config.depth,
                                    eps_pd=config.eps_pd, activation=config.activation,
                                    anchor=anchor, input_scale=scale, state_weight=weight,
                                    storage_gain=gain)
    model.meta.update({"n_angles": na, "config_fingerprint": config.fingerprint(), "seed": config.seed})
    return model


def train(dataset: TrajectoryDataset, config: TrainConfig, model: DissipativityModel | None = None,
          anchor=None, progress=None) -> tuple[DissipativityModel, TrainHistory]:
    """Algorithm-1 loop: seeded shuffle, minibatches (last partial kept), Adam.

    ``progress(epoch, history)`` is called after every epoch when given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model is None:
        model = init_model(dataset, config, anchor)
    elif (model.n, model.m) != (dataset.n, dataset.m):
        raise ValueError(f"model dims {(model.n, model.m)} do not match dataset {(dataset.n, dataset.m)}")
    params = model.parameters()
    opt = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    history = TrainHistory()
    rng = np.random.default_rng(config.seed + 1)
    na = dataset.n_angles
    N, bs = len(dataset), config.batch_size
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(N)
        for b, start in enumerate(range(0, N, bs)):
            idx = perm[start:start + bs]
            batch = Batch(dataset.x[idx], dataset.xn[idx], dataset.u[idx])
            tape = Tape()
            bound, leaves = model.bind(tape)
            total, parts = total_loss(bound, batch, config, na, leaves)
            tv = float(value_of(total))
            if not np.isfinite(tv):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}: {parts}")
            grads = tape.grad(total, leaves)
            try:
                adam_step(opt, params, grads, batch_index=b)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}: {exc}") from exc
            history.append(epoch, b, parts, tv)
        m = history.epoch_means()[-1]
        log.info("epoch %d  L_d %.4g  L_delta %.4g  L_sp %.4g  L_r %.4g  total %.4g  (%.1fs)",
                 epoch, *m[1:], time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, history)
    model.meta["epochs_trained"] = model.meta.get("epochs_trained", 0) + config.epochs
    return model, history
