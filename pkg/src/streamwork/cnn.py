"""Contrastive CNN over solution tensors: negatives, training, filter ranking.

The network is three conv blocks (3x3, stride 1, padding 1, batch norm,
ReLU; 32 -> 64 -> 128 channels by default) without pooling, followed by a
global average pool and one logit. It is trained to tell enumerated
solutions from perturbed negatives. Per layer, the filters whose spatially
averaged activation varies most across the positive corpus are retained.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

NEGATIVE_KINDS = ("row_permuted", "position_swapped", "uniform_random")
MODEL_FORMAT = "streamwork-cnn"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class CnnConfig:
    channels: tuple = (32, 64, 128)
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    ensemble: int = 3
    retain: int = 6
    holdout: float = 0.2
    no_signal_below: float = 0.6

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not self.channels:
            raise ValueError("at least one conv layer is required")
        if self.ensemble < 1:
            raise ValueError("ensemble size must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.ensemble)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class NegativeSample:
    data: np.ndarray
    tag: str
    source: int


@dataclass
class FilterRecord:
    seed: int
    layer: int
    filter: int
    activations: np.ndarray      # per positive solution, spatial mean
    variance: float
    mean_map: np.ndarray         # H x W, averaged over the positives

    @property
    def ref(self) -> str:
        return f"s{self.seed}/L{self.layer}/f{self.filter}"


@dataclass
class ContrastPair:
    filter: str
    high: list
    low: list
    high_acts: list
    low_acts: list
    degenerate: bool = False


@dataclass
class TrainResult:
    models: dict = field(default_factory=dict)          # seed -> ContrastiveCNN
    records: list = field(default_factory=list)
    accuracy: dict = field(default_factory=dict)        # seed -> held-out accuracy
    losses: dict = field(default_factory=dict)          # seed -> per-epoch mean loss
    no_signal: bool = False


def _arrays(items) -> np.ndarray:
    out = []
    for t in items:
        data = getattr(t, "data", t)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        out.append(data)
    shapes = {a.shape for a in out}
    if len(shapes) > 1:
        raise TrainingError(f"dimension mismatch among tensors: {sorted(shapes)}")
    return np.stack(out) if out else np.zeros((0, 1, 1, 1))


# ------------------------------------------------------------- negatives

def _is_permutation(a: np.ndarray) -> bool:
    if a.shape[0] != 1 or a.shape[1] != a.shape[2]:
        return False
    m = a[0]
    return bool(np.isin(m, (0.0, 1.0)).all() and (m.sum(0) == 1).all() and (m.sum(1) == 1).all())


def _row_permuted(a, rng):
    h = a.shape[1]
    for _ in range(10):
        order = rng.permutation(h)
        if (order != np.arange(h)).any():
            break
    return a[:, order, :].copy()


def _position_swapped(a, rng):
    out = a.copy()
    c, h, w = a.shape
    if _is_permutation(a):
        # move the 1 inside two rows: row sums stay 1, columns break
        rows = rng.choice(h, size=min(2, h), replace=False)
        for r in rows:
            one = int(np.argmax(out[0, r]))
            other = int(rng.choice([j for j in range(w) if j != one]))
            out[0, r, one], out[0, r, other] = out[0, r, other], out[0, r, one]
        return out
    cells = [(i, j) for i in range(h) for j in range(w)]
    for _ in range(2):
        for _ in range(20):
            p, q = rng.choice(len(cells), size=2, replace=False)
            (i1, j1), (i2, j2) = cells[p], cells[q]
            if not np.array_equal(out[:, i1, j1], out[:, i2, j2]):
                break
        tmp = out[:, i1, j1].copy()
        out[:, i1, j1] = out[:, i2, j2]
        out[:, i2, j2] = tmp
    return out


def _uniform_random(a, rng, pool):
    c, h, w = a.shape
    picks = rng.integers(0, len(pool), size=h * w)
    return pool[picks].T.reshape(c, h, w).copy()


def generate_negatives(positives: Sequence, seed: int = 0) -> list[NegativeSample]:
    """One negative per positive; generator kinds cycle in a fixed order."""
    arr = _arrays(positives)
    if len(arr) == 0:
        raise ValueError("generate_negatives needs at least one positive")
    _, c, h, w = arr.shape
    if h * w < 2:
        raise ValueError("cannot perturb 1x1 tensors")
    rng = np.random.default_rng(seed)
    # empirical distribution of cell values (channel vectors) over the corpus
    pool = arr.transpose(0, 2, 3, 1).reshape(-1, c)
    out = []
    for i, a in enumerate(arr):
        tag = NEGATIVE_KINDS[i % 3]
        if tag == "row_permuted":
            data = _row_permuted(a, rng) if h > 1 else _position_swapped(a, rng)
        elif tag == "position_swapped":
            data = _position_swapped(a, rng)
        else:
            data = _uniform_random(a, rng, pool)
        out.append(NegativeSample(data, tag, i))
    return out


# ----------------------------------------------------------------- model

class ContrastiveCNN(nn.Module):
    def __init__(self, in_channels: int, channels=(32, 64, 128)):
        super().__init__()
        blocks = []
        prev = in_channels
        for ch in channels:
            blocks.append(nn.Sequential(nn.Conv2d(prev, ch, 3, stride=1, padding=1),
                                        nn.BatchNorm2d(ch), nn.ReLU()))
            prev = ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(prev, 1)

    def forward(self, x, return_activations: bool = False):
        acts = []
        for block in self.blocks:
            x = block(x)
            acts.append(x)
        logit = self.head(x.mean(dim=(2, 3))).squeeze(-1)
        return (logit, acts) if return_activations else logit


def _split(n_pos: int, n_neg: int, holdout: float, seed: int):
    """Stratified deterministic train/held-out split over the stacked data."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for offset, n in ((0, n_pos), (n_pos, n_neg)):
        idx = rng.permutation(n) + offset
        k = int(round(n * holdout))
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.array(sorted(train)), np.array(sorted(test))


def _train_one(x: torch.Tensor, y: torch.Tensor, config: CnnConfig, seed: int):
    torch.manual_seed(seed)
    model = ContrastiveCNN(x.shape[1], config.channels).to(x.dtype)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    loss_fn = nn.BCEWithLogitsLoss()
    tr, te = _split(int((y == 1).sum()), int((y == 0).sum()), config.holdout, seed)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for epoch in range(config.epochs):
        model.train()
        order = tr[torch.randperm(len(tr), generator=gen).numpy()]
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            if len(batch) < 2:
                continue  # batch norm needs more than one sample
            opt.zero_grad()
            loss = loss_fn(model(x[batch]), y[batch])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1} (seed {seed})")
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append(total / max(count, 1))
    model.eval()
    with torch.no_grad():
        eval_idx = te if len(te) else tr
        pred = (model(x[eval_idx]) > 0).to(y.dtype)
        acc = float((pred == y[eval_idx]).to(torch.float64).mean())
    return model, acc, losses


def activations(model: ContrastiveCNN, data) -> list[np.ndarray]:
    """Per-layer activation maps (N, C, H, W) with batch norm in eval mode."""
    was = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        _, acts = model(torch.as_tensor(_arrays(data), dtype=dtype), return_activations=True)
    model.train(was)
    return [a.double().numpy() for a in acts]


def filter_records(model: ContrastiveCNN, positives, seed: int, retain: int = 6) -> list[FilterRecord]:
    records = []
    for layer, act in enumerate(activations(model, positives)):
        per_solution = act.mean(axis=(2, 3))              # N x C
        variance = per_solution.var(axis=0)
        order = sorted(range(act.shape[1]), key=lambda f: (-variance[f], f))[:retain]
        for f in order:
            records.append(FilterRecord(seed, layer, f, per_solution[:, f].copy(),
                                        float(variance[f]), act[:, f].mean(axis=0)))
    return records


def train_contrastive(positives, negatives, config: Optional[CnnConfig] = None) -> TrainResult:
    """Train the ensemble; returns models, retained filters and held-out accuracy."""
    config = config or CnnConfig()
    pos = _arrays(positives)
    neg = _arrays(negatives)
    if pos.shape[1:] != neg.shape[1:]:
        raise TrainingError(f"dimension mismatch: positives {pos.shape[1:]}, negatives {neg.shape[1:]}")
    if len(pos) != len(neg):
        raise TrainingError("classes must be balanced one-to-one")
    if len(pos) < 2:
        raise TrainingError("need at least two samples per class")
    x = torch.as_tensor(np.concatenate([pos, neg]), dtype=torch.float32)
    y = torch.cat([torch.ones(len(pos)), torch.zeros(len(neg))])
    result = TrainResult()
    torch.set_num_threads(1)
    for seed in config.seeds():
        model, acc, losses = _train_one(x, y, config, seed)
        result.models[seed] = model
        result.accuracy[seed] = acc
        result.losses[seed] = losses
        result.records.extend(filter_records(model, pos, seed, config.retain))
        log.info("seed %d: held-out accuracy %.3f", seed, acc)
    mean_acc = float(np.mean(list(result.accuracy.values())))
    result.no_signal = mean_acc < config.no_signal_below
    if result.no_signal:
        log.warning("no signal: held-out accuracy %.3f", mean_acc)
    return result


def contrast_q(n: int) -> int:
    return max(3, math.ceil(0.05 * n))


def select_contrast_pairs(records: Sequence[FilterRecord], ids: Sequence[str],
                          q: Optional[int] = None) -> list[ContrastPair]:
    """High/low activation groups of ``q`` solutions for every retained filter."""
    n = len(ids)
    q = q or contrast_q(n)
    if n < 2 * q:
        raise ValueError(f"corpus of {n} solutions is smaller than 2q = {2 * q}")
    pairs = []
    for rec in records:
        acts = np.asarray(rec.activations, dtype=float)
        if len(acts) != n:
            raise ValueError(f"filter {rec.ref} has {len(acts)} activations for {n} solutions")
        order = sorted(range(n), key=lambda i: (-acts[i], ids[i]))
        high, low = order[:q], order[-q:][::-1]
        degenerate = bool(np.ptp(acts) == 0)
        pairs.append(ContrastPair(rec.ref, [ids[i] for i in high], [ids[i] for i in low],
                                  [float(acts[i]) for i in high], [float(acts[i]) for i in low],
                                  degenerate))
    return pairs


# ---------------------------------------------------------- persistence

def save_model(path, model: ContrastiveCNN, config: CnnConfig, in_channels: int) -> None:
    torch.save({"format": MODEL_FORMAT, "version": MODEL_VERSION, "config": config.to_dict(),
                "in_channels": in_channels, "state_dict": model.state_dict()}, path)


def load_model(path) -> tuple[ContrastiveCNN, CnnConfig]:
    doc = torch.load(path, weights_only=False)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise TrainingError(f"{path}: not a version-{MODEL_VERSION} {MODEL_FORMAT} file")
    config = CnnConfig(**doc["config"])
    model = ContrastiveCNN(doc["in_channels"], config.channels)
    model.load_state_dict(doc["state_dict"])
    model.eval()
    return model, config


# -------------------------------------------------------- gradient check

def gradient_check(shape=(1, 4, 4), batch: int = 3, seed: int = 0, eps: float = 1e-6,
                   channels=(32, 64, 128), n_params: int = 40, floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences (float64).

    Checks the input gradient in full and ``n_params`` sampled weights.
    Magnitudes below ``floor`` are compared against the floor: conv biases
    feeding batch norm have an exact zero gradient, and differencing only
    sees rounding noise there.
    """
    torch.manual_seed(seed)
    model = ContrastiveCNN(shape[0], channels).double()
    model.train()
    x = torch.randn((batch,) + tuple(shape), dtype=torch.float64, requires_grad=True)
    y = torch.tensor([1.0, 0.0, 1.0][:batch] + [0.0] * max(0, batch - 3), dtype=torch.float64)
    loss_fn = nn.BCEWithLogitsLoss()

    def loss():
        return loss_fn(model(x), y)

    params = list(model.parameters())
    model.zero_grad()
    loss().backward()
    analytic_x = x.grad.detach().clone()
    analytic_p = [p.grad.detach().clone() for p in params]

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), floor)

    worst = 0.0
    with torch.no_grad():
        flat = x.view(-1)
        for i in range(flat.numel()):
            old = float(flat[i])
            flat[i] = old + eps
            up = float(loss())
            flat[i] = old - eps
            down = float(loss())
            flat[i] = old
            worst = max(worst, rel(float(analytic_x.view(-1)[i]), (up - down) / (2 * eps)))
        rng = np.random.default_rng(seed)
        for _ in range(n_params):
            pi = int(rng.integers(len(params)))
            p = params[pi].view(-1)
            j = int(rng.integers(p.numel()))
            old = float(p[j])
            p[j] = old + eps
            up = float(loss())
            p[j] = old - eps
            down = float(loss())
            p[j] = old
            worst = max(worst, rel(float(analytic_p[pi].view(-1)[j]), (up - down) / (2 * eps)))
    return worst


# ------------------------------------------------------- planted corpus

def planted_row_sum_corpus(n: int = 256, size: int = 4, seed: int = 0, levels: int = 4,
                           shift: int = 2):
    """Synthetic matrices whose rows all share one sum (varying per matrix).

    Negatives move ``shift`` units between two rows of a positive, so row
    sums differ.
    Returns ``(positives, negatives, row_sum)`` with values scaled to [0, 1].
    """
    rng = np.random.default_rng(seed)
    pos, neg, sums = [], [], []
    for _ in range(n):
        target = int(rng.integers(size + shift, size * levels - shift + 1))
        rows = []
        for _ in range(size):
            row = np.ones(size, dtype=int)
            for _ in range(target - size):
                choices = np.nonzero(row < levels)[0]
                row[rng.choice(choices)] += 1
            rows.append(row)
        m = np.array(rows)
        pos.append(m / levels)
        sums.append(target)
        # every row sum is at least ``shift`` away from both extremes
        bad = m.copy()
        r1, r2 = rng.choice(size, size=2, replace=False)
        for _ in range(shift):
            bad[r1, rng.choice(np.nonzero(bad[r1] < levels)[0])] += 1
            bad[r2, rng.choice(np.nonzero(bad[r2] > 1)[0])] -= 1
        neg.append(bad / levels)
    return np.array(pos)[:, None], np.array(neg)[:, None], np.array(sums, dtype=float)
