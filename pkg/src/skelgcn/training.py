"""Training loop, SGD with Nesterov momentum, step-decay schedule,
checkpoint persistence and evaluation."""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataio import preprocess
from .errors import ConfigError, DivergedLossError, VersionMismatchError
from .network import Network, NetworkConfig

CHECKPOINT_MAGIC = b"SKELCKPT"
CHECKPOINT_VERSION = 1

SCHEDULE_PRESETS = {
    # desk-scale default for synthetic runs
    "desk": {"epochs": 200, "lr_decay_epochs": [120, 160]},
    # 85-epoch schedule with decays at 45/65/75
    "paper-schedule": {"epochs": 85, "lr_decay_epochs": [45, 65, 75]},
}


@dataclass
class TrainConfig:
    network: NetworkConfig
    lr: float = 0.05
    lr_decay_epochs: list = field(default_factory=lambda: [120, 160])
    lr_decay_factor: float = 0.1
    epochs: int = 200
    batch_size: int = 16
    weight_decay: float = 4e-4
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.network, NetworkConfig):
            self.network = NetworkConfig.from_dict(self.network)
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 < self.lr_decay_factor <= 1):
            raise ConfigError("lr_decay_factor must lie in (0, 1]")

    def to_dict(self):
        d = dict(self.__dict__)
        d["network"] = self.network.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def apply_preset(cfg, name):
    try:
        preset = SCHEDULE_PRESETS[name]
    except KeyError:
        raise ConfigError("unknown schedule preset %r" % name) from None
    cfg.epochs = preset["epochs"]
    cfg.lr_decay_epochs = list(preset["lr_decay_epochs"])
    return cfg


def lr_for_epoch(cfg, epoch):
    """Learning rate in force during 1-based epoch; decays take effect the
    epoch after their configured boundary."""
    n_decays = sum(1 for d in cfg.lr_decay_epochs if d < epoch)
    return cfg.lr * cfg.lr_decay_factor**n_decays


class SGD:
    """SGD with Nesterov momentum and decoupled-from-nothing weight decay
    folded into the gradient, matching the common deep-learning recipe."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0, nesterov=True):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.buffers = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            d = p.grad + self.weight_decay * p.data
            buf = self.buffers[name]
            buf *= self.momentum
            buf += d
            if self.nesterov:
                d = d + self.momentum * buf
            else:
                d = buf
            p.data -= self.lr * d

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    accuracy: float


def prepare_dataset(sequences, target_frames, center_joint=0):
    """Preprocess and stack into (B, T, N, 3) plus an int label vector."""
    arrays = [preprocess(s, target_frames, center_joint).frames for s in sequences]
    x = np.stack(arrays)
    y = np.array([s.label for s in sequences], dtype=np.int64)
    return x, y


def train(cfg, sequences, skeleton, metrics_path=None, checkpoint_path=None, progress=None):
    """Run the full schedule; returns (network, optimizer, metrics list)."""
    if not sequences:
        raise ConfigError("dataset is empty")
    if any(s.label < 0 or s.label >= cfg.network.n_classes for s in sequences):
        raise ConfigError("labels must lie in [0, n_classes)")
    net = Network(cfg.network, skeleton, seed=cfg.seed)
    x_all, y_all = prepare_dataset(sequences, cfg.network.target_frames)
    opt = SGD(net.named_parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(cfg.seed)
    n = len(sequences)
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = lr_for_epoch(cfg, epoch)
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            opt.zero_grad()
            logits = net.forward(xb, training=True)
            loss = ad.softmax_cross_entropy(logits, yb)
            val = loss.item()
            if not np.isfinite(val):
                raise DivergedLossError("loss became non-finite at epoch %d" % epoch)
            loss.backward()
            opt.step()
            total_loss += val * len(idx)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        m = EpochMetrics(epoch=epoch, lr=opt.lr, loss=total_loss / n, accuracy=correct / n)
        metrics.append(m)
        if progress:
            progress(m)
    if metrics_path:
        write_metrics(metrics, metrics_path)
    if checkpoint_path:
        save_checkpoint(net, checkpoint_path, epoch=cfg.epochs, optimizer=opt, config=cfg.to_dict())
    return net, opt, metrics


def write_metrics(metrics, path):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("epoch,lr,loss,acc\n")
        for m in metrics:
            f.write("%d,%s,%s,%s\n" % (m.epoch, repr(m.lr), repr(m.loss), repr(m.accuracy)))
    os.replace(tmp, path)


# -- evaluation ----------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # rows normalized to ratios; all-zero row if unseen
    counts: np.ndarray


def evaluate(net, sequences, batch_size=64):
    x_all, y_all = prepare_dataset(sequences, net.config.target_frames)
    k = net.config.n_classes
    counts = np.zeros((k, k), dtype=np.int64)
    for start in range(0, len(sequences), batch_size):
        xb = x_all[start : start + batch_size]
        yb = y_all[start : start + batch_size]
        pred = net.forward(xb, training=False).data.argmax(axis=1)
        for t, p in zip(yb, pred):
            counts[t, p] += 1
    totals = counts.sum(axis=1)
    confusion = np.zeros((k, k))
    nonzero = totals > 0
    confusion[nonzero] = counts[nonzero] / totals[nonzero, None]
    per_class = np.where(nonzero, np.diag(counts) / np.maximum(totals, 1), 0.0)
    accuracy = float(np.diag(counts).sum() / max(counts.sum(), 1))
    return EvalResult(
        accuracy=accuracy, per_class_accuracy=per_class, confusion=confusion, counts=counts
    )


# -- checkpoint persistence ---------------------------------------------


def _entries(net, optimizer=None):
    out = {}
    for name, p in net.named_parameters().items():
        out["param/" + name] = p.data
    for name, b in net.named_buffers().items():
        out["buffer/" + name] = b
    if optimizer is not None:
        for name, b in optimizer.buffers.items():
            out["momentum/" + name] = b
    return out


def save_checkpoint(net, path, epoch=0, optimizer=None, config=None):
    blob = json.dumps(config if config is not None else {}, sort_keys=True).encode()
    entries = _entries(net, optimizer)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<Q", epoch))
        f.write(struct.pack("<Q", len(entries)))
        for name in sorted(entries):
            data = np.ascontiguousarray(entries[name], dtype=np.float64)
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<Q", dim))
            f.write(data.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns dict with keys config, epoch, tensors."""
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise VersionMismatchError("not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError("checkpoint version %d unsupported" % version)
        (blob_len,) = struct.unpack("<Q", f.read(8))
        config = json.loads(f.read(blob_len).decode())
        (epoch,) = struct.unpack("<Q", f.read(8))
        (n_entries,) = struct.unpack("<Q", f.read(8))
        tensors = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).copy()
            tensors[name] = data
    return {"config": config, "epoch": epoch, "tensors": tensors}


def restore_network(ckpt, skeleton):
    """Rebuild a network from a checkpoint produced by save_checkpoint."""
    net_cfg = NetworkConfig.from_dict(ckpt["config"]["network"])
    net = Network(net_cfg, skeleton, seed=int(ckpt["config"].get("seed", 0)))
    apply_checkpoint(net, ckpt)
    return net


def apply_checkpoint(net, ckpt, optimizer=None):
    params = net.named_parameters()
    for name, p in params.items():
        p.data = ckpt["tensors"]["param/" + name].copy()
    for name in net.named_buffers():
        net.set_buffer(name, ckpt["tensors"]["buffer/" + name])
    if optimizer is not None:
        for name in optimizer.buffers:
            key = "momentum/" + name
            if key in ckpt["tensors"]:
                optimizer.buffers[name] = ckpt["tensors"][key].copy()
    return net
