"""Binary MC-dropout ResNet50 segment classifiers.

Each residual block carries one dropout layer and one more sits before the
final head; at Monte Carlo inference only the dropout modules are switched
to train mode, so repeated stochastic passes approximate the predictive
posterior while batch norm stays in eval statistics.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models.resnet import Bottleneck, ResNet

from murmur.config import ModelConfig
from murmur.dsp import Spectrogram
from murmur.errors import EmptyDataset, SingleClassDataset, WeightsUnavailable
from murmur.ingestion import MurmurLabel

LOGGER = logging.getLogger(__name__)

WEIGHTS_ENV_VAR = "MURMUR_RESNET50_WEIGHTS"


@dataclass(frozen=True)
class BinaryTask:
    """One binary decomposition of the ternary murmur problem."""

    name: str
    positive_label: MurmurLabel

    def binarize(self, label: MurmurLabel) -> int:
        return 1 if label is self.positive_label else 0


PRESENT_VS_REST = BinaryTask(name="present_vs_rest", positive_label=MurmurLabel.PRESENT)
UNKNOWN_VS_REST = BinaryTask(name="unknown_vs_rest", positive_label=MurmurLabel.UNKNOWN)

TASKS = {t.name: t for t in (PRESENT_VS_REST, UNKNOWN_VS_REST)}


@dataclass
class ProbEstimate:
    """MC-dropout estimate of the positive-class probability for one segment."""

    mean_prob: float
    std: float
    n_samples: int


def _bottleneck_with_dropout(p: float) -> type:
    """Bottleneck subclass applying one dropout after the residual join."""

    class DropoutBottleneck(Bottleneck):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, **kwargs)
            self.block_dropout = nn.Dropout(p)

        def forward(self, x):
            return self.block_dropout(super().forward(x))

    return DropoutBottleneck


def spectrogram_to_input(values: np.ndarray, input_size: tuple[int, int]) -> torch.Tensor:
    """[3, H, W] network input: bilinear resize, then exact copy into 3 channels."""
    t = torch.from_numpy(np.ascontiguousarray(values)).to(torch.float32)[None, None]
    t = F.interpolate(t, size=tuple(input_size), mode="bilinear", align_corners=False)
    return t[0].repeat(3, 1, 1)


def _load_backbone_weights(net: ResNet, path: str | Path) -> None:
    """Load a torchvision resnet50 state dict into the dropout variant (head excluded)."""
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    own = net.state_dict()
    missing = [k for k in own if not k.startswith("fc.") and "block_dropout" not in k and k not in state]
    if missing:
        raise WeightsUnavailable(f"weights file {path} lacks backbone keys, e.g. {missing[:3]}")
    own.update(state)
    net.load_state_dict(own)


class SegmentClassifier:
    """One binary MC-dropout ResNet50 over log-mel segments."""

    def __init__(self, task: BinaryTask, cfg: ModelConfig, weights_path: str | Path | None = None):
        cfg.validate()
        self.task = task
        self.cfg = cfg
        self.history: list[dict] = []
        torch.manual_seed(cfg.seed)
        block = _bottleneck_with_dropout(cfg.dropout_p)
        self.net = ResNet(block, [3, 4, 6, 3], num_classes=2)
        self.net.fc = nn.Sequential(
            nn.Dropout(cfg.dropout_p),
            nn.Linear(self.net.fc.in_features, 2),
        )
        if cfg.pretrained:
            path = weights_path or os.environ.get(WEIGHTS_ENV_VAR)
            if not path or not Path(path).exists():
                raise WeightsUnavailable(
                    f"pretrained weights requested but no file found; set {WEIGHTS_ENV_VAR} "
                    "or pass weights_path"
                )
            _load_backbone_weights(self.net, path)
        self.net.eval()

    def preprocess(self, spec: Spectrogram) -> torch.Tensor:
        return spectrogram_to_input(spec.values, self.cfg.input_size)

    def predict_proba(self, batch: torch.Tensor) -> torch.Tensor:
        """Softmax class probabilities [B, 2] without stochasticity."""
        self.net.eval()
        with torch.no_grad():
            return F.softmax(self.net(batch), dim=1)

    def _enable_mc_dropout(self) -> None:
        self.net.eval()
        for module in self.net.modules():
            if isinstance(module, nn.Dropout):
                module.train()

    def mc_predict(self, spec: Spectrogram, n_mc: int | None = None) -> ProbEstimate:
        """Monte Carlo positive-class probability: mean and sample std over n_mc passes.

        With dropout_p = 0 or a single sample the pass is deterministic and
        the std is exactly zero.
        """
        n = self.cfg.n_mc_samples if n_mc is None else int(n_mc)
        if n < 1:
            raise ValueError(f"n_mc must be >= 1, got {n}")
        x = self.preprocess(spec)[None]
        if n == 1 or self.cfg.dropout_p == 0:
            prob = self.predict_proba(x)[0, 1].item()
            return ProbEstimate(mean_prob=prob, std=0.0, n_samples=n)
        self._enable_mc_dropout()
        with torch.no_grad():
            probs = F.softmax(self.net(x.repeat(n, 1, 1, 1)), dim=1)[:, 1]
        self.net.eval()
        return ProbEstimate(
            mean_prob=probs.mean().item(),
            std=probs.std(unbiased=True).item(),
            n_samples=n,
        )

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "task": self.task.name,
                "config": _cfg_dict(self.cfg),
                "state_dict": self.net.state_dict(),
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SegmentClassifier":
        if not Path(path).exists():
            raise WeightsUnavailable(f"missing model checkpoint: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        cfg = ModelConfig(**{**payload["config"], "input_size": tuple(payload["config"]["input_size"]), "pretrained": False})
        clf = cls(TASKS[payload["task"]], cfg)
        clf.net.load_state_dict(payload["state_dict"])
        clf.net.eval()
        clf.history = payload.get("history", [])
        return clf


def _cfg_dict(cfg: ModelConfig) -> dict:
    import dataclasses

    out = dataclasses.asdict(cfg)
    out["input_size"] = list(out["input_size"])
    return out


def build_bayesian_resnet(
    task: BinaryTask,
    cfg: ModelConfig,
    weights_path: str | Path | None = None,
) -> SegmentClassifier:
    """Construct the segment classifier; deterministic given cfg.seed."""
    return SegmentClassifier(task, cfg, weights_path=weights_path)


def _balanced_accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    recalls = []
    for cls in np.unique(y_true):
        mask = y_true == cls
        recalls.append(float((y_pred[mask] == cls).mean()))
    return float(np.mean(recalls))


def _recalibrate_batchnorm(net: nn.Module, X: torch.Tensor, batch_size: int) -> None:
    """Recompute BN running stats as exact averages over the training inputs.

    A handful of optimizer steps leaves the default exponential running
    stats far from the activation distribution, which wrecks eval-mode
    predictions; momentum=None makes torch accumulate a cumulative mean.
    """
    bns = [m for m in net.modules() if isinstance(m, nn.BatchNorm2d)]
    if not bns:
        return
    momenta = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None
    net.train()
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            net(X[i : i + batch_size])
    for m, momentum in zip(bns, momenta):
        m.momentum = momentum
    net.eval()


def _eval_metrics(clf: SegmentClassifier, X: torch.Tensor, y: np.ndarray, batch_size: int) -> dict:
    """Validation metrics along the deployment path: MC-mean positive probability.

    BN running stats are accumulated with dropout active, so the stochastic
    passes are the calibrated ones; a dropout-off pass is distribution-shifted.
    With dropout_p = 0 this reduces to a single deterministic pass.
    """
    n_mc = clf.cfg.n_mc_samples if clf.cfg.dropout_p > 0 else 1
    clf._enable_mc_dropout()
    batches = []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            batch = X[i : i + batch_size]
            acc = torch.zeros(len(batch))
            for _ in range(n_mc):
                acc += F.softmax(clf.net(batch), dim=1)[:, 1]
            batches.append(acc / n_mc)
    clf.net.eval()
    p = torch.cat(batches).numpy()
    pred = (p >= 0.5).astype(np.int64)
    eps = 1e-12
    loss = float(-np.mean(y * np.log(np.maximum(p, eps)) + (1 - y) * np.log(np.maximum(1 - p, eps))))
    return {
        "loss": loss,
        "accuracy": float((pred == y).mean()),
        "balanced_accuracy": _balanced_accuracy(y, pred),
    }


def train_segment_classifier(
    model: SegmentClassifier,
    data: Sequence[tuple[Spectrogram, int]],
    cfg: ModelConfig,
    val_data: Sequence[tuple[Spectrogram, int]] | None = None,
) -> tuple[SegmentClassifier, list[dict]]:
    """Minimize unweighted cross-entropy; keep the epoch with best validation balanced accuracy.

    Training and validation segments must come from disjoint patient sets;
    that contract is the caller's. Without validation data the final epoch
    is returned.
    """
    if len(data) == 0:
        raise EmptyDataset("no training segments")
    labels = {label for _, label in data}
    if len(labels) < 2:
        raise SingleClassDataset(f"all training labels identical ({labels.pop()})")

    torch.manual_seed(cfg.seed)
    X = torch.stack([model.preprocess(spec) for spec, _ in data])
    y = torch.tensor([label for _, label in data], dtype=torch.int64)
    X_val = y_val = None
    if val_data:
        X_val = torch.stack([model.preprocess(spec) for spec, _ in val_data])
        y_val = np.array([label for _, label in val_data], dtype=np.int64)

    optimizer = torch.optim.Adam(model.net.parameters(), lr=cfg.learning_rate)
    criterion = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(cfg.seed)

    history: list[dict] = []
    best_metric = -1.0
    best_state = None
    for epoch in range(cfg.max_epochs):
        model.net.train()
        perm = torch.randperm(len(X), generator=generator)
        epoch_losses = []
        for i in range(0, len(X), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            optimizer.zero_grad()
            loss = criterion(model.net(X[idx]), y[idx])
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
        _recalibrate_batchnorm(model.net, X, cfg.batch_size)
        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if X_val is not None:
            val = _eval_metrics(model, X_val, y_val, cfg.batch_size)
            entry.update({f"val_{k}": v for k, v in val.items()})
            if val["balanced_accuracy"] > best_metric:
                best_metric = val["balanced_accuracy"]
                best_state = copy.deepcopy(model.net.state_dict())
        history.append(entry)
        LOGGER.info("%s epoch %d: %s", model.task.name, epoch, entry)

    if best_state is not None:
        model.net.load_state_dict(best_state)
    model.net.eval()
    model.history = history
    return model, history


def write_model_manifest(
    path: str | Path,
    clf: SegmentClassifier,
    split_hash: str,
) -> None:
    """Human-readable companion to the binary checkpoint."""
    manifest = {
        "task": clf.task.name,
        "config": _cfg_dict(clf.cfg),
        "split_hash": split_hash,
        "epoch_metrics": clf.history,
        "best_epoch": _best_epoch(clf.history),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _best_epoch(history: list[dict]) -> int | None:
    with_val = [h for h in history if "val_balanced_accuracy" in h]
    if not with_val:
        return history[-1]["epoch"] if history else None
    return max(with_val, key=lambda h: h["val_balanced_accuracy"])["epoch"]
