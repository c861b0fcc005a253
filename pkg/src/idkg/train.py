"""Stage-2 model: fusion, contrastive head and classifier, with training and checkpoints."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DivergenceError, IDKGError, ManifestMismatch
from .fusion import (
    MODALITIES,
    attend_and_fuse,
    attend_backward,
    attention_teacher_loss,
    init_fusion,
    project_backward,
    project_modalities,
    update_buffers,
)
from .gcacl import SIMILARITIES, GenreSpace, gcacl_loss, init_affine
from .io import read_manifest, write_manifest
from .numerics import OptimizerConfig, ParamStore, linear_backward, linear_forward, optimizer_step, sigmoid
from .numerics import load_tensor, save_tensor, to_f32_grid

P_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    tau: float = 0.1
    atten: bool = True
    contra: bool = True
    use_kg: bool = True
    use_text: bool = True
    use_image: bool = True
    genre_init: str = "kg"
    similarity: str = "dot"
    d_p: int = 512
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch normalization)")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epochs < 0 or self.d_p < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, d_p >= 1 and lr > 0 required")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError("optimizer must be 'adamw' or 'sgd'")
        if self.genre_init not in ("kg", "random"):
            raise ValueError("genre_init must be 'kg' or 'random'")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")
        if not (self.use_text or self.use_image or self.use_kg):
            raise ValueError("at least one modality must be enabled")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**values)

    @property
    def modalities(self) -> tuple[str, ...]:
        on = {"text": self.use_text, "image": self.use_image, "kg": self.use_kg}
        return tuple(m for m in MODALITIES if on[m])


@dataclass
class SampleSet:
    """Aligned per-sample model inputs."""

    ids: list[str]
    text: np.ndarray
    image: np.ndarray
    kg: np.ndarray
    present: np.ndarray
    pseudo: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            ids=[self.ids[i] for i in idx],
            text=self.text[idx],
            image=self.image[idx],
            kg=self.kg[idx],
            present=self.present[idx],
            pseudo=self.pseudo[idx],
            labels=self.labels[idx],
        )

    def inputs(self, modalities) -> dict[str, np.ndarray]:
        return {m: getattr(self, m) for m in modalities}


def classify(fused: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sigmoid(fused @ W + b)


def bce_loss(p: np.ndarray, y: np.ndarray):
    """Summed binary cross-entropy with clamped probabilities; returns ``(loss, dL/dp)``."""
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).sum())
    inside = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    dp = np.where(inside, -y / pc + (1 - y) / (1 - pc), 0.0)
    return loss, dp


def decide(probs: np.ndarray, threshold: float = 0.5) -> list[set[int]]:
    return [set(np.flatnonzero(row >= threshold).tolist()) for row in probs]


class IDKGModel:
    """Trainable stage-2 parameters plus frozen genre rows."""

    def __init__(self, config: TrainConfig, dims: dict[str, int], genre_rows: np.ndarray, genres: list[str]):
        self.config = config
        self.genres = list(genres)
        self.dims = {m: int(dims[m]) for m in config.modalities}
        self.space = GenreSpace(np.asarray(genre_rows, dtype=np.float64), config.tau)
        rng = np.random.default_rng(config.seed)
        params, self.buffers = init_fusion(self.dims, config.d_p, rng)
        params.update(init_affine(self.space.rows.shape[1], config.d_p))
        bound = 1.0 / np.sqrt(config.d_p)
        params["cls.W"] = rng.uniform(-bound, bound, (config.d_p, len(self.genres)))
        params["cls.b"] = rng.uniform(-bound, bound, len(self.genres))
        self.store = ParamStore(params)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.store.params

    @property
    def modalities(self) -> tuple[str, ...]:
        return self.config.modalities

    def forward(self, batch: SampleSet, train: bool, gates=None):
        """Eval/train forward pass; returns ``(fused_batch, probabilities, caches)``."""
        h, pcache, stats = project_modalities(batch.inputs(self.modalities), self.params, self.buffers, train)
        fb, acache = attend_and_fuse(h, self.params, gates)
        logits, ccache = linear_forward(fb.fused, self.params["cls.W"], self.params["cls.b"])
        return fb, sigmoid(logits), (pcache, acache, ccache, stats)

    def loss_and_grads(self, batch: SampleSet, params: dict | None = None):
        """Loss components and gradients for one train-mode batch.

        ``params`` temporarily replaces the live parameters (used by the
        finite-difference checks).  Returns ``(components, grads, batch_stats)``.
        """
        saved = self.store.params
        if params is not None:
            self.store.params = params
        try:
            return self._loss_and_grads(batch)
        finally:
            self.store.params = saved

    def _loss_and_grads(self, batch: SampleSet):
        cfg = self.config
        fb, p, (pcache, acache, ccache, stats) = self.forward(batch, train=True)
        y = batch.labels.astype(np.float64)
        components = {}
        components["class"], dp = bce_loss(p, y)
        dlogits = dp * p * (1.0 - p)
        dfused, grads = self._classifier_backward(dlogits, ccache)

        dgates = {}
        if cfg.atten and "kg" in self.modalities:
            components["atten"], dgates["kg"] = attention_teacher_loss(fb.gates["kg"], batch.pseudo)
        if cfg.contra:
            rows = np.flatnonzero(y.sum(axis=1) > 0)
            affine = {k: self.params[k] for k in ("gcacl.W", "gcacl.b")}
            loss_c, _, dF, g_aff = gcacl_loss(fb.fused[rows], y[rows], self.space, affine, cfg.similarity)
            components["contra"] = loss_c
            dfused[rows] += dF
            grads.update(g_aff)
        components["total"] = sum(v for k, v in components.items())
        for name, value in components.items():
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite {name} loss")

        dh, g_att = attend_backward(dfused, acache, dgates)
        grads.update(g_att)
        grads.update(project_backward(dh, pcache))
        return components, grads, stats

    def _classifier_backward(self, dlogits, ccache):
        dfused, dW, db = linear_backward(dlogits, ccache)
        return dfused, {"cls.W": dW, "cls.b": db}

    def optimizer_config(self) -> OptimizerConfig:
        wd = self.config.weight_decay if self.config.optimizer == "adamw" else 0.0
        return OptimizerConfig(kind=self.config.optimizer, lr=self.config.lr, weight_decay=wd)

    def predict_proba(self, samples: SampleSet) -> np.ndarray:
        return self.forward(samples, train=False)[1]

    def gates(self, samples: SampleSet) -> dict[str, np.ndarray]:
        return self.forward(samples, train=False)[0].gates

    def round_to_f32(self) -> None:
        for k in self.store.params:
            self.store.params[k] = to_f32_grid(self.store.params[k])
        for k in self.buffers:
            self.buffers[k] = to_f32_grid(self.buffers[k])


def train_step(model: IDKGModel, batch: SampleSet, opt: OptimizerConfig | None = None) -> dict[str, float]:
    """One optimizer step on ``batch``; returns the loss components."""
    components, grads, stats = model.loss_and_grads(batch)
    optimizer_step(model.store, grads, opt or model.optimizer_config())
    update_buffers(model.buffers, stats, len(batch))
    return components


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled batches; a trailing batch of one sample is merged into the previous one."""
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    for k, s in enumerate(starts):
        end = starts[k + 1] if k + 1 < len(starts) else n
        yield order[s:end]


def fit(model: IDKGModel, samples: SampleSet, progress=None) -> list[dict[str, float]]:
    """Train for ``config.epochs``; returns per-epoch summed loss components."""
    if len(samples) < 2:
        raise IDKGError("need at least 2 training samples")
    cfg = model.config
    rng = np.random.default_rng([cfg.seed, 1])
    opt = model.optimizer_config()
    history = []
    for epoch in range(cfg.epochs):
        totals: dict[str, float] = {}
        for idx in iterate_batches(len(samples), cfg.batch_size, rng):
            try:
                comps = train_step(model, samples.subset(idx), opt)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from None
            for k, v in comps.items():
                totals[k] = totals.get(k, 0.0) + v
        history.append(totals)
        if progress is not None:
            progress(epoch, totals)
    model.round_to_f32()
    return history


def predict_labels(model: IDKGModel, samples: SampleSet, threshold: float | None = None) -> list[set[int]]:
    thr = model.config.threshold if threshold is None else threshold
    return decide(model.predict_proba(samples), thr)


def _tensor_file(prefix: str, name: str) -> str:
    return f"{prefix}.{name}.tns"


def save_checkpoint(model: IDKGModel, directory: str | os.PathLike, hashes: dict | None = None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for prefix, table in (("param", model.params), ("buffer", model.buffers), ("frozen", {"genre_rows": model.space.rows})):
        for name, arr in sorted(table.items()):
            fname = _tensor_file(prefix, name)
            save_tensor(directory / fname, arr)
            files.append(fname)
    payload = {
        "kind": "checkpoint",
        "config": asdict(model.config),
        "dims": model.dims,
        "genres": model.genres,
        "params": sorted(model.params),
        "buffers": sorted(model.buffers),
        "inputs": dict(hashes or {}),
    }
    return write_manifest(directory, payload, files)


def load_checkpoint(directory: str | os.PathLike) -> tuple[IDKGModel, dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("kind") != "checkpoint":
        raise ManifestMismatch(f"{directory} is not a stage-2 checkpoint")
    cfg = TrainConfig.from_dict(manifest["config"])
    rows = load_tensor(directory / _tensor_file("frozen", "genre_rows"))
    model = IDKGModel(cfg, manifest["dims"], rows, manifest["genres"])
    for name in manifest["params"]:
        model.store.params[name] = load_tensor(directory / _tensor_file("param", name))
    for name in manifest["buffers"]:
        model.buffers[name] = load_tensor(directory / _tensor_file("buffer", name))
    return model, manifest


def check_inputs(manifest: dict, **hashes: str) -> None:
    """Raise ``ManifestMismatch`` if any given input hash differs from the checkpoint's record."""
    recorded = manifest.get("inputs", {})
    for key, value in hashes.items():
        if key in recorded and recorded[key] != value:
            raise ManifestMismatch(f"{key} hash {value[:12]} does not match checkpoint ({recorded[key][:12]})")
