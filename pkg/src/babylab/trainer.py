"""MLM pretraining loop, AdamW optimizer, and the resumable sweep runner."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .corpus import Sentence
from .evaluator import MinimalPair, evaluate_suite
from .masking import DEFAULT_MASK_PROB, IGNORE_LABEL, MaskedExample, build_epoch
from .model import ModelConfig, Parameters, backward, init, save_checkpoint
from .tokenizer import PAD_ID, Vocabulary
from .util import atomic_write_json, read_json, stable_hash, subseed

GRID_EPOCHS = (1, 5, 10)
GRID_NUM_PATTERNS = (1, 5, 10, 20, 50)
GRID_BATCH_SIZES = (16, 32, 64, 128)
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BUDGET = 36

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01
WARMUP_FRACTION = 0.1

LOSS_CURVE_FULL_LIMIT = 100_000
LOSS_CURVE_STRIDE = 10


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class Hyperparams:
    epochs: int
    num_patterns: int
    batch_size: int
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    preset_name: str = "xs"

    def __post_init__(self) -> None:
        if self.preset_name != "custom":
            if self.epochs not in GRID_EPOCHS:
                raise ValueError(f"epochs must be one of {GRID_EPOCHS}, got {self.epochs}")
            if self.num_patterns not in GRID_NUM_PATTERNS:
                raise ValueError(
                    f"num_patterns must be one of {GRID_NUM_PATTERNS}, got {self.num_patterns}"
                )
            if self.batch_size not in GRID_BATCH_SIZES:
                raise ValueError(
                    f"batch_size must be one of {GRID_BATCH_SIZES}, got {self.batch_size}"
                )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def hyperparams_hash(hp: Hyperparams) -> str:
    return stable_hash(asdict(hp))


@dataclass
class RunRecord:
    hyperparams: Hyperparams
    loss_curve: list[float] = field(default_factory=list)
    eval: dict[str, float] = field(default_factory=dict)
    overall: float | None = None
    wall_time: float = 0.0
    checkpoint: str | None = None
    error: str | None = None

    @property
    def run_hash(self) -> str:
        return hyperparams_hash(self.hyperparams)

    def to_json_dict(self) -> dict:
        return {
            "hash": self.run_hash,
            "hyperparams": asdict(self.hyperparams),
            "loss_curve": self.loss_curve,
            "eval": self.eval,
            "overall": self.overall,
            "wall_time": self.wall_time,
            "checkpoint": self.checkpoint,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunRecord":
        return cls(
            hyperparams=Hyperparams(**d["hyperparams"]),
            loss_curve=list(d.get("loss_curve", [])),
            eval=dict(d.get("eval", {})),
            overall=d.get("overall"),
            wall_time=d.get("wall_time", 0.0),
            checkpoint=d.get("checkpoint"),
            error=d.get("error"),
        )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def optimizer_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    step_index: int,
    weight_decay: float = WEIGHT_DECAY,
) -> None:
    """One decoupled-weight-decay adaptive-moment update, in place.

    Weight decay applies to matrices only; biases and layer-norm vectors
    (all 1-D arrays) are excluded.
    """
    t = step_index + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for name, theta in arrays.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        theta -= lr * update
        if weight_decay and theta.ndim >= 2:
            theta -= lr * weight_decay * theta


def lr_at_step(base_lr: float, step_index: int, total_steps: int) -> float:
    """Linear warmup over the first tenth of training, then constant."""
    warmup = max(1, int(WARMUP_FRACTION * total_steps))
    if step_index < warmup:
        return base_lr * (step_index + 1) / warmup
    return base_lr


def _collate(batch: list[MaskedExample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = max(len(ex.input_ids) for ex in batch)
    ids = np.full((len(batch), width), PAD_ID, dtype=np.int64)
    labels = np.full((len(batch), width), IGNORE_LABEL, dtype=np.int64)
    for r, ex in enumerate(batch):
        ids[r, : len(ex.input_ids)] = ex.input_ids
        labels[r, : len(ex.labels)] = ex.labels
    return ids, ids != PAD_ID, labels


def _batches(stream: Iterable[MaskedExample], batch_size: int) -> Iterator[list[MaskedExample]]:
    batch: list[MaskedExample] = []
    for ex in stream:
        batch.append(ex)
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def num_steps(num_sentences: int, hp: Hyperparams) -> int:
    per_epoch = math.ceil(num_sentences * hp.num_patterns / hp.batch_size)
    return hp.epochs * per_epoch


def pretrain(
    config: ModelConfig,
    hp: Hyperparams,
    sentences: Sequence[Sentence],
    vocab: Vocabulary,
    mask_prob: float = DEFAULT_MASK_PROB,
    initial_params: Parameters | None = None,
    grad_clip: float | None = None,
    progress: Callable[[int, int, float], None] | None = None,
) -> tuple[Parameters, list[float]]:
    """Train with the augmented stream; returns parameters and per-step losses.

    Fully deterministic in hp.seed: initialization, mask patterns, epoch
    shuffles, and dropout all derive named sub-seeds from it.
    """
    if not sentences:
        raise ValueError("cannot pretrain on an empty corpus")
    params = initial_params if initial_params is not None else init(config, subseed(hp.seed, "init"))
    state = AdamState.zeros_like(params.arrays)
    dropout_rng = np.random.default_rng(subseed(hp.seed, "dropout"))
    total = num_steps(len(sentences), hp)
    loss_curve: list[float] = []
    step = 0
    for epoch in range(hp.epochs):
        stream = build_epoch(sentences, hp.num_patterns, mask_prob, hp.seed, epoch, vocab)
        for batch in _batches(stream, hp.batch_size):
            ids, mask, labels = _collate(batch)
            loss, grads = backward(params, ids, labels, mask, train=True, dropout_rng=dropout_rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss} at step {step}")
            if grad_clip is not None:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > grad_clip:
                    scale = grad_clip / norm
                    for g in grads.values():
                        g *= scale
            optimizer_step(params.arrays, grads, state, lr_at_step(hp.learning_rate, step, total), step)
            loss_curve.append(loss)
            if progress is not None:
                progress(step, total, loss)
            step += 1
    return params, loss_curve


def _persisted_curve(curve: list[float]) -> list[float]:
    if len(curve) <= LOSS_CURVE_FULL_LIMIT:
        return curve
    return curve[::LOSS_CURVE_STRIDE]


def sorted_grid(grid: Iterable[Hyperparams]) -> list[Hyperparams]:
    return sorted(grid, key=lambda hp: (hp.epochs, hp.num_patterns, hp.batch_size))


def full_grid(
    preset_name: str, seed: int = 0, learning_rate: float = DEFAULT_LEARNING_RATE
) -> list[Hyperparams]:
    """All 60 grid points (epochs x patterns x batch sizes), in sweep order."""
    return sorted_grid(
        Hyperparams(e, p, b, learning_rate=learning_rate, seed=seed, preset_name=preset_name)
        for e in GRID_EPOCHS
        for p in GRID_NUM_PATTERNS
        for b in GRID_BATCH_SIZES
    )


def _record_path(sweep_dir: Path, run_hash: str) -> Path:
    return sweep_dir / f"{run_hash}.json"


def _write_manifest(sweep_dir: Path) -> None:
    hashes = sorted(p.stem for p in sweep_dir.glob("*.json") if p.name != "manifest.json")
    atomic_write_json(sweep_dir / "manifest.json", {"completed": hashes})


def load_records(sweep_dir: str | Path) -> list[RunRecord]:
    sweep_dir = Path(sweep_dir)
    records = []
    for p in sorted(sweep_dir.glob("*.json")):
        if p.name == "manifest.json":
            continue
        records.append(RunRecord.from_json_dict(read_json(p)))
    return records


def execute_run(
    config: ModelConfig,
    hp: Hyperparams,
    sentences: Sequence[Sentence],
    vocab: Vocabulary,
    suite: list[MinimalPair],
    sweep_dir: Path,
    mask_prob: float = DEFAULT_MASK_PROB,
) -> RunRecord:
    """Train and evaluate one sweep point, persisting its record atomically."""
    run_hash = hyperparams_hash(hp)
    started = time.monotonic()
    record = RunRecord(hyperparams=hp)
    try:
        params, curve = pretrain(config, hp, sentences, vocab, mask_prob=mask_prob)
        record.loss_curve = _persisted_curve(curve)
        checkpoint = f"{run_hash}.ckpt"
        save_checkpoint(params, sweep_dir / checkpoint, seed=hp.seed, step=len(curve))
        record.checkpoint = checkpoint
        scores, overall = evaluate_suite(params, vocab, suite)
        record.eval = {s.task: s.accuracy for s in scores}
        record.overall = overall
    except Exception as e:  # noqa: BLE001 - a failed point must not kill the sweep
        record.error = f"{type(e).__name__}: {e}"
    record.wall_time = time.monotonic() - started
    atomic_write_json(_record_path(sweep_dir, run_hash), record.to_json_dict())
    _write_manifest(sweep_dir)
    return record


def run_sweep(
    config: ModelConfig,
    grid: Iterable[Hyperparams],
    budget: int,
    sentences: Sequence[Sentence],
    vocab: Vocabulary,
    suite: list[MinimalPair],
    sweep_dir: str | Path,
    mask_prob: float = DEFAULT_MASK_PROB,
) -> list[RunRecord]:
    """Execute min(len(grid), budget) runs in sorted order, resume-safe.

    A point whose record file already exists is loaded, not re-run, so a
    killed sweep continues where it stopped. Failures are recorded in the
    run's record and the sweep continues.
    """
    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    points = sorted_grid(grid)[: max(0, budget)]
    records: list[RunRecord] = []
    for hp in points:
        if hp.preset_name != config.preset_name:
            raise ValueError(
                f"grid point preset {hp.preset_name!r} does not match config preset "
                f"{config.preset_name!r}"
            )
        path = _record_path(sweep_dir, hyperparams_hash(hp))
        if path.exists():
            records.append(RunRecord.from_json_dict(read_json(path)))
            continue
        records.append(execute_run(config, hp, sentences, vocab, suite, sweep_dir, mask_prob))
    _write_manifest(sweep_dir)
    return records


def select_best(records: Sequence[RunRecord]) -> RunRecord:
    """Highest overall; ties go to fewer epochs, fewer patterns, smaller batch."""
    eligible = [r for r in records if r.error is None and r.overall is not None]
    if not eligible:
        raise ValueError("no successful runs to select from")
    return min(
        eligible,
        key=lambda r: (
            -r.overall,
            r.hyperparams.epochs,
            r.hyperparams.num_patterns,
            r.hyperparams.batch_size,
            r.run_hash,
        ),
    )
