"""Training drivers for the two methods, plus sweeps, seeded averaging,
and checkpointing.

``finetune`` trains on gold labels (the loss collapses to cross-entropy,
alpha = 1). ``clkd`` trains on a teacher's soft labels only (alpha = 0):
the student sees the target-language side of each parallel pair while the
teacher logits were produced from the source-language side, joined by pair
id. Both run the same engine, so the two methods are literally one code
path with different loss settings.

Training is deterministic given (config, seed, data): parameter
initialization is drawn from a seeded generator and the per-epoch data
order is a pure function of (seed, epoch), so a run can be stopped,
checkpointed, and resumed bitwise-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
import random
import struct
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import AS2Dataset, EvalReport, evaluate_dataset, flatten_pairs
from .errors import ConfigError, DataError, NumericError
from .losses import KDConfig, kd_loss_batch, kd_loss_grad
from .student import (
    OptimState,
    StudentConfig,
    StudentParams,
    _backward_from,
    _forward_full,
    adamw_step,
    featurize,
    init_opt_state,
    init_params,
    lr_at,
    make_scorer,
)
from .teacher import TeacherStore, teacher_logits
from .translate import ParallelPair

TAU_SEARCH_SPACE = (1.0, 3.0, 5.0, 7.0)
METHODS = ("finetune", "clkd")

# Reference iteration budgets used in the experiments this library models;
# desk-scale runs typically use far fewer.
REFERENCE_ITERS = {"single_small": 20_000, "single_large": 40_000, "multilingual": 150_000}

TrainCallback = Callable[[int, StudentParams, OptimState, float], None]


@dataclass(frozen=True)
class TrainConfig:
    method: str = "finetune"
    alpha: float | None = None
    tau: float = 1.0
    total_iters: int = 20_000
    batch_size: int = 32
    base_lr: float = 1e-3
    warmup_frac: float = 0.025
    weight_decay: float = 0.01
    seed: int = 0
    languages: str = "all"
    teacher_mode: str = "strict"
    reduction: str = "mean"
    allow_alpha_override: bool = False
    student: StudentConfig = field(default_factory=StudentConfig)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.total_iters < 0:
            raise ConfigError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must be in (0, 1), got {self.warmup_frac}")
        if self.teacher_mode not in ("strict", "lenient"):
            raise ConfigError(f"teacher_mode must be strict or lenient, got {self.teacher_mode!r}")
        if self.alpha is not None and self.alpha != self._method_alpha():
            if not self.allow_alpha_override:
                raise ConfigError(
                    f"method {self.method!r} fixes alpha={self._method_alpha()}; "
                    f"got alpha={self.alpha} (set allow_alpha_override to force)"
                )
            if not 0.0 <= self.alpha <= 1.0:
                raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")

    def _method_alpha(self) -> float:
        return 1.0 if self.method == "finetune" else 0.0

    @property
    def effective_alpha(self) -> float:
        if self.alpha is not None and self.allow_alpha_override:
            return self.alpha
        return self._method_alpha()

    def kd_config(self) -> KDConfig:
        return KDConfig(alpha=self.effective_alpha, tau=self.tau, reduction=self.reduction)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        student = d.pop("student", {})
        return cls(student=StudentConfig(**student), **d)


@dataclass(frozen=True)
class TrainItem:
    """One training pair after source resolution: text the student sees,
    an optional gold label, and optional frozen teacher logits."""

    pair_id: str
    q_text: str
    s_text: str
    language: str
    label: int | None = None
    teacher: tuple[float, float] | None = None


@dataclass
class MixedStream:
    """A unified pool of training pairs with a deterministic epoch order."""

    items: list[TrainItem]
    seed: int

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for item in self.items:
            if item.pair_id in seen:
                raise DataError(f"duplicate pair_id {item.pair_id!r} in training stream")
            seen.add(item.pair_id)
        self._orders: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return len(self.items)

    def epoch_order(self, epoch: int) -> list[int]:
        """Item order for one epoch: a fresh shuffle keyed by (seed, epoch)."""
        if epoch not in self._orders:
            idx = list(range(len(self.items)))
            random.Random(f"{self.seed}:{epoch}").shuffle(idx)
            self._orders[epoch] = idx
        return self._orders[epoch]

    def item_at(self, global_index: int) -> TrainItem:
        n = len(self.items)
        return self.items[self.epoch_order(global_index // n)[global_index % n]]


def _items_from_dataset(dataset: AS2Dataset, require_labels: bool) -> list[TrainItem]:
    items = []
    for rec in flatten_pairs(dataset):
        if require_labels and rec.label is None:
            raise DataError(f"pair {rec.pair_id!r} has no gold label")
        items.append(
            TrainItem(
                pair_id=rec.pair_id,
                q_text=rec.q_text,
                s_text=rec.s_text,
                language=rec.language,
                label=rec.label,
            )
        )
    return items


def _items_from_pairs(pairs: Sequence[ParallelPair]) -> list[TrainItem]:
    return [
        TrainItem(
            pair_id=p.pair_id,
            q_text=p.target.q_text,
            s_text=p.target.s_text,
            language=p.target.language,
            label=p.label,
        )
        for p in pairs
    ]


def multilingual_mix(
    inputs: Sequence[AS2Dataset | Sequence[ParallelPair]],
    seed: int,
    require_labels: bool = False,
) -> MixedStream:
    """Concatenate pair pools from several languages into one stream.

    Language tags are preserved on every item; a pair id occurring in more
    than one input is an error since it would make teacher joins ambiguous.
    """
    if not inputs:
        raise DataError("multilingual_mix needs at least one input collection")
    items: list[TrainItem] = []
    for inp in inputs:
        if isinstance(inp, AS2Dataset):
            items.extend(_items_from_dataset(inp, require_labels))
        else:
            items.extend(_items_from_pairs(list(inp)))
    return MixedStream(items=items, seed=seed)


def _check_language_scope(stream: MixedStream, cfg: TrainConfig) -> None:
    langs = {item.language for item in stream.items}
    if cfg.languages != "all":
        code = cfg.languages.removeprefix("single:")
        if langs != {code}:
            raise ConfigError(
                f"config requests single language {code!r} but stream contains {sorted(langs)}"
            )


def _run_engine(
    stream: MixedStream,
    cfg: TrainConfig,
    initial: tuple[StudentParams, OptimState] | None = None,
    start_iter: int = 0,
    callback: TrainCallback | None = None,
) -> tuple[StudentParams, OptimState]:
    if len(stream) == 0:
        raise DataError("training stream is empty")
    _check_language_scope(stream, cfg)
    kd = cfg.kd_config()

    if initial is not None:
        params, state = initial
    else:
        if start_iter != 0:
            raise ConfigError("start_iter > 0 requires initial (params, state)")
        rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg.student, rng)
        state = init_opt_state(params, rng)
    params.check_shapes()

    feats = [featurize(it.q_text, it.s_text, cfg.student) for it in stream.items]
    n = len(stream)
    b = cfg.batch_size

    for it in range(start_iter, cfg.total_iters):
        idxs = [
            stream.epoch_order(g // n)[g % n] for g in range(it * b, (it + 1) * b)
        ]
        fqs = [feats[i][0] for i in idxs]
        fss = [feats[i][1] for i in idxs]
        batch = [stream.items[i] for i in idxs]

        cache = _forward_full(params, fqs, fss)
        z_s = [(float(z[0]), float(z[1])) for z in cache.logits]
        z_t = [item.teacher for item in batch]
        ys = [item.label for item in batch]

        loss = kd_loss_batch(z_s, z_t, ys, kd)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss!r} at iteration {it}")

        grad = np.empty((b, 2), dtype=np.float64)
        for row, (zs_i, zt_i, y_i, item) in enumerate(zip(z_s, z_t, ys, batch)):
            grad[row] = kd_loss_grad(zs_i, zt_i, y_i, kd, pair_id=item.pair_id)
        if kd.reduction == "mean":
            grad /= b

        grads = _backward_from(params, cache, grad)
        lr = lr_at(it, cfg.total_iters, cfg.base_lr, cfg.warmup_frac)
        adamw_step(params, grads, state, lr, weight_decay=cfg.weight_decay)

        if callback is not None:
            callback(it + 1, params, state, loss)
    return params, state


def train_finetune(
    data: AS2Dataset | Sequence[AS2Dataset] | MixedStream,
    cfg: TrainConfig,
    initial: tuple[StudentParams, OptimState] | None = None,
    start_iter: int = 0,
    callback: TrainCallback | None = None,
) -> tuple[StudentParams, OptimState]:
    """Train on gold labels (cross-entropy; the alpha = 1 corner of the
    distillation loss). Every pair must carry a label."""
    if cfg.method != "finetune":
        raise ConfigError(f"train_finetune called with method {cfg.method!r}")
    if isinstance(data, MixedStream):
        stream = data
        for item in stream.items:
            if item.label is None:
                raise DataError(f"pair {item.pair_id!r} has no gold label")
    else:
        datasets = [data] if isinstance(data, AS2Dataset) else list(data)
        stream = multilingual_mix(datasets, seed=cfg.seed, require_labels=True)
    return _run_engine(stream, cfg, initial=initial, start_iter=start_iter, callback=callback)


def train_clkd(
    pairs: Sequence[ParallelPair] | MixedStream,
    teacher: TeacherStore,
    cfg: TrainConfig,
    initial: tuple[StudentParams, OptimState] | None = None,
    start_iter: int = 0,
    callback: TrainCallback | None = None,
) -> tuple[StudentParams, OptimState]:
    """Distill the teacher's soft labels into the student (alpha = 0).

    The student trains on the target-language text of each pair against
    the teacher logits stored under the same pair id. In lenient mode
    unresolvable pairs are dropped and counted; more than 10% of them is
    treated as a data problem and aborts.
    """
    if cfg.method != "clkd":
        raise ConfigError(f"train_clkd called with method {cfg.method!r}")
    if isinstance(pairs, MixedStream):
        raw_items = pairs.items
    else:
        raw_items = _items_from_pairs(list(pairs))

    # With the default alpha = 0, gold labels are dropped up front so that
    # labeled and unlabeled inputs produce identical training streams. An
    # explicit alpha override keeps them (the loss then needs them).
    keep_labels = cfg.effective_alpha > 0.0
    resolved: list[TrainItem] = []
    skipped = 0
    for item in raw_items:
        logits = teacher_logits(teacher, item.pair_id, mode=cfg.teacher_mode)
        if logits is None:
            skipped += 1
            continue
        resolved.append(replace(item, label=item.label if keep_labels else None, teacher=logits))
    if not raw_items:
        raise DataError("no training pairs given")
    if skipped > 0.10 * len(raw_items):
        raise DataError(
            f"{skipped} of {len(raw_items)} pairs lack teacher scores (> 10%); "
            "refusing to train on this stream"
        )

    stream = MixedStream(items=resolved, seed=cfg.seed)
    return _run_engine(stream, cfg, initial=initial, start_iter=start_iter, callback=callback)


# ---------------------------------------------------------------------------
# Temperature sweep and seeded averaging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    """Per-seed metrics with their mean and population standard deviation."""

    per_seed: dict[int, EvalReport]
    mean: dict[str, float]
    std: dict[str, float]
    selected_tau: float | None = None
    tau_dev_map: dict[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "per_seed": {str(s): r.to_dict() for s, r in self.per_seed.items()},
            "mean": self.mean,
            "std": self.std,
            "selected_tau": self.selected_tau,
            "tau_dev_map": (
                {str(t): m for t, m in self.tau_dev_map.items()} if self.tau_dev_map else None
            ),
        }


def seeded_runs(run: Callable[[int], EvalReport], seeds: Sequence[int]) -> RunReport:
    """Execute one run per seed and aggregate the reports.

    A failing seed aborts with context; partial results are never averaged.
    """
    if not seeds:
        raise ConfigError("seeded_runs needs at least one seed")
    per_seed: dict[int, EvalReport] = {}
    for seed in seeds:
        try:
            per_seed[seed] = run(seed)
        except Exception as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for metric in ("p_at_1", "map", "mrr"):
        values = [getattr(r, metric) for r in per_seed.values()]
        mu = sum(values) / len(values)
        mean[metric] = mu
        std[metric] = (sum((v - mu) ** 2 for v in values) / len(values)) ** 0.5
    return RunReport(per_seed=per_seed, mean=mean, std=std)


def default_seeds(first: int) -> list[int]:
    return [first, first + 1, first + 2]


def select_temperature(dev_map_by_tau: dict[float, float]) -> float:
    """Highest dev MAP wins; exact ties go to the smaller temperature."""
    if not dev_map_by_tau:
        raise ConfigError("empty temperature table")
    best_tau = None
    best_map = -1.0
    for tau in sorted(dev_map_by_tau):
        if dev_map_by_tau[tau] > best_map:
            best_tau, best_map = tau, dev_map_by_tau[tau]
    return best_tau


def sweep_temperature(
    train_input: Sequence[ParallelPair] | AS2Dataset | Sequence[AS2Dataset] | MixedStream,
    dev: AS2Dataset,
    teacher: TeacherStore | None,
    cfg: TrainConfig,
    taus: Sequence[float] = TAU_SEARCH_SPACE,
) -> tuple[float, RunReport]:
    """Train once per temperature, pick the best dev MAP, then rerun the
    winner over three seeds.

    The sweep itself uses ``cfg.seed`` only; the returned report contains
    the seeded evaluation at the selected temperature plus the per-tau dev
    MAP table.
    """
    dev_map: dict[float, float] = {}
    for tau in taus:
        cfg_tau = replace(cfg, tau=float(tau))
        try:
            params, _ = _train_any(train_input, teacher, cfg_tau)
        except Exception as exc:
            raise type(exc)(f"temperature sweep failed at tau={tau}: {exc}") from exc
        dev_map[float(tau)] = evaluate_dataset(dev, make_scorer(params)).map
    best_tau = select_temperature(dev_map)

    def run(seed: int) -> EvalReport:
        cfg_run = replace(cfg, tau=best_tau, seed=seed)
        params, _ = _train_any(train_input, teacher, cfg_run)
        return evaluate_dataset(dev, make_scorer(params))

    report = seeded_runs(run, default_seeds(cfg.seed))
    return best_tau, dataclasses.replace(report, selected_tau=best_tau, tau_dev_map=dev_map)


def _train_any(train_input, teacher, cfg: TrainConfig) -> tuple[StudentParams, OptimState]:
    if cfg.method == "clkd":
        if teacher is None:
            raise ConfigError("clkd training requires a teacher store")
        return train_clkd(train_input, teacher, cfg)
    return train_finetune(train_input, cfg)


# ---------------------------------------------------------------------------
# Checkpoints and manifests
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"AS2KDCKP"
CHECKPOINT_VERSION = 1

_TENSOR_ORDER = (
    "emb", "w1", "b1", "w2", "b2",
    "emb_m", "emb_v", "w1_m", "w1_v", "b1_m", "b1_v", "w2_m", "w2_v", "b2_m", "b2_v",
)


def _all_tensors(params: StudentParams, state: OptimState) -> dict[str, np.ndarray]:
    out = {"emb": params.emb, "w1": params.w1, "b1": params.b1, "w2": params.w2, "b2": params.b2}
    out["emb_m"], out["emb_v"] = state.emb_m, state.emb_v
    for name in ("w1", "b1", "w2", "b2"):
        out[f"{name}_m"] = state.dense_m[name]
        out[f"{name}_v"] = state.dense_v[name]
    return out


def save_checkpoint(
    path: str | Path,
    params: StudentParams,
    state: OptimState,
    cfg: TrainConfig,
    iteration: int,
) -> None:
    """Write a versioned, checksummed binary checkpoint.

    Layout: magic, version, JSON header (config echo, iteration, optimizer
    step, RNG state, tensor manifest), raw little-endian tensor payload,
    then a SHA-256 digest of everything before it.
    """
    tensors = _all_tensors(params, state)
    header = {
        "config": cfg.to_dict(),
        "iteration": iteration,
        "step": state.step,
        "rng_state": state.rng_state,
        "tensors": [
            {
                "name": name,
                "shape": list(tensors[name].shape),
                "dtype": tensors[name].dtype.newbyteorder("<").str,
            }
            for name in _TENSOR_ORDER
        ],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        for chunk in (
            CHECKPOINT_MAGIC,
            struct.pack("<I", CHECKPOINT_VERSION),
            struct.pack("<Q", len(header_bytes)),
            header_bytes,
        ):
            digest.update(chunk)
            fh.write(chunk)
        for name in _TENSOR_ORDER:
            data = np.ascontiguousarray(tensors[name]).astype(
                tensors[name].dtype.newbyteorder("<"), copy=False
            ).tobytes()
            digest.update(data)
            fh.write(data)
        fh.write(digest.digest())


def load_checkpoint(path: str | Path) -> tuple[StudentParams, OptimState, TrainConfig, int]:
    """Read a checkpoint back; verifies magic, version, and checksum before
    constructing anything."""
    blob = Path(path).read_bytes()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 + 32:
        raise DataError(f"{path}: truncated checkpoint")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    body, stored_digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != stored_digest:
        raise DataError(f"{path}: checksum mismatch, refusing to load")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off : off + header_len].decode("utf-8"))
    off += header_len

    arrays: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=off).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
        off += nbytes
    if off != len(body):
        raise DataError(f"{path}: payload size mismatch")

    cfg = TrainConfig.from_dict(header["config"])
    params = StudentParams(
        emb=arrays["emb"], w1=arrays["w1"], b1=arrays["b1"], w2=arrays["w2"], b2=arrays["b2"],
        config=cfg.student,
    )
    params.check_shapes()
    state = OptimState(
        emb_m=arrays["emb_m"],
        emb_v=arrays["emb_v"],
        dense_m={k: arrays[f"{k}_m"] for k in ("w1", "b1", "w2", "b2")},
        dense_v={k: arrays[f"{k}_v"] for k in ("w1", "b1", "w2", "b2")},
        step=header["step"],
        rng_state=header["rng_state"],
    )
    return params, state, cfg, header["iteration"]


def environment_info() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def write_manifest(path: str | Path, cfg: TrainConfig, results: dict) -> None:
    """Record the resolved config, results, and environment next to outputs."""
    manifest = {"config": cfg.to_dict(), "results": results, "environment": environment_info()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
