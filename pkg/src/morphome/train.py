"""Training loop: Adam with linear warmup, periodic dev evaluation, and
best-checkpoint selection by dev sequence accuracy."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ReinflectionInstance
from .encoding import Vocab, collate, encode_instance, encode_source_only, get_variant
from .model import ModelConfig, TransformerModel
from .numcore.adam import Adam, DivergedError, warmup_lr
from .numcore.checkpoint import save_checkpoint
from .util import derive_seed, write_json


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "VANILLA"
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 1024
    dropout: float = 0.3
    lr: float = 1e-3
    warmup_steps: int = 4000
    batch_size: int = 400
    max_steps: int = 10000
    label_smoothing: float = 0.1
    eval_every: int = 500
    dev_beam: int = 1
    final_beam: int = 5
    max_decode_len: int = 40
    max_src_len: int = 80
    dev_eval_max: int = 660
    stop_at_dev_acc: float | None = None
    seed: int = 0
    dtype: str = "float32"
    tag_pe_zero: bool = True

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainResult:
    best_step: int
    best_dev_acc: float
    final_step: int
    history: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0


def model_config_for(config: TrainConfig, vocab: Vocab) -> ModelConfig:
    variant = get_variant(config.variant)
    return ModelConfig(
        variant=variant.name,
        vocab_size=len(vocab),
        decoder_size=vocab.decoder_size,
        feature_dim=variant.tag_scheme.feature_dim,
        d_model=config.d_model,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        d_ff=config.d_ff,
        dropout=config.dropout,
        max_len=config.max_src_len,
        dtype=config.dtype,
        tag_pe_zero=config.tag_pe_zero,
        init_seed=derive_seed(config.seed, "init"),
    )


def predict_instances(
    model: TransformerModel,
    vocab: Vocab,
    instances: list[ReinflectionInstance],
    beam_size: int = 5,
    max_len: int = 40,
    chunk_size: int = 2048,
) -> list[str]:
    """Beam-decode target forms from the source side only."""
    variant = get_variant(model.config.variant)
    encs = [
        encode_source_only(
            (inst.src1_form, inst.src1_tag),
            (inst.src2_form, inst.src2_tag),
            inst.tgt_tag,
            vocab,
            variant,
        )
        for inst in instances
    ]
    batch = collate(encs, vocab)
    return model.predict_forms(
        batch, vocab, beam_size=beam_size, max_len=max_len, chunk_size=chunk_size
    )


def sequence_accuracy_on(
    model: TransformerModel,
    vocab: Vocab,
    instances: list[ReinflectionInstance],
    beam_size: int = 1,
    max_len: int = 40,
) -> float:
    preds = predict_instances(model, vocab, instances, beam_size, max_len)
    hits = sum(p == inst.tgt_form for p, inst in zip(preds, instances))
    return hits / len(instances)


def train_run(
    train_instances: list[ReinflectionInstance],
    dev_instances: list[ReinflectionInstance],
    vocab: Vocab,
    config: TrainConfig,
    out_dir=None,
    restore_best: bool = True,
    log=None,
) -> tuple[TransformerModel, TrainResult]:
    """Train one model; returns (model, result). With out_dir set, writes
    best/ and last/ checkpoints plus history.json there. The model is left
    holding the best-dev parameters when restore_best is on."""
    if not train_instances:
        raise ValueError("no training instances")
    variant = get_variant(config.variant)
    model = TransformerModel(model_config_for(config, vocab))
    params = model.parameters()
    opt = Adam(list(params.values()), lr=config.lr, beta1=0.9, beta2=0.98, eps=1e-9)

    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(config.seed, "dropout"))
    dev_rng = np.random.default_rng(derive_seed(config.seed, "dev-subsample"))

    encs = [encode_instance(i, vocab, variant) for i in train_instances]

    dev_pool = list(dev_instances)
    if dev_pool and len(dev_pool) > config.dev_eval_max:
        idx = dev_rng.permutation(len(dev_pool))[: config.dev_eval_max]
        dev_pool = [dev_pool[i] for i in sorted(idx)]

    out_dir = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    best_acc, best_step = -1.0, 0
    best_params: dict[str, np.ndarray] | None = None
    loss_sum, loss_n = 0.0, 0
    start = time.monotonic()

    step = 0
    order = np.array([], dtype=np.int64)
    cursor = 0
    while step < config.max_steps:
        if cursor + config.batch_size > len(order):
            order = shuffle_rng.permutation(len(encs))
            cursor = 0
        take = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        batch = collate([encs[i] for i in take], vocab)

        step += 1
        opt.zero_grad()
        loss = model.loss(batch, train=True, rng=dropout_rng,
                          smoothing=config.label_smoothing)
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        loss.backward()
        try:
            opt.step(lr=warmup_lr(step, config.lr, config.warmup_steps))
        except DivergedError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        loss_sum += loss.item()
        loss_n += 1

        if step % config.eval_every == 0 or step == config.max_steps:
            dev_acc = (
                sequence_accuracy_on(
                    model, vocab, dev_pool, config.dev_beam, config.max_decode_len
                )
                if dev_pool
                else float("nan")
            )
            rec = {
                "step": step,
                "train_loss": loss_sum / max(1, loss_n),
                "dev_acc": dev_acc,
                "lr": warmup_lr(step, config.lr, config.warmup_steps),
                "elapsed_s": round(time.monotonic() - start, 2),
            }
            history.append(rec)
            loss_sum, loss_n = 0.0, 0
            if log:
                log(rec)
            improved = dev_pool and dev_acc > best_acc
            if improved or not dev_pool:
                best_acc = dev_acc if dev_pool else float("nan")
                best_step = step
                best_params = {n: t.data.copy() for n, t in params.items()}
                if out_dir is not None:
                    save_checkpoint(
                        out_dir / "best",
                        params,
                        _manifest(model, vocab, config, step, dev_acc),
                    )
            if (
                dev_pool
                and config.stop_at_dev_acc is not None
                and dev_acc >= config.stop_at_dev_acc
            ):
                break

    if out_dir is not None:
        save_checkpoint(
            out_dir / "last", params, _manifest(model, vocab, config, step, best_acc)
        )
        write_json(out_dir / "history.json", history)

    if restore_best and best_params is not None:
        for n, t in params.items():
            t.data[...] = best_params[n]

    result = TrainResult(
        best_step=best_step,
        best_dev_acc=best_acc,
        final_step=step,
        history=history,
        wall_seconds=time.monotonic() - start,
    )
    return model, result


def _manifest(model, vocab, config, step, dev_acc) -> dict:
    return {
        "model_config": model.config.to_json(),
        "train_config": config.to_json(),
        "vocab": vocab.to_json(),
        "step": step,
        "dev_acc": None if dev_acc != dev_acc else dev_acc,
    }


def load_model(checkpoint_dir) -> tuple[TransformerModel, Vocab, dict]:
    """Rebuild a model + vocab from a checkpoint directory."""
    from .numcore.checkpoint import load_checkpoint
    from .util import read_json

    manifest = read_json(Path(checkpoint_dir) / "manifest.json")
    model = TransformerModel(ModelConfig.from_json(manifest["model_config"]))
    vocab = Vocab.from_json(manifest["vocab"])
    load_checkpoint(checkpoint_dir, model.parameters())
    return model, vocab, manifest
