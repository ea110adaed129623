"""Joint training loop.

Teacher-forced NLL over decoder actions (gold previous-turn SQL feeds the
encoder), optional R-Drop regularization (two independently dropout-perturbed
passes per example, bidirectional KL between their per-step action
distributions), a warmup/decay learning-rate schedule peaking at max_steps/8,
gradient clipping, periodic checkpointing, and an append-only step log. The
frozen SQL encoder is never part of the optimizer and its checksum is verified
unchanged after the run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    load_checkpoint, load_module_tensors, module_tensors, save_checkpoint,
    tensors_digest,
)
from .config import Config, config_dict
from .errors import CheckpointError, DataError, TrainingDiverged
from .evaluate import InteractionRecord
from .model import (
    Database, ParserModel, SqlEncoderBundle, TurnFeatures, build_parser_vocab,
    featurize_turn,
)
from .sqlenc import SqlEncoder
from .sql_lang.parser import parse_sql
from .vocab import Vocab

KL_EPSILON = 1e-8


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr_encoder: float
    lr_rest: float
    nll: float
    kl: float
    wall: float

    def line(self) -> str:
        return (f"{self.step}\t{self.lr_encoder:.10g}\t{self.lr_rest:.10g}"
                f"\t{self.nll:.10g}\t{self.kl:.10g}\t{self.wall:.4f}")


def nll_loss(step_logps: list[torch.Tensor], gold_indices: list[int]) -> torch.Tensor:
    """Sum of negative gold-action log-probabilities over the steps."""
    if len(step_logps) != len(gold_indices):
        raise DataError(
            f"{len(step_logps)} step distributions but {len(gold_indices)} gold actions")
    total = None
    for logp, idx in zip(step_logps, gold_indices):
        term = -logp[idx]
        total = term if total is None else total + term
    return total if total is not None else torch.zeros(())


def rdrop_loss(dists1: list[torch.Tensor], dists2: list[torch.Tensor]) -> torch.Tensor:
    """Half-sum of the two directed KL divergences, summed over steps.

    Both argument lists hold per-step log-probability vectors over identical
    legal-action sets; epsilon smoothing keeps the logs finite.
    """
    if len(dists1) != len(dists2):
        raise DataError(
            f"pass lengths differ: {len(dists1)} vs {len(dists2)} steps")
    total = None
    for a, b in zip(dists1, dists2):
        if a.shape != b.shape:
            raise DataError(
                f"legal-action support mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        pa, pb = a.exp(), b.exp()
        la, lb = (pa + KL_EPSILON).log(), (pb + KL_EPSILON).log()
        kl_ab = (pa * (la - lb)).sum()
        kl_ba = (pb * (lb - la)).sum()
        term = 0.5 * (kl_ab + kl_ba)
        total = term if total is None else total + term
    return total if total is not None else torch.zeros(())


def lr_at(step: int, cfg: Config) -> tuple[float, float]:
    """Piecewise-linear schedule: 0 to base over the first max_steps/8 steps,
    then base to 0 at max_steps."""
    warmup = cfg.max_steps / 8.0
    if step <= warmup:
        scale = step / warmup if warmup > 0 else 1.0
    else:
        scale = (cfg.max_steps - step) / (cfg.max_steps - warmup)
    scale = max(scale, 0.0)
    return cfg.lr_encoder * scale, cfg.lr_rest * scale


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


@dataclass
class TrainTurn:
    features: TurnFeatures
    interaction: int
    turn: int


def build_training_turns(records: list[InteractionRecord],
                         databases: dict[str, Database],
                         sql_bundle: SqlEncoderBundle, vocab: Vocab,
                         cfg: Config) -> tuple[list[TrainTurn], int]:
    """Featurize every turn once; gold previous SQL feeds the encoder.

    Turns whose gold SQL does not parse under the grammar (or whose values are
    not expressible) are skipped with a count, never silently dropped.
    """
    turns: list[TrainTurn] = []
    skipped = 0
    for ri, rec in enumerate(records):
        if rec.db_id not in databases:
            raise DataError(f"interaction references unknown db_id {rec.db_id!r}")
        db = databases[rec.db_id]
        history: list[str] = []
        last_gold = None
        for ti, turn in enumerate(rec.turns):
            try:
                gold = parse_sql(turn.sql, db.schema)
            except Exception:
                skipped += 1
                history.append(turn.utterance)
                last_gold = None
                continue
            feats = featurize_turn(db, history, turn.utterance, last_gold,
                                   sql_bundle, vocab, cfg, gold_sql=gold)
            catalog_texts = {o.text for o in feats.options}
            expressible = all(
                a.text in catalog_texts for a in feats.gold_actions
                if a.__class__.__name__ == "EmitValue")
            if expressible:
                turns.append(TrainTurn(feats, ri, ti))
            else:
                skipped += 1
            history.append(turn.utterance)
            last_gold = gold
    if not turns:
        raise DataError("no trainable turns in the dataset")
    return turns, skipped


def load_frozen_sql_encoder(path: str | Path, cfg: Config) -> SqlEncoderBundle:
    tensors, manifest = load_checkpoint(path)
    if not manifest.get("frozen"):
        raise CheckpointError(f"{path}: SQL encoder checkpoint is not marked frozen")
    meta = manifest["meta"]
    vocab = Vocab.from_list(meta["vocab"])
    model = SqlEncoder(len(vocab), meta.get("width", cfg.sql_width),
                       meta.get("layers", cfg.sql_layers),
                       meta.get("heads", cfg.sql_heads),
                       meta.get("max_len", cfg.sql_max_len))
    load_module_tensors(model, tensors)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return SqlEncoderBundle(model, vocab, manifest["digest"])


@dataclass
class FitResult:
    records: list[StepRecord]
    checkpoint_path: Path
    vocab: Vocab
    skipped_turns: int
    sql_digest_before: str
    sql_digest_after: str


def fit(records: list[InteractionRecord], databases: dict[str, Database],
        sql_bundle: SqlEncoderBundle, cfg: Config, out_dir: str | Path,
        vocab: Vocab | None = None,
        log_hook=None) -> FitResult:
    """Adam training over L = L_NLL + L_KL; reproducible bitwise given the seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if vocab is None:
        vocab = build_parser_vocab(records, databases)
    turns, skipped = build_training_turns(records, databases, sql_bundle, vocab, cfg)
    digest_before = tensors_digest(module_tensors(sql_bundle.model))

    model = ParserModel(len(vocab), cfg)
    encoder_group = (
        list(model.encoder.tok_emb.parameters())
        + list(model.encoder.abs_pos_emb.parameters())
        + list(model.encoder.name_pos_emb.parameters())
        + list(model.encoder.seg_emb.parameters())
        + list(model.encoder.base_layers.parameters()))
    encoder_ids = {id(p) for p in encoder_group}
    rest_group = [p for p in model.parameters() if id(p) not in encoder_ids]
    opt = torch.optim.Adam([
        {"params": encoder_group, "lr": cfg.lr_encoder},
        {"params": rest_group, "lr": cfg.lr_rest},
    ])

    meta = {"vocab": vocab.to_list(), "config": config_dict(cfg),
            "sql_encoder_digest": sql_bundle.digest}
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "train_log.tsv"
    step_records: list[StepRecord] = []
    last_good_saved = False
    start = time.monotonic()

    def save(path: Path) -> None:
        save_checkpoint(path, module_tensors(model), meta=meta)

    def flush_log() -> None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("step\tlr_encoder\tlr_rest\tnll\tkl\twall\n")
            for rec in step_records:
                fh.write(rec.line() + "\n")

    model.train()
    order = np.arange(len(turns))
    cursor = len(turns)  # force an initial shuffle
    for step in range(1, cfg.max_steps + 1):
        lr_enc, lr_rest = lr_at(step, cfg)
        opt.param_groups[0]["lr"] = lr_enc
        opt.param_groups[1]["lr"] = lr_rest

        batch: list[TrainTurn] = []
        for _ in range(min(cfg.batch_size, len(turns))):
            if cursor >= len(turns):
                rng.shuffle(order)
                cursor = 0
            batch.append(turns[int(order[cursor])])
            cursor += 1

        feats = [t.features for t in batch]
        passes = 2 if cfg.rdrop else 1
        all_dists: list[list[list[torch.Tensor]]] = []
        nll_total = None
        for _ in range(passes):
            memories = model.encode_batch(feats)
            pass_dists: list[list[torch.Tensor]] = []
            for f, mem in zip(feats, memories):
                prepared = model.prepare_turn(f, mem)
                nll, dists = model.decoder.teacher_forced(prepared, f.gold_actions)
                nll_total = nll if nll_total is None else nll_total + nll
                pass_dists.append(dists)
            all_dists.append(pass_dists)

        kl_total = torch.zeros(())
        if cfg.rdrop:
            for d1, d2 in zip(all_dists[0], all_dists[1]):
                kl_total = kl_total + rdrop_loss(d1, d2)
        loss = (nll_total + kl_total) / len(batch)

        if not torch.isfinite(loss):
            flush_log()
            if not last_good_saved:
                save(ckpt_path)
            raise TrainingDiverged(
                f"non-finite loss at step {step}; last good checkpoint retained "
                f"at {ckpt_path}")

        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()

        rec = StepRecord(step, lr_enc, lr_rest,
                         float(nll_total.detach()) / len(batch),
                         float(kl_total.detach()) / len(batch),
                         time.monotonic() - start)
        step_records.append(rec)
        if log_hook is not None:
            log_hook(rec)
        if step % cfg.ckpt_every == 0 or step == cfg.max_steps:
            save(ckpt_path)
            last_good_saved = True
            flush_log()

    save(ckpt_path)
    flush_log()
    digest_after = tensors_digest(module_tensors(sql_bundle.model))
    if digest_after != digest_before:
        raise CheckpointError("freeze contract violated: SQL encoder changed during fit")
    return FitResult(step_records, ckpt_path, vocab, skipped,
                     digest_before, digest_after)


def load_parser(path: str | Path) -> tuple[ParserModel, Vocab, Config]:
    from .config import Config as _Config

    tensors, manifest = load_checkpoint(path)
    meta = manifest["meta"]
    cfg = _Config(**meta["config"])
    vocab = Vocab.from_list(meta["vocab"])
    model = ParserModel(len(vocab), cfg)
    load_module_tensors(model, tensors)
    model.eval()
    return model, vocab, cfg
