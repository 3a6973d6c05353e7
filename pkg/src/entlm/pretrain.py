"""Joint MLM + masked-entity-prediction training with a two-stage schedule.

Stage 1 updates only the newly initialized entity-side parameters; stage 2
updates everything.  The warmup/linear-decay learning-rate schedule restarts
at the stage boundary.  Checkpoints are a versioned binary container with a
name -> (shape, dtype, offset) index over little-endian float64 payloads.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import IGNORE_LABEL, mask_batch
from .encoder import EncoderConfig, encode_batch, init_params, pack_batch
from .errors import ContractError
from .seeding import substream

CHECKPOINT_MAGIC = b"ENTLM-CKPT v1\n"

DEFAULT_STAGE1_TRAINABLE = ("entity_emb", "entity_proj", "entity_type_emb", "mep_head")


@dataclass
class TrainConfig:
    total_steps: int
    stage1_steps: int = 0
    batch_size: int = 8
    peak_lr: float = 1e-4
    stage1_peak_lr: float = 5e-4
    warmup_steps: int = 2500
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    seed: int = 0
    # name patterns of parameters that stage 1 updates; everything else is frozen
    stage1_trainable_patterns: tuple = DEFAULT_STAGE1_TRAINABLE
    word_mask_p: float = 0.15
    word_random_p: float = 0.10
    word_keep_p: float = 0.10
    entity_mask_p: float = 0.15
    alpha: float = 0.7
    checkpoint_interval: int = 0  # 0: final checkpoint only
    log_interval: int = 50

    def validate(self):
        if not 0 <= self.stage1_steps <= self.total_steps:
            raise ContractError("need 0 <= stage1_steps <= total_steps")
        if self.warmup_steps < 0:
            raise ContractError("warmup_steps must be >= 0")
        return self

    def to_dict(self):
        d = dict(self.__dict__)
        d["stage1_trainable_patterns"] = list(self.stage1_trainable_patterns)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage1_trainable_patterns"] = tuple(d.get("stage1_trainable_patterns", DEFAULT_STAGE1_TRAINABLE))
        return cls(**d).validate()


def init_head_params(config: EncoderConfig, rng):
    H = config.hidden_size
    return {
        "mlm_head.w": T.parameter(rng.normal(0.0, 0.02, size=(H, config.word_vocab_size)), name="mlm_head.w"),
        "mlm_head.b": T.parameter(np.zeros(config.word_vocab_size), name="mlm_head.b"),
        "mep_head.w": T.parameter(rng.normal(0.0, 0.02, size=(H, config.entity_vocab_size)), name="mep_head.w"),
        "mep_head.b": T.parameter(np.zeros(config.entity_vocab_size), name="mep_head.b"),
    }


def init_model(config: EncoderConfig, seed=0):
    rng = substream(seed, "init")
    params = init_params(config, rng)
    params.update(init_head_params(config, rng))
    return params


def _head_loss(vectors, labels, w, b):
    """Mean cross-entropy over labeled positions; (loss tensor, live count)."""
    labels = np.asarray(labels).reshape(-1)
    H = vectors.shape[-1]
    flat = T.reshape(vectors, (-1, H))
    logits = T.matmul(flat, w) + b
    n_live = T.count_live_labels(labels, IGNORE_LABEL)
    return T.cross_entropy_logits(logits, labels, ignore_index=IGNORE_LABEL), n_live


def mep_loss(entity_vectors, entity_labels, params):
    """Cross-entropy of the MEP classifier at entity-[MASK] positions.

    Returns (loss, skipped): with no labeled positions the loss is 0 and
    skipped is True so batch averaging can leave it out.
    """
    loss, n_live = _head_loss(entity_vectors, entity_labels, params["mep_head.w"], params["mep_head.b"])
    return loss, n_live == 0


def mlm_loss(word_vectors, word_labels, params):
    loss, n_live = _head_loss(word_vectors, word_labels, params["mlm_head.w"], params["mlm_head.b"])
    return loss, n_live == 0


def stage_of(step, config: TrainConfig):
    return 1 if step < config.stage1_steps else 2


def lr_at(step, config: TrainConfig):
    """Per-stage linear warmup then linear decay to zero; restarts per stage."""
    config.validate()
    if not 0 <= step < config.total_steps:
        raise ContractError(f"step {step} outside [0, {config.total_steps})")
    if step < config.stage1_steps:
        start, length, peak = 0, config.stage1_steps, config.stage1_peak_lr
    else:
        start, length, peak = config.stage1_steps, config.total_steps - config.stage1_steps, config.peak_lr
    local = step - start
    warmup = min(config.warmup_steps, length)
    if warmup > 0 and local < warmup:
        return peak * local / warmup
    if length == warmup:
        return peak
    return peak * (length - local) / (length - warmup)


class AdamW:
    """AdamW with decoupled weight decay over a named parameter dict.

    Frozen parameters are neither updated nor have their moment estimates
    advanced.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-6, weight_decay=0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, lr, trainable=None):
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            if trainable is not None and name not in trainable:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            t = self.t.get(name, 0) + 1
            self.t[name] = t
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p.data = p.data - lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)

    def state_dict(self):
        return {
            "t": dict(self.t),
            "m": {k: a for k, a in self.m.items()},
            "v": {k: a for k, a in self.v.items()},
        }


def select_trainable(params, patterns):
    """Names of parameters matched by any substring pattern."""
    return {name for name in params if any(pat in name for pat in patterns)}


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, encoder_config: EncoderConfig, params, step=0, rng_state=None,
                    optimizer_state=None, meta=None):
    arrays = {name: np.ascontiguousarray(p.data, dtype="<f8") for name, p in params.items()}
    opt_arrays = {}
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {"t": optimizer_state["t"]}
        for kind in ("m", "v"):
            for name, arr in optimizer_state[kind].items():
                opt_arrays[f"opt.{kind}.{name}"] = np.ascontiguousarray(arr, dtype="<f8")
    index = {}
    offset = 0
    payload = []
    for name in sorted(list(arrays) + list(opt_arrays)):
        arr = arrays.get(name, opt_arrays.get(name))
        index[name] = {"shape": list(arr.shape), "dtype": "<f8", "offset": offset, "nbytes": arr.nbytes}
        payload.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "version": 1,
        "encoder_config": encoder_config.to_dict(),
        "step": int(step),
        "rng_state": rng_state,
        "optimizer": opt_meta,
        "meta": meta or {},
        "index": index,
        "param_names": sorted(arrays),
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for chunk in payload:
            f.write(chunk)
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    params: dict
    step: int
    rng_state: object = None
    optimizer_state: object = None
    meta: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        blob = f.read()
    arrays = {}
    for name, e in header["index"].items():
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
    params = {n: T.parameter(arrays[n], name=n) for n in header["param_names"]}
    opt_state = None
    if header.get("optimizer"):
        opt_state = {"t": header["optimizer"]["t"], "m": {}, "v": {}}
        for name, arr in arrays.items():
            if name.startswith("opt.m."):
                opt_state["m"][name[len("opt.m."):]] = arr
            elif name.startswith("opt.v."):
                opt_state["v"][name[len("opt.v."):]] = arr
    return Checkpoint(
        encoder_config=EncoderConfig.from_dict(header["encoder_config"]),
        params=params,
        step=header["step"],
        rng_state=header.get("rng_state"),
        optimizer_state=opt_state,
        meta=header.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# training loop


class TrainingAborted(RuntimeError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    params: dict
    step: int
    log: list  # (step, stage, lr, mlm, mep) tuples
    final_checkpoint: str | None = None


def _batch_labels(batches, M, N):
    wl = np.full((len(batches), M), IGNORE_LABEL, dtype=np.int64)
    el = np.full((len(batches), max(N, 0)), IGNORE_LABEL, dtype=np.int64)
    for b, mb in enumerate(batches):
        wl[b, : len(mb.word_labels)] = mb.word_labels
        if mb.entity_labels:
            el[b, : len(mb.entity_labels)] = mb.entity_labels
    return wl, el


def pretrain_step_loss(params, encoder_config, batches, entity_pad_id, rng=None, train_mode=True):
    """Forward pass for a list of MaskedBatch; returns (loss, mlm, mep)."""
    packed = pack_batch([mb.sequence for mb in batches], pad_entity_id=entity_pad_id)
    out = encode_batch(params, encoder_config, packed, rng=rng, train=train_mode)
    M = packed["word_ids"].shape[1]
    N = packed["entity_ids"].shape[1]
    wl, el = _batch_labels(batches, M, N)
    l_mlm, _ = mlm_loss(out.word_tensor, wl, params)
    if N:
        l_mep, _ = mep_loss(out.entity_tensor, el, params)
        total = l_mlm + l_mep
    else:
        l_mep = T.constant(0.0)
        total = l_mlm
    return total, l_mlm, l_mep


def train(encoder_config: EncoderConfig, config: TrainConfig, sequences_by_language,
          word_vocab, entity_vocab, params=None, out_dir=None, log_file=None):
    """Run the two-stage pretraining loop on already-encoded sequences.

    sequences_by_language: {lang: [EncodedSequence, ...]}.  Deterministic for
    a fixed (config, corpus): every random draw comes from named sub-streams
    of config.seed and runs single-threaded.
    """
    config.validate()
    if params is None:
        params = init_model(encoder_config, seed=config.seed)
    optimizer = AdamW(params, beta1=config.beta1, beta2=config.beta2,
                      eps=config.adam_eps, weight_decay=config.weight_decay)
    stage1_trainable = select_trainable(params, config.stage1_trainable_patterns)

    seq_ids = {}
    for lang in sorted(sequences_by_language):
        for i, seq in enumerate(sequences_by_language[lang]):
            seq_ids[id(seq)] = len(seq_ids)

    sampler_rng = substream(config.seed, "corpus-sampler")
    dropout_rng = substream(config.seed, "dropout")
    langs = sorted(l for l, seqs in sequences_by_language.items() if seqs)
    pools = [sequences_by_language[l] for l in langs]
    weights = np.array([float(len(p)) ** config.alpha for p in pools])
    probs = weights / weights.sum()

    log = []
    last_ckpt = None
    log_fh = open(log_file, "w", encoding="utf-8") if log_file else None
    try:
        for step in range(config.total_steps):
            batches = []
            for _ in range(config.batch_size):
                li = int(sampler_rng.choice(len(langs), p=probs))
                seq = pools[li][int(sampler_rng.integers(len(pools[li])))]
                mrng = substream(config.seed, "masking", seq_ids[id(seq)], step)
                batches.append(
                    mask_batch(
                        seq, mrng, word_vocab, entity_vocab.mask_id,
                        word_p=config.word_mask_p, word_random_p=config.word_random_p,
                        word_keep_p=config.word_keep_p, entity_p=config.entity_mask_p,
                    )
                )
            total, l_mlm, l_mep = pretrain_step_loss(
                params, encoder_config, batches, entity_vocab.pad_id, rng=dropout_rng)
            if not np.isfinite(total.data):
                raise TrainingAborted(f"non-finite loss at step {step}", last_checkpoint=last_ckpt)
            T.zero_grads(params)
            T.backward(total)
            lr = lr_at(step, config)
            stage = stage_of(step, config)
            optimizer.step(lr, trainable=stage1_trainable if stage == 1 else None)

            if config.log_interval and (step % config.log_interval == 0 or step == config.total_steps - 1):
                row = (step, stage, lr, float(l_mlm.data), float(l_mep.data))
                log.append(row)
                if log_fh:
                    log_fh.write("\t".join(str(x) for x in row) + "\n")
            if out_dir and config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
                last_ckpt = os.path.join(out_dir, f"checkpoint-{step + 1}.bin")
                save_checkpoint(last_ckpt, encoder_config, params, step=step + 1,
                                rng_state=_rng_states(sampler_rng, dropout_rng),
                                optimizer_state=optimizer.state_dict(),
                                meta={"train_config": config.to_dict()})
    finally:
        if log_fh:
            log_fh.close()

    final = None
    if out_dir:
        final = os.path.join(out_dir, "checkpoint-final.bin")
        save_checkpoint(final, encoder_config, params, step=config.total_steps,
                        rng_state=_rng_states(sampler_rng, dropout_rng),
                        meta={"train_config": config.to_dict()})
    return TrainResult(params=params, step=config.total_steps, log=log, final_checkpoint=final)


def _rng_states(sampler_rng, dropout_rng):
    def enc(state):
        return json.loads(json.dumps(state, default=int))

    return {
        "sampler": enc(sampler_rng.bit_generator.state),
        "dropout": enc(dropout_rng.bit_generator.state),
    }
