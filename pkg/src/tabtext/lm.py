"""Fine-tuning a sequence-classification language model on serialized rows.

Pretrained backbones are resolved by name through ``transformers``.  The
special name ``local:distilbert-tiny`` builds a small randomly initialised
DistilBERT plus a word-level tokenizer fitted on the training corpus; it needs
no download and is what the offline tests and desk-scale runs use when no
pretrained weights are reachable.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.model_selection import train_test_split

from .metrics import EvalReport, evaluate
from .template import SerializedExample

log = logging.getLogger(__name__)

LOCAL_PREFIX = "local:"
LOCAL_TINY = "local:distilbert-tiny"
# dropout attribute names used by the common encoder configs for the classification head
CLASSIFIER_DROPOUT_ATTRS = ("seq_classif_dropout", "classifier_dropout")
# A randomly initialised encoder needs far more updates than a pretrained one;
# these replace the fine-tuning defaults for local backbones unless overridden.
LOCAL_TRAIN_DEFAULTS = {"learning_rate": 1e-3, "batch_size": 16, "epochs": 30, "early_stopping_patience": 8}


class LMError(ValueError):
    pass


class BackboneUnresolvable(LMError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    scheduler: str = "linear_decay"
    dropout: float = 0.3
    batch_size: int = 64
    epochs: int = 10
    loss: str = "auto"  # auto | binary_cross_entropy | cross_entropy
    seed: int = 42
    max_sequence_length: int = 512
    early_stopping_patience: int | None = 3
    validation_fraction: float = 0.1
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise LMError("batch_size must be at least 1")
        if self.scheduler not in ("linear_decay", "none"):
            raise LMError(f"unknown scheduler {self.scheduler!r}")
        if self.loss not in ("auto", "binary_cross_entropy", "cross_entropy"):
            raise LMError(f"unknown loss {self.loss!r}")
        if self.epochs < 1:
            raise LMError("epochs must be at least 1")

    def resolve_loss(self, num_classes: int) -> str:
        wanted = "binary_cross_entropy" if num_classes == 2 else "cross_entropy"
        if self.loss not in ("auto", wanted):
            raise LMError(f"{self.loss} does not fit a {num_classes}-class problem; use {wanted}")
        return wanted

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_backbone(cls, backbone: str, **overrides) -> "TrainConfig":
        base = dict(LOCAL_TRAIN_DEFAULTS) if BackboneRef(backbone).is_local else {}
        return cls(**{**base, **overrides})


@dataclass(frozen=True)
class BackboneRef:
    name: str

    @property
    def is_local(self) -> bool:
        return self.name.startswith(LOCAL_PREFIX)


@dataclass(frozen=True)
class LogitMatrix:
    values: np.ndarray
    class_order: tuple
    provenance: tuple = ()

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.class_order):
            raise LMError("logit matrix must be n x k with k = number of classes")
        if not np.isfinite(self.values).all():
            raise LMError("non-finite logits")

    def probabilities(self) -> np.ndarray:
        z = self.values - self.values.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predictions(self) -> np.ndarray:
        return self.values.argmax(axis=1)


@dataclass
class TrainHistory:
    initial_loss: float = math.nan
    epoch_train_loss: list = field(default_factory=list)
    epoch_end_loss: list = field(default_factory=list)
    validation_loss: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False
    truncated: int = 0
    train_seconds: float = 0.0
    samples_seen: int = 0


# ---------------------------------------------------------------- backbones


def _local_tokenizer(texts: Sequence[str]):
    from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors, trainers
    from transformers import PreTrainedTokenizerFast

    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    tok = Tokenizer(models.WordLevel(unk_token="[UNK]"))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tok.train_from_iterator(list(texts), trainers.WordLevelTrainer(special_tokens=specials))
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        special_tokens=[("[CLS]", tok.token_to_id("[CLS]")), ("[SEP]", tok.token_to_id("[SEP]"))],
    )
    return PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]",
                                   cls_token="[CLS]", sep_token="[SEP]")


def _local_model(vocab_size: int, num_labels: int, dropout: float, max_len: int):
    from transformers import AutoModelForSequenceClassification, DistilBertConfig

    cfg = DistilBertConfig(vocab_size=vocab_size, dim=128, n_layers=2, n_heads=4, hidden_dim=256,
                           max_position_embeddings=max(max_len, 64), num_labels=num_labels,
                           seq_classif_dropout=dropout)
    return AutoModelForSequenceClassification.from_config(cfg)


def resolve_backbone(ref: BackboneRef, num_labels: int, dropout: float, corpus_texts: Sequence[str],
                     max_len: int):
    """(tokenizer, model) for ``ref``; raises BackboneUnresolvable on any failure."""
    if ref.is_local:
        if ref.name != LOCAL_TINY:
            raise BackboneUnresolvable(f"unknown local backbone {ref.name!r}")
        tok = _local_tokenizer(corpus_texts)
        return tok, _local_model(len(tok), num_labels, dropout, max_len)
    try:
        from transformers import AutoConfig, AutoModelForSequenceClassification, AutoTokenizer

        cfg = AutoConfig.from_pretrained(ref.name, num_labels=num_labels)
        for attr in CLASSIFIER_DROPOUT_ATTRS:
            if hasattr(cfg, attr):
                setattr(cfg, attr, dropout)
        tok = AutoTokenizer.from_pretrained(ref.name)
        model = AutoModelForSequenceClassification.from_pretrained(ref.name, config=cfg)
        if tok.pad_token is None:
            tok.pad_token = tok.eos_token or tok.unk_token
            model.config.pad_token_id = tok.pad_token_id
    except Exception as exc:  # network, missing weights, unknown architecture
        raise BackboneUnresolvable(f"cannot load backbone {ref.name!r}: {type(exc).__name__}: {exc}") from exc
    return tok, model


# ---------------------------------------------------------------- classifier


@dataclass
class TextClassifier:
    backbone: BackboneRef
    tokenizer: object
    model: torch.nn.Module
    num_classes: int
    config: TrainConfig
    history: TrainHistory = field(default_factory=TrainHistory)
    checkpoint: Path | None = None
    corpus_id: str = ""

    def encode(self, texts: Sequence[str]):
        return self.tokenizer(list(texts), padding=True, truncation=True,
                              max_length=self.config.max_sequence_length, return_tensors="pt")

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "backbone": self.backbone.name,
            "num_classes": self.num_classes,
            "train_config": self.config.to_dict(),
            "model_config": self.model.config.to_dict(),
            "history": asdict(self.history),
        }
        (d / "config.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
        torch.save(self.model.state_dict(), d / "weights.pt")
        self.tokenizer.save_pretrained(str(d / "tokenizer"))
        (d / "label_map.json").write_text(json.dumps({str(i): i for i in range(self.num_classes)}) + "\n")
        self.checkpoint = d
        return d

    @classmethod
    def load(cls, directory) -> "TextClassifier":
        from transformers import AutoConfig, AutoModelForSequenceClassification, AutoTokenizer

        d = Path(directory)
        meta = json.loads((d / "config.json").read_text())
        mc = dict(meta["model_config"])
        cfg = AutoConfig.for_model(mc.pop("model_type"), **mc)
        model = AutoModelForSequenceClassification.from_config(cfg)
        model.load_state_dict(torch.load(d / "weights.pt", weights_only=True))
        model.eval()
        tok = AutoTokenizer.from_pretrained(str(d / "tokenizer"))
        hist = TrainHistory(**meta["history"])
        return cls(BackboneRef(meta["backbone"]), tok, model, meta["num_classes"],
                   TrainConfig(**meta["train_config"]), hist, d)


def _loss_fn(kind: str, num_classes: int):
    if kind == "binary_cross_entropy":
        bce = torch.nn.BCEWithLogitsLoss()
        return lambda logits, y: bce(logits, torch.nn.functional.one_hot(y, num_classes).float())
    ce = torch.nn.CrossEntropyLoss()
    return lambda logits, y: ce(logits, y)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _dataset_loss(clf: TextClassifier, texts, labels, loss) -> float:
    clf.model.eval()
    total = 0.0
    with torch.no_grad():
        for idx in _batches(len(texts), clf.config.batch_size, None):
            enc = clf.encode([texts[i] for i in idx])
            logits = clf.model(**enc).logits
            total += float(loss(logits, torch.as_tensor(labels[idx]))) * len(idx)
    return total / len(texts)


def fine_tune(
    corpus: Sequence[SerializedExample],
    backbone: BackboneRef | str,
    config: TrainConfig | None = None,
    num_classes: int | None = None,
    checkpoint_dir=None,
    corpus_id: str = "",
) -> TextClassifier:
    """Supervised fine-tuning with AdamW, optional linear decay and early
    stopping on a stratified validation slice of the corpus.

    ``num_classes`` defaults to the number of distinct labels, which must be
    at least two; pass it explicitly to train on a single-class corpus.
    """
    config = config or TrainConfig()
    backbone = BackboneRef(backbone) if isinstance(backbone, str) else backbone
    if not corpus:
        raise LMError("empty corpus")
    texts = [ex.text for ex in corpus]
    labels = np.array([ex.label for ex in corpus], dtype=np.int64)
    distinct = np.unique(labels)
    if num_classes is None:
        if len(distinct) < 2:
            raise LMError("single-class corpus: pass num_classes to train anyway")
        num_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LMError(f"labels must lie in [0, {num_classes})")
    if num_classes < 2:
        raise LMError("num_classes must be at least 2")
    loss_kind = config.resolve_loss(num_classes)

    torch.manual_seed(config.seed)
    np.random.seed(config.seed)
    rng = np.random.default_rng(config.seed)

    train_idx, val_idx = np.arange(len(texts)), np.array([], dtype=int)
    if config.early_stopping_patience is not None and config.validation_fraction > 0:
        counts = np.bincount(labels, minlength=num_classes)
        n_val = int(round(config.validation_fraction * len(texts)))
        if n_val >= len(distinct) and (counts[counts > 0] >= 2).all() and len(texts) - n_val >= len(distinct):
            train_idx, val_idx = train_test_split(np.arange(len(texts)), test_size=n_val,
                                                  random_state=config.seed, stratify=labels)
            train_idx, val_idx = np.sort(train_idx), np.sort(val_idx)
        else:
            log.info("corpus too small for a stratified validation slice; early stopping disabled")

    tok, model = resolve_backbone(backbone, num_classes, config.dropout,
                                  [texts[i] for i in train_idx], config.max_sequence_length)
    clf = TextClassifier(backbone, tok, model, num_classes, config, corpus_id=corpus_id)
    hist = clf.history
    lengths = [len(ids) for ids in tok([texts[i] for i in train_idx], truncation=False)["input_ids"]]
    hist.truncated = int(sum(n > config.max_sequence_length for n in lengths))
    if hist.truncated:
        log.warning("%d of %d training texts exceed %d tokens and were truncated",
                    hist.truncated, len(lengths), config.max_sequence_length)

    tr_texts = [texts[i] for i in train_idx]
    tr_labels = labels[train_idx]
    loss = _loss_fn(loss_kind, num_classes)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    steps_per_epoch = math.ceil(len(tr_texts) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    if config.scheduler == "linear_decay":
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: max(0.0, 1 - s / total_steps))
    else:
        sched = None

    hist.initial_loss = _dataset_loss(clf, tr_texts, tr_labels, loss)
    best_val, best_state, bad = math.inf, None, 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        model.train()
        running = 0.0
        for idx in _batches(len(tr_texts), config.batch_size, rng):
            enc = clf.encode([tr_texts[i] for i in idx])
            logits = model(**enc).logits
            batch_loss = loss(logits, torch.as_tensor(tr_labels[idx]))
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            running += batch_loss.item() * len(idx)
            hist.samples_seen += len(idx)
        hist.epoch_train_loss.append(running / len(tr_texts))
        hist.epoch_end_loss.append(_dataset_loss(clf, tr_texts, tr_labels, loss))
        hist.epochs_run = epoch + 1
        if len(val_idx):
            v = _dataset_loss(clf, [texts[i] for i in val_idx], labels[val_idx], loss)
            hist.validation_loss.append(v)
            if v < best_val - 1e-12:
                best_val, bad = v, 0
                best_state = {k: t.detach().clone() for k, t in model.state_dict().items()}
            else:
                bad += 1
                if bad >= config.early_stopping_patience:
                    hist.stopped_early = True
                    break
    hist.train_seconds = time.perf_counter() - t0
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_dir is not None:
        clf.save(checkpoint_dir)
    return clf


def predict_logits(clf: TextClassifier, texts: Sequence[str], batch_size: int | None = None) -> LogitMatrix:
    """Raw pre-softmax scores, one row per text in input order."""
    texts = list(texts)
    if not texts:
        raise LMError("no texts to score")
    clf.model.eval()
    size = batch_size or clf.config.batch_size
    rows = []
    with torch.no_grad():
        for start in range(0, len(texts), size):
            enc = clf.encode(texts[start:start + size])
            rows.append(clf.model(**enc).logits.detach().cpu().numpy().astype(np.float64))
    values = np.vstack(rows)
    return LogitMatrix(values, tuple(range(clf.num_classes)), (clf.backbone.name, clf.corpus_id))


def evaluate_classifier(clf: TextClassifier, corpus: Sequence[SerializedExample]) -> EvalReport:
    texts = [ex.text for ex in corpus]
    y = np.array([ex.label for ex in corpus], dtype=np.int64)
    t0 = time.perf_counter()
    lm = predict_logits(clf, texts)
    elapsed = time.perf_counter() - t0
    loss = _loss_fn(clf.config.resolve_loss(clf.num_classes), clf.num_classes)
    test_loss = float(loss(torch.as_tensor(lm.values, dtype=torch.float32), torch.as_tensor(y)))
    report = evaluate(y, lm.probabilities(), list(range(clf.num_classes)), loss=test_loss)
    report.runtime_seconds = elapsed
    report.samples_per_second = len(texts) / elapsed if elapsed > 0 else math.inf
    return report


@dataclass
class BackboneResult:
    backbone: str
    report: EvalReport | None
    train_seconds: float | None
    train_samples_per_second: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def backbone_benchmark(
    backbones: Sequence[BackboneRef | str],
    train: Sequence[SerializedExample],
    test: Sequence[SerializedExample],
    config: TrainConfig | None = None,
    num_classes: int | None = None,
    overrides: dict | None = None,
) -> list[BackboneResult]:
    """Fine-tune and score each backbone in turn; a failing backbone yields
    a row with ``error`` set and the loop moves on.

    Without ``config`` each backbone gets ``TrainConfig.for_backbone`` with
    ``overrides`` applied."""
    if not backbones:
        raise LMError("need at least one backbone")
    out = []
    for b in backbones:
        ref = BackboneRef(b) if isinstance(b, str) else b
        try:
            cfg = config or TrainConfig.for_backbone(ref.name, **(overrides or {}))
            clf = fine_tune(train, ref, cfg, num_classes=num_classes)
            rep = evaluate_classifier(clf, test)
            h = clf.history
            sps = h.samples_seen / h.train_seconds if h.train_seconds > 0 else None
            out.append(BackboneResult(ref.name, rep, h.train_seconds, sps))
        except Exception as exc:
            log.warning("backbone %s failed: %s", ref.name, exc)
            out.append(BackboneResult(ref.name, None, None, None, f"{type(exc).__name__}: {exc}"))
    return out

