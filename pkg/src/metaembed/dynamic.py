"""Trained dynamic combiners: attention-weighted mixtures of sources.

Where the ensemble combiners fix one linear map for the whole vocabulary,
the dynamic combiners decide per token how much each source contributes.
For a sentence with token views w_ij (source i, position j):

    projected   m_ij  = P_i w_ij + b_i            (shared width d')
    plain gate  l_ij  = a . m_ij + beta           ("dme")
    contextual  l_ij  = a . h_ij + beta           ("cdme"; h_ij from one
                                                   shared BiLSTM run over
                                                   each source's m_i1..m_iS)
    attention   alpha_.j = softmax over sources of l_.j
    combined    e_j   = sum_i alpha_ij m_ij

The combined sequence feeds a max-pooled BiLSTM sentence encoder; a sentence
pair (u, v) is classified from [u; v; |u-v|; u*v] with a softmax layer and
trained by cross-entropy.  All gradients are derived by hand and exact,
including full backpropagation through both LSTMs, so they can be verified
coordinate-by-coordinate against finite differences.

The attention vector ``a`` and the gate bias start at zero, which makes the
initial mixture exactly uniform over sources; training breaks the symmetry
through the gradient on ``a``.
"""

from __future__ import annotations

import numpy as np

from typing import NamedTuple

from .errors import NonFiniteLossError, ValidationError
from .linalg import as_matrix
from .lstm import PARAM_KEYS, BiLstm
from .modelio import read_model, write_model
from .optim import Adam, seeded_rngs, xavier_uniform

__all__ = ["DynamicModel", "new_dynamic_model", "TrainConfig", "train_dynamic", "DEFAULT_ATT_HIDDEN"]

KINDS = ("dme", "cdme")
DEFAULT_ATT_HIDDEN = 2

# independent random streams per component, all spawned from one seed; the
# same table is used at init and in training so the streams never collide
_RNG_COMPONENTS = ("proj", "att", "enc", "head", "shuffle")


def _check_classes(classes) -> tuple[str, ...]:
    out = tuple(classes)
    if len(out) < 2:
        raise ValidationError(f"need at least two class labels, got {len(out)}")
    seen = set()
    for c in out:
        if not isinstance(c, str) or not c or any(ch.isspace() for ch in c):
            raise ValidationError(f"class label {c!r} must be a non-empty string without whitespace")
        if c in seen:
            raise ValidationError(f"duplicate class label {c!r}")
        seen.add(c)
    return out


class DynamicModel:
    """A DME or CDME combiner plus its sentence-pair classifier."""

    def __init__(self, kind: str, dims, classes, proj_dim: int, enc_hidden: int,
                 att_hidden: int | None = None, seed: int = 0):
        if kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
        self.kind = kind
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 1 or any(d < 1 for d in self.dims):
            raise ValidationError(f"need at least one source with a positive width, got {self.dims}")
        self.classes = _check_classes(classes)
        if proj_dim < 1 or enc_hidden < 1:
            raise ValidationError(f"proj_dim and enc_hidden must be positive, got {proj_dim}, {enc_hidden}")
        self.proj_dim = int(proj_dim)
        self.enc_hidden = int(enc_hidden)
        if kind == "cdme":
            self.att_hidden = DEFAULT_ATT_HIDDEN if att_hidden is None else int(att_hidden)
            if self.att_hidden < 1:
                raise ValidationError(f"att_hidden must be positive, got {att_hidden}")
        else:
            if att_hidden is not None:
                raise ValidationError("att_hidden only applies to cdme")
            self.att_hidden = None
        self.seed = int(seed)

        rngs = seeded_rngs(self.seed, _RNG_COMPONENTS)
        n = len(self.dims)
        c = len(self.classes)
        self.params: dict[str, np.ndarray] = {}
        for i, d in enumerate(self.dims):
            self.params[f"p{i}"] = xavier_uniform(rngs["proj"], self.proj_dim, d)
        self.params["bias"] = np.zeros((n, self.proj_dim))
        att_in = 2 * self.att_hidden if kind == "cdme" else self.proj_dim
        self.params["att_a"] = np.zeros(att_in)
        self.params["att_beta"] = np.zeros(1)
        if kind == "cdme":
            self.att_lstm = BiLstm(self.proj_dim, self.att_hidden, rngs["att"])
            for key in PARAM_KEYS:
                self.params[f"att_{key}"] = self.att_lstm.p[key]
        else:
            self.att_lstm = None
        self.encoder = BiLstm(self.proj_dim, self.enc_hidden, rngs["enc"])
        for key in PARAM_KEYS:
            self.params[f"enc_{key}"] = self.encoder.p[key]
        self.params["head_w"] = xavier_uniform(rngs["head"], c, 8 * self.enc_hidden)
        self.params["head_b"] = np.zeros(c)

    @property
    def dim(self) -> int:
        """Width of a sentence vector."""
        return 2 * self.enc_hidden

    @property
    def magic(self) -> str:
        return self.kind.upper()

    def _check_sentence(self, views) -> list[np.ndarray]:
        mats = [as_matrix(v, f"source {i}") for i, v in enumerate(views)]
        if len(mats) != len(self.dims):
            raise ValidationError(f"model expects {len(self.dims)} sources, got {len(mats)}")
        for i, (m, d) in enumerate(zip(mats, self.dims)):
            if m.shape[1] != d:
                raise ValidationError(f"source {i} has width {m.shape[1]}, model expects {d}")
        lengths = {m.shape[0] for m in mats}
        if len(lengths) != 1:
            raise ValidationError(f"sources disagree on sequence length: {sorted(lengths)}")
        return mats

    def embed(self, views):
        """Sentence vector of shape (2*enc_hidden,) plus the backward cache."""
        mats = self._check_sentence(views)
        n = len(self.dims)
        steps = mats[0].shape[0]
        proj = np.empty((n, steps, self.proj_dim))
        for i in range(n):
            proj[i] = mats[i] @ self.params[f"p{i}"].T + self.params["bias"][i]
        a = self.params["att_a"]
        beta = self.params["att_beta"][0]
        if self.kind == "dme":
            states = None
            att_caches = None
            logits = np.einsum("nsd,d->ns", proj, a) + beta
        else:
            states = np.empty((n, steps, 2 * self.att_hidden))
            att_caches = []
            for i in range(n):
                states[i], cache = self.att_lstm.forward(proj[i])
                att_caches.append(cache)
            logits = np.einsum("nsh,h->ns", states, a) + beta
        shifted = np.exp(logits - logits.max(axis=0))
        alpha = shifted / shifted.sum(axis=0)
        combined = np.einsum("ns,nsd->sd", alpha, proj)
        vec, enc_cache = self.encoder.encode(combined)
        return vec, (mats, proj, states, att_caches, alpha, enc_cache)

    def embed_backward(self, cache, d_vec, grads) -> None:
        """Accumulate gradients of one embed() call into *grads*."""
        mats, proj, states, att_caches, alpha, enc_cache = cache
        n = len(self.dims)
        d_comb, enc_grads = self.encoder.encode_backward(enc_cache, d_vec)
        for key, g in enc_grads.items():
            grads[f"enc_{key}"] += g
        d_proj = alpha[:, :, None] * d_comb[None, :, :]
        d_alpha = np.einsum("sd,nsd->ns", d_comb, proj)
        inner = np.sum(alpha * d_alpha, axis=0, keepdims=True)
        d_logits = alpha * (d_alpha - inner)
        grads["att_beta"][0] += d_logits.sum()
        if self.kind == "dme":
            grads["att_a"] += np.einsum("ns,nsd->d", d_logits, proj)
            d_proj += d_logits[:, :, None] * self.params["att_a"][None, None, :]
        else:
            grads["att_a"] += np.einsum("ns,nsh->h", d_logits, states)
            a = self.params["att_a"]
            for i in range(n):
                d_states = d_logits[i][:, None] * a[None, :]
                d_in, att_grads = self.att_lstm.backward(att_caches[i], d_states)
                d_proj[i] += d_in
                for key, g in att_grads.items():
                    grads[f"att_{key}"] += g
        for i in range(n):
            grads[f"p{i}"] += d_proj[i].T @ mats[i]
            grads["bias"][i] += d_proj[i].sum(axis=0)

    def attention(self, views) -> np.ndarray:
        """Per-token source weights, shape (S, n sources); rows sum to 1."""
        _, cache = self.embed(views)
        return cache[4].T.copy()

    def _pair_logits(self, views_a, views_b):
        u, cache_a = self.embed(views_a)
        v, cache_b = self.embed(views_b)
        z = np.concatenate([u, v, np.abs(u - v), u * v])
        logits = self.params["head_w"] @ z + self.params["head_b"]
        return logits, (u, v, z, cache_a, cache_b)

    def predict_proba(self, views_a, views_b) -> np.ndarray:
        """Class probabilities for one sentence pair, ordered like ``classes``."""
        logits, _ = self._pair_logits(views_a, views_b)
        shifted = np.exp(logits - logits.max())
        return shifted / shifted.sum()

    def predict_label(self, views_a, views_b) -> str:
        return self.classes[int(np.argmax(self.predict_proba(views_a, views_b)))]

    def loss_and_grads(self, batch):
        """Mean cross-entropy over (views_a, views_b, label_index) triples.

        Returns (loss, grads) with one gradient array per parameter; grads
        for parameters with no influence on the batch come out exactly zero.
        """
        batch = list(batch)
        if not batch:
            raise ValidationError("batch must contain at least one example")
        grads = {key: np.zeros_like(p) for key, p in self.params.items()}
        total = 0.0
        scale = 1.0 / len(batch)
        width = self.dim
        for views_a, views_b, label in batch:
            label = int(label)
            if not 0 <= label < len(self.classes):
                raise ValidationError(f"label index {label} out of range for {len(self.classes)} classes")
            logits, (u, v, z, cache_a, cache_b) = self._pair_logits(views_a, views_b)
            top = logits.max()
            lse = top + np.log(np.exp(logits - top).sum())
            total += lse - logits[label]
            d_logits = np.exp(logits - lse)
            d_logits[label] -= 1.0
            d_logits *= scale
            grads["head_w"] += np.outer(d_logits, z)
            grads["head_b"] += d_logits
            dz = self.params["head_w"].T @ d_logits
            dzu, dzv, dza, dzp = dz[:width], dz[width : 2 * width], dz[2 * width : 3 * width], dz[3 * width :]
            sign = np.sign(u - v)
            self.embed_backward(cache_a, dzu + sign * dza + v * dzp, grads)
            self.embed_backward(cache_b, dzv - sign * dza + u * dzp, grads)
        return total * scale, grads

    def save(self, path) -> None:
        att = self.att_hidden if self.kind == "cdme" else 0
        hyper = f"n {len(self.dims)} dims " + " ".join(str(d) for d in self.dims)
        hyper += f" proj {self.proj_dim} att {att} enc {self.enc_hidden} seed {self.seed}"
        hyper += " classes " + " ".join(self.classes)
        blocks = [(f"p{i}", self.params[f"p{i}"]) for i in range(len(self.dims))]
        blocks.append(("bias", self.params["bias"]))
        blocks.append(("att_a", self.params["att_a"][None, :]))
        blocks.append(("att_beta", self.params["att_beta"][None, :]))
        prefixes = ["att"] if self.kind == "cdme" else []
        prefixes.append("enc")
        for prefix in prefixes:
            for key in PARAM_KEYS:
                arr = self.params[f"{prefix}_{key}"]
                blocks.append((f"{prefix}_{key}", arr if arr.ndim == 2 else arr[None, :]))
        blocks.append(("head_w", self.params["head_w"]))
        blocks.append(("head_b", self.params["head_b"][None, :]))
        write_model(path, self.magic, hyper, blocks)

    @classmethod
    def load(cls, path) -> "DynamicModel":
        mf = read_model(path)
        if mf.magic not in ("DME", "CDME"):
            raise ValidationError(f"{path}: expected a DME or CDME model, found {mf.magic}")
        kind = mf.magic.lower()
        dims, proj_dim, enc_hidden, att_hidden, seed, classes = _parse_dynamic_hyper(mf.hyper, path, kind)
        model = cls(kind, dims, classes, proj_dim, enc_hidden,
                    att_hidden if kind == "cdme" else None, seed=seed)
        for key, p in model.params.items():
            block = mf.blocks.get(key)
            if block is None:
                raise ValidationError(f"{path}: model file is missing block {key!r}")
            value = block if p.ndim == 2 else block[0]
            if value.shape != p.shape:
                raise ValidationError(
                    f"{path}: block {key!r} has shape {block.shape}, expected {p.shape if p.ndim == 2 else (1,) + p.shape}"
                )
            p[...] = value
        unexpected = [lab for lab in mf.blocks if lab not in model.params]
        if unexpected:
            raise ValidationError(f"{path}: model file has unexpected block(s) {', '.join(unexpected)}")
        return model


def _parse_dynamic_hyper(hyper: list[str], path, kind: str):
    markers = ["n", "dims", "proj", "att", "enc", "seed", "classes"]
    positions = []
    for mark in markers:
        if mark not in hyper:
            raise ValidationError(f"{path}: hyperparameter line is missing {mark!r}")
        positions.append(hyper.index(mark))
    if positions != sorted(positions) or positions[0] != 0:
        raise ValidationError(f"{path}: hyperparameter fields out of order")
    fields = {}
    for k, mark in enumerate(markers):
        stop = positions[k + 1] if k + 1 < len(markers) else len(hyper)
        fields[mark] = hyper[positions[k] + 1 : stop]
    try:
        n = int(_single(fields["n"], path, "n"))
        dims = [int(t) for t in fields["dims"]]
        proj_dim = int(_single(fields["proj"], path, "proj"))
        att = int(_single(fields["att"], path, "att"))
        enc_hidden = int(_single(fields["enc"], path, "enc"))
        seed = int(_single(fields["seed"], path, "seed"))
    except ValueError:
        raise ValidationError(f"{path}: non-integer value in hyperparameter line") from None
    if n != len(dims):
        raise ValidationError(f"{path}: hyperparameter line claims {n} sources but lists {len(dims)} widths")
    if kind == "dme":
        if att != 0:
            raise ValidationError(f"{path}: a DME model must record att 0, got {att}")
        att_hidden = None
    else:
        att_hidden = att
    return dims, proj_dim, enc_hidden, att_hidden, seed, fields["classes"]


def _single(tokens: list[str], path, name: str) -> str:
    if len(tokens) != 1:
        raise ValidationError(f"{path}: expected exactly one value for {name!r}")
    return tokens[0]


def new_dynamic_model(kind: str, dims, classes, proj_dim: int, enc_hidden: int,
                      att_hidden: int | None = None, seed: int = 0) -> DynamicModel:
    """Freshly initialized model; same arguments and seed give identical parameters."""
    return DynamicModel(kind, dims, classes, proj_dim, enc_hidden, att_hidden, seed=seed)


class TrainConfig(NamedTuple):
    """Hyperparameters for :func:`train_dynamic`.

    ``epochs`` = 0 is a valid no-op (parameters untouched).  ``patience``
    > 0 stops training once the mean epoch loss has failed to improve for
    that many consecutive epochs; 0 runs every epoch.
    """

    epochs: int
    lr: float = 1e-3
    batch_size: int = 16
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    patience: int = 0
    shuffle: bool = True


def _check_train_config(config: TrainConfig) -> None:
    if config.epochs < 0:
        raise ValidationError(f"epochs must be non-negative, got {config.epochs}")
    if not config.lr > 0:
        raise ValidationError(f"learning rate must be positive, got {config.lr}")
    if config.batch_size < 1:
        raise ValidationError(f"batch_size must be positive, got {config.batch_size}")
    if len(config.betas) != 2 or not all(0.0 <= b < 1.0 for b in config.betas):
        raise ValidationError(f"betas must be two values in [0, 1), got {config.betas}")
    if config.patience < 0:
        raise ValidationError(f"patience must be non-negative, got {config.patience}")


def train_dynamic(model: DynamicModel, examples, config: TrainConfig | None = None,
                  **overrides) -> list[float]:
    """Minibatch Adam training; returns the mean loss of each epoch.

    *examples* is a sequence of (views_a, views_b, label_index) triples.
    Settings come either from a :class:`TrainConfig` or from keyword
    overrides (``epochs`` is then required).  The shuffle order is driven
    by the config seed alone, so a rerun with the same seed and data
    reproduces the parameter trajectory exactly.  A non-finite batch loss
    aborts with :class:`NonFiniteLossError`.
    """
    if config is None:
        config = TrainConfig(**overrides)
    elif overrides:
        raise ValidationError("give a TrainConfig or keyword settings, not both")
    _check_train_config(config)
    examples = list(examples)
    if not examples:
        raise ValidationError("no training examples")
    rng = seeded_rngs(config.seed, _RNG_COMPONENTS)["shuffle"]
    adam = Adam(model.params, lr=config.lr, beta1=config.betas[0], beta2=config.betas[1])
    history: list[float] = []
    best = np.inf
    bad_epochs = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples)) if config.shuffle else np.arange(len(examples))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(examples), config.batch_size)):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            loss, grads = model.loss_and_grads(batch)
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch + 1, b + 1, float(loss))
            adam.step(grads)
            epoch_loss += loss * len(batch)
        mean_loss = epoch_loss / len(examples)
        history.append(mean_loss)
        if mean_loss < best:
            best = mean_loss
            bad_epochs = 0
        else:
            bad_epochs += 1
        if config.patience and bad_epochs >= config.patience:
            break
    return history
