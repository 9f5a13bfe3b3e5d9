"""Embedding-factorized neural topic model: encoder, decoder, ELBO terms.

The document encoder is a three-hidden-layer MLP (vocab -> hidden x3, SeLU)
with batch norm and dropout after the last hidden layer, feeding two linear
heads for the mean and log standard deviation of a logistic-normal
document-topic distribution. The decoder factorizes the topic-word
distribution through shared word embeddings: beta_k is a tempered softmax
of rho @ t_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor


class ModelError(ValueError):
    """Invalid model inputs or non-finite intermediate values."""


@dataclass
class PriorSpec:
    """Gaussian prior over the pre-softmax document-topic logits."""

    mu0: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=np.float64)
        self.sigma0 = np.asarray(self.sigma0, dtype=np.float64)
        if np.any(self.sigma0 <= 0):
            raise ModelError("prior sigma0 entries must be strictly positive")

    @classmethod
    def standard(cls, n_topics: int) -> "PriorSpec":
        return cls(mu0=np.zeros(n_topics), sigma0=np.ones(n_topics))


@dataclass
class DocTopicDist:
    """Per-document topic distribution plus the encoder outputs behind it."""

    theta: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass
class TopicWordDist:
    """Row-stochastic topic-word matrix."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        rows = self.beta.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-6):
            raise ModelError("topic-word rows must sum to 1")
        if np.any(self.beta <= 0):
            raise ModelError("topic-word entries must be strictly positive")


@dataclass
class ModelParams:
    """All trainable and frozen tensors of the backbone."""

    rho: Tensor  # (V, e) word embeddings; frozen when pretrained
    topic_emb: Tensor  # (K, e)
    enc_weights: list  # [(W, b)] x 3, V -> H -> H -> H
    bn: BatchNormState | None
    w_mu: Tensor
    b_mu: Tensor
    w_sig: Tensor
    b_sig: Tensor
    rho_frozen: bool = False
    dropout_rate: float = 0.5
    norm_order: str = "batchnorm_dropout"  # or "dropout_batchnorm"

    @property
    def vocab_size(self) -> int:
        return self.rho.data.shape[0]

    @property
    def n_topics(self) -> int:
        return self.topic_emb.data.shape[0]

    @property
    def emb_dim(self) -> int:
        return self.rho.data.shape[1]

    def named_tensors(self) -> dict:
        out = {"rho": self.rho, "topic_emb": self.topic_emb}
        for i, (w, b) in enumerate(self.enc_weights):
            out[f"enc_w{i}"] = w
            out[f"enc_b{i}"] = b
        if self.bn is not None:
            out["bn_gamma"] = self.bn.gamma
            out["bn_beta"] = self.bn.beta
        out.update(w_mu=self.w_mu, b_mu=self.b_mu, w_sig=self.w_sig, b_sig=self.b_sig)
        return out

    def trainable(self) -> list:
        """Tensors the optimizer may update (frozen embeddings excluded)."""
        return [t for name, t in self.named_tensors().items()
                if t.requires_grad and not (name == "rho" and self.rho_frozen)]

    def to_state(self) -> dict:
        state = {name: t.data.copy() for name, t in self.named_tensors().items()}
        state["_meta"] = {
            "rho_frozen": self.rho_frozen,
            "dropout_rate": self.dropout_rate,
            "norm_order": self.norm_order,
            "has_bn": self.bn is not None,
            "n_hidden_layers": len(self.enc_weights),
        }
        if self.bn is not None:
            state["_bn_running_mean"] = self.bn.running_mean.copy()
            state["_bn_running_var"] = self.bn.running_var.copy()
            state["_bn_num_batches"] = self.bn.num_batches
        return state

    @classmethod
    def from_state(cls, state: dict) -> "ModelParams":
        meta = state["_meta"]
        enc = []
        for i in range(meta["n_hidden_layers"]):
            enc.append(
                (
                    Tensor(state[f"enc_w{i}"].copy(), requires_grad=True, name=f"enc_w{i}"),
                    Tensor(state[f"enc_b{i}"].copy(), requires_grad=True, name=f"enc_b{i}"),
                )
            )
        bn = None
        if meta["has_bn"]:
            bn = BatchNormState(
                gamma=Tensor(state["bn_gamma"].copy(), requires_grad=True, name="bn_gamma"),
                beta=Tensor(state["bn_beta"].copy(), requires_grad=True, name="bn_beta"),
                running_mean=state["_bn_running_mean"].copy(),
                running_var=state["_bn_running_var"].copy(),
                num_batches=int(state["_bn_num_batches"]),
            )
        return cls(
            rho=Tensor(state["rho"].copy(), requires_grad=True, name="rho"),
            topic_emb=Tensor(state["topic_emb"].copy(), requires_grad=True, name="topic_emb"),
            enc_weights=enc,
            bn=bn,
            w_mu=Tensor(state["w_mu"].copy(), requires_grad=True, name="w_mu"),
            b_mu=Tensor(state["b_mu"].copy(), requires_grad=True, name="b_mu"),
            w_sig=Tensor(state["w_sig"].copy(), requires_grad=True, name="w_sig"),
            b_sig=Tensor(state["b_sig"].copy(), requires_grad=True, name="b_sig"),
            rho_frozen=meta["rho_frozen"],
            dropout_rate=meta["dropout_rate"],
            norm_order=meta["norm_order"],
        )


def _glorot(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_params(
    vocab_size: int,
    n_topics: int,
    emb_dim: int = 300,
    hidden_dim: int = 800,
    seed: int = 0,
    embeddings: np.ndarray | None = None,
    dropout_rate: float = 0.5,
    use_batch_norm: bool = True,
    norm_order: str = "batchnorm_dropout",
    dtype=np.float64,
) -> ModelParams:
    """Initialize the backbone. Pretrained embeddings, when given, are frozen.

    Without a pretrained matrix the word embeddings initialize to small
    normal noise and stay trainable (freezing a random matrix would be
    meaningless).
    """
    if norm_order not in ("batchnorm_dropout", "dropout_batchnorm"):
        raise ModelError(f"unknown norm_order {norm_order!r}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    if embeddings is not None:
        embeddings = np.asarray(embeddings, dtype=dtype)
        if embeddings.shape != (vocab_size, emb_dim):
            raise ModelError(
                f"embedding matrix {embeddings.shape} does not match "
                f"(V={vocab_size}, e={emb_dim})"
            )
        if not np.all(np.isfinite(embeddings)):
            raise ModelError("embedding matrix contains non-finite values")
        rho = Tensor(embeddings.copy(), requires_grad=True, name="rho")
        rho_frozen = True
    else:
        rho = Tensor(
            (0.02 * rng.standard_normal((vocab_size, emb_dim))).astype(dtype),
            requires_grad=True,
            name="rho",
        )
        rho_frozen = False
    topic_emb = Tensor(
        (0.02 * rng.standard_normal((n_topics, emb_dim))).astype(dtype),
        requires_grad=True,
        name="topic_emb",
    )
    dims = [vocab_size, hidden_dim, hidden_dim, hidden_dim]
    enc = []
    for i in range(3):
        enc.append(
            (
                Tensor(_glorot(rng, dims[i], dims[i + 1], dtype), requires_grad=True, name=f"enc_w{i}"),
                Tensor(np.zeros(dims[i + 1], dtype=dtype), requires_grad=True, name=f"enc_b{i}"),
            )
        )
    bn = BatchNormState.create(hidden_dim, dtype=dtype) if use_batch_norm else None
    return ModelParams(
        rho=rho,
        topic_emb=topic_emb,
        enc_weights=enc,
        bn=bn,
        w_mu=Tensor(_glorot(rng, hidden_dim, n_topics, dtype), requires_grad=True, name="w_mu"),
        b_mu=Tensor(np.zeros(n_topics, dtype=dtype), requires_grad=True, name="b_mu"),
        w_sig=Tensor(_glorot(rng, hidden_dim, n_topics, dtype), requires_grad=True, name="w_sig"),
        b_sig=Tensor(np.zeros(n_topics, dtype=dtype), requires_grad=True, name="b_sig"),
        rho_frozen=rho_frozen,
        dropout_rate=dropout_rate,
        norm_order=norm_order,
    )


@dataclass
class EncodeResult:
    """Tape tensors produced by one encoder pass over a batch."""

    theta: Tensor
    mu: Tensor
    log_sigma: Tensor


def encode_batch(
    counts: np.ndarray,
    params: ModelParams,
    noise: np.ndarray | None = None,
    train: bool = False,
    dropout_mask: np.ndarray | None = None,
    dropout_rng=None,
    doc_ids=None,
) -> EncodeResult:
    """Run the encoder on a batch of raw count rows.

    Rows are normalized to term frequencies before the MLP. In train mode
    ``noise`` (standard normal, one row per document) drives the
    reparameterized draw; eval mode uses the mean. A zero-count row is fatal
    since such documents are excluded upstream.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2:
        raise ModelError(f"encode expects a (batch, vocab) matrix, got {counts.shape}")
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        row = int(np.flatnonzero(totals.ravel() == 0)[0])
        doc = doc_ids[row] if doc_ids is not None else f"row {row}"
        raise ModelError(f"zero-token document {doc} cannot be encoded")

    h = Tensor(counts / totals)
    for w, b in params.enc_weights:
        h = ad.selu(ad.add(ad.matmul(h, w), b))
    stages = (
        ("bn", "dropout") if params.norm_order == "batchnorm_dropout" else ("dropout", "bn")
    )
    for stage in stages:
        if stage == "bn" and params.bn is not None:
            h = ad.batch_norm(h, params.bn, train=train)
        elif stage == "dropout" and train and params.dropout_rate > 0:
            h = ad.dropout(h, params.dropout_rate, train=True, mask=dropout_mask, rng=dropout_rng)

    mu = ad.add(ad.matmul(h, params.w_mu), params.b_mu)
    log_sigma = ad.add(ad.matmul(h, params.w_sig), params.b_sig)
    if train:
        if noise is None:
            raise ModelError("train-mode encoding needs a noise draw")
        theta = ad.softmax(ad.reparameterize(mu, log_sigma, np.asarray(noise, dtype=np.float64)))
    else:
        theta = ad.softmax(mu)
    return EncodeResult(theta=theta, mu=mu, log_sigma=log_sigma)


def encode(doc_counts, params: ModelParams, noise=None, train: bool = False,
           doc_id=None, dropout_rng=None) -> DocTopicDist:
    """Single-document encoding, returning plain arrays."""
    counts = np.asarray(doc_counts, dtype=np.float64).reshape(1, -1)
    noise_m = None if noise is None else np.asarray(noise, dtype=np.float64).reshape(1, -1)
    res = encode_batch(
        counts, params, noise=noise_m, train=train,
        doc_ids=None if doc_id is None else [doc_id],
        dropout_rng=dropout_rng,
    )
    return DocTopicDist(
        theta=res.theta.data[0].copy(),
        mu=res.mu.data[0].copy(),
        log_sigma=res.log_sigma.data[0].copy(),
    )


def decode(params: ModelParams, tau_beta: float) -> Tensor:
    """Topic-word distribution: softmax(rho @ t_k / tau_beta) per topic."""
    if tau_beta <= 0:
        raise ModelError(f"tau_beta must be positive, got {tau_beta}")
    logits = ad.scale(ad.matmul(params.topic_emb, params.rho, transpose_b=True), 1.0 / tau_beta)
    return ad.softmax(logits)


def topic_word_distribution(params: ModelParams, tau_beta: float) -> TopicWordDist:
    """Eval-time topic-word matrix as a validated plain array."""
    return TopicWordDist(beta=decode(params, tau_beta).data.copy())


def kl_to_prior(mu: Tensor, log_sigma: Tensor, prior: PriorSpec) -> Tensor:
    """KL(N(mu, sigma^2) || prior), summed over topics and documents.

    For the default standard-normal prior this is
    0.5 * sum(sigma^2 + mu^2 - 1 - 2 log sigma).
    """
    inv_two_s0sq = 1.0 / (2.0 * prior.sigma0**2)
    sigma_sq = ad.exp(ad.scale(log_sigma, 2.0))
    diff = ad.add(mu, Tensor(-prior.mu0))
    quad = ad.mul(ad.add(sigma_sq, ad.mul(diff, diff)), Tensor(inv_two_s0sq))
    per_dim = ad.add(ad.add(quad, ad.scale(log_sigma, -1.0)), Tensor(np.log(prior.sigma0) - 0.5))
    return ad.sum(per_dim)


def elbo_terms(
    counts: np.ndarray,
    params: ModelParams,
    prior: PriorSpec,
    noise: np.ndarray | None = None,
    train: bool = False,
    beta: Tensor | None = None,
    tau_beta: float = 0.1,
    dropout_mask: np.ndarray | None = None,
    dropout_rng=None,
    doc_ids=None,
):
    """Reconstruction and KL terms for a batch, as scalars on the tape.

    L_rec = -sum_d sum_w count[d,w] * log((theta_d @ beta)[w] + eps) and
    L_kl sums the per-document KL to the prior. Both are checked finite per
    document; a NaN is fatal and names the offending document.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[0] == 0:
        raise ModelError("elbo_terms needs a nonempty batch")
    if beta is None:
        beta = decode(params, tau_beta)
    enc = encode_batch(
        counts, params, noise=noise, train=train,
        dropout_mask=dropout_mask, dropout_rng=dropout_rng, doc_ids=doc_ids,
    )
    recon = ad.matmul(enc.theta, beta)
    contrib = ad.mul(Tensor(counts), ad.log(recon))
    per_doc_rec = -contrib.data.sum(axis=1)
    _check_finite(per_doc_rec, "reconstruction", doc_ids)
    l_rec = ad.scale(ad.sum(contrib), -1.0)

    l_kl = kl_to_prior(enc.mu, enc.log_sigma, prior)
    sig_sq = np.exp(2.0 * enc.log_sigma.data)
    per_doc_kl = (
        (sig_sq + (enc.mu.data - prior.mu0) ** 2) / (2.0 * prior.sigma0**2)
        - enc.log_sigma.data + np.log(prior.sigma0) - 0.5
    ).sum(axis=1)
    _check_finite(per_doc_kl, "KL", doc_ids)
    return l_rec, l_kl, enc


def _check_finite(per_doc: np.ndarray, term: str, doc_ids) -> None:
    bad = np.flatnonzero(~np.isfinite(per_doc))
    if bad.size:
        row = int(bad[0])
        doc = doc_ids[row] if doc_ids is not None else f"row {row}"
        raise ModelError(f"non-finite {term} term for document {doc}")


# ---------------------------------------------------------------------------
# Pretrained embeddings
# ---------------------------------------------------------------------------


def load_word_embeddings(path, vocab, seed: int = 0):
    """Read a text embedding file ("word v1 ... ve" per line) for a vocabulary.

    Returns (matrix, coverage) where coverage is the fraction of vocabulary
    words found in the file. Missing words get small random rows drawn from
    a seeded generator so runs stay reproducible.
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word = parts[0]
            if word not in vocab:
                continue
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ModelError(
                    f"{path}:{lineno}: embedding dimension {vec.size} differs from {dim}"
                )
            vectors[word] = vec
    if dim is None:
        raise ModelError(f"{path}: no vocabulary word found in embedding file")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE0)))
    matrix = np.empty((len(vocab), dim), dtype=np.float64)
    hits = 0
    for i, word in enumerate(vocab.words):
        vec = vectors.get(word)
        if vec is None:
            matrix[i] = 0.02 * rng.standard_normal(dim)
        else:
            matrix[i] = vec
            hits += 1
    return matrix, hits / len(vocab)
