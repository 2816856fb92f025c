"""Tiny autoregressive recurrent policies with exact gradients.

Architecture, for a token sequence ``s_0 .. s_{n-1}``::

    x_t = E[s_t]                                   (embedding, V x d)
    h_t = tanh(W_x x_t + W_h h_{t-1} + b_h)        (h_{-1} = 0)
    p(s_{t+1} | s_<=t) = softmax(W_o h_t + b_o)

The flat parameter vector stores ``E, W_x, W_h, b_h, W_o, b_o`` in that
order, each in C order. The non-embedding count ``N`` excludes ``E``::

    N = H*d + H*H + H + V*H + V

Everything runs in float64 and natural logs. Sequences are processed in
padded batches; padding sits after the last real token so it never
influences earlier hidden states, and its loss weight is zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import vocab
from .errors import ConfigError, DataError, LengthError

# Below this temperature sampling is greedy (argmax).
TEMPERATURE_FLOOR = 1e-6

# Initialization scales (standard deviations); output weights are small so
# the initial next-token distribution is close to uniform.
EMBED_INIT_STD = 1.0
INPUT_INIT_GAIN = 1.0
RECURRENT_INIT_GAIN = 1.0
OUTPUT_INIT_GAIN = 0.5

_PARTS = ("E", "W_x", "W_h", "b_h", "W_o", "b_o")


@dataclass(frozen=True)
class ArchSpec:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    context_window: int

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "context_window"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"ArchSpec.{name} must be an integer >= 1, got {value!r}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        V, d, H = self.vocab_size, self.embed_dim, self.hidden_dim
        return {"E": (V, d), "W_x": (H, d), "W_h": (H, H), "b_h": (H,),
                "W_o": (V, H), "b_o": (V,)}

    def to_json(self) -> dict:
        return {"vocab_size": self.vocab_size, "embed_dim": self.embed_dim,
                "hidden_dim": self.hidden_dim, "context_window": self.context_window}


def count_params(arch: ArchSpec) -> int:
    """Non-embedding parameter count ``H*d + H*H + H + V*H + V``."""
    V, d, H = arch.vocab_size, arch.embed_dim, arch.hidden_dim
    return H * d + H * H + H + V * H + V


def total_params(arch: ArchSpec) -> int:
    return arch.vocab_size * arch.embed_dim + count_params(arch)


class PolicyParams:
    """Immutable policy weights. ``theta`` is a read-only flat float64 vector."""

    __slots__ = ("arch", "theta", "_views")

    def __init__(self, arch: ArchSpec, theta):
        theta = np.array(theta, dtype=np.float64).ravel()
        if theta.size != total_params(arch):
            raise ConfigError(f"theta has {theta.size} entries, arch needs {total_params(arch)}")
        theta.flags.writeable = False
        self.arch = arch
        self.theta = theta
        views = {}
        offset = 0
        for name, shape in arch.shapes().items():
            size = int(np.prod(shape))
            views[name] = theta[offset:offset + size].reshape(shape)
            offset += size
        self._views = views

    @property
    def n_nonembed(self) -> int:
        return count_params(self.arch)

    def part(self, name: str) -> np.ndarray:
        return self._views[name]

    @classmethod
    def from_parts(cls, arch: ArchSpec, **parts) -> "PolicyParams":
        """Assemble weights from named tensors; missing parts are zero."""
        chunks = []
        for name, shape in arch.shapes().items():
            value = np.zeros(shape) if name not in parts else np.asarray(parts[name], dtype=np.float64)
            if value.shape != shape:
                raise ConfigError(f"{name} has shape {value.shape}, expected {shape}")
            chunks.append(value.ravel())
        return cls(arch, np.concatenate(chunks))

    def with_theta(self, theta) -> "PolicyParams":
        return PolicyParams(self.arch, theta)

    def __repr__(self):
        return f"PolicyParams({self.arch}, n_nonembed={self.n_nonembed})"


@dataclass(frozen=True)
class Response:
    tokens: tuple[int, ...]
    logprobs: np.ndarray

    @property
    def length(self) -> int:
        return len(self.tokens)


def init_policy(arch: ArchSpec, seed: int) -> PolicyParams:
    """Gaussian init: E ~ N(0, 1), W_x ~ N(0, 1/d), W_h ~ N(0, 1/H),
    W_o ~ N(0, (0.5)^2 / H); biases zero."""
    rng = np.random.default_rng(seed)
    V, d, H = arch.vocab_size, arch.embed_dim, arch.hidden_dim
    return PolicyParams.from_parts(
        arch,
        E=rng.normal(0.0, EMBED_INIT_STD, size=(V, d)),
        W_x=rng.normal(0.0, INPUT_INIT_GAIN / np.sqrt(d), size=(H, d)),
        W_h=rng.normal(0.0, RECURRENT_INIT_GAIN / np.sqrt(H), size=(H, H)),
        W_o=rng.normal(0.0, OUTPUT_INIT_GAIN / np.sqrt(H), size=(V, H)),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_fits(arch: ArchSpec, n_prompt: int, n_response: int) -> None:
    if n_prompt < 1:
        raise DataError("prompt must contain at least one token")
    if n_prompt + n_response > arch.context_window:
        raise LengthError(
            f"prompt+response length {n_prompt + n_response} exceeds context window "
            f"{arch.context_window}"
        )


def _check_tokens(arch: ArchSpec, tokens: Sequence[int]) -> None:
    for t in tokens:
        if not 0 <= t < arch.vocab_size:
            raise DataError(f"token {t} outside vocabulary of size {arch.vocab_size}")


class _Tape:
    """Forward activations for a padded batch of (prompt, response) pairs."""

    def __init__(self, params: PolicyParams, prompts, responses):
        arch = params.arch
        B = len(prompts)
        lengths = []
        for p, r in zip(prompts, responses):
            _check_fits(arch, len(p), len(r))
            _check_tokens(arch, p)
            _check_tokens(arch, r)
            lengths.append(len(p) + len(r))
        T = max(lengths)
        seqs = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((max(T - 1, 0), B), dtype=bool)
        for b, (p, r) in enumerate(zip(prompts, responses)):
            seqs[b, : len(p)] = p
            seqs[b, len(p): lengths[b]] = r
            # logits at step t predict token t+1; response tokens sit at len(p)..n-1
            mask[len(p) - 1: lengths[b] - 1, b] = True

        E, Wx, Wh, bh = (params.part(n) for n in ("E", "W_x", "W_h", "b_h"))
        Wo, bo = params.part("W_o"), params.part("b_o")
        steps = T - 1
        H = arch.hidden_dim
        xs = E[seqs[:, :steps]].transpose(1, 0, 2)  # (steps, B, d)
        hs = np.zeros((steps, B, H))
        h = np.zeros((B, H))
        for t in range(steps):
            h = np.tanh(xs[t] @ Wx.T + h @ Wh.T + bh)
            hs[t] = h
        logp = _log_softmax(hs @ Wo.T + bo)  # (steps, B, V)
        targets = seqs[:, 1:].T  # (steps, B)
        token_lp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]

        self.params = params
        self.prompt_lens = [len(p) for p in prompts]
        self.response_lens = [len(r) for r in responses]
        self.seqs = seqs
        self.mask = mask
        self.xs = xs
        self.hs = hs
        self.logp = logp
        self.targets = targets
        self.token_lp = token_lp

    def response_logprobs(self) -> list[np.ndarray]:
        out = []
        for b, (p, r) in enumerate(zip(self.prompt_lens, self.response_lens)):
            out.append(self.token_lp[p - 1: p - 1 + r, b].copy())
        return out

    def backward(self, weights: Sequence[np.ndarray]) -> np.ndarray:
        """Gradient of sum_b sum_t weights[b][t] * logprob[b][t] w.r.t. theta."""
        params = self.params
        arch = params.arch
        steps, B = self.mask.shape
        W = np.zeros((steps, B))
        for b, (p, r) in enumerate(zip(self.prompt_lens, self.response_lens)):
            w = np.asarray(weights[b], dtype=np.float64)
            if w.shape != (r,):
                raise DataError(f"weight vector {b} has shape {w.shape}, expected ({r},)")
            W[p - 1: p - 1 + r, b] = w

        grads = {name: np.zeros(shape) for name, shape in arch.shapes().items()}
        if steps == 0:
            return np.concatenate([g.ravel() for g in grads.values()])
        Wx, Wh, Wo = params.part("W_x"), params.part("W_h"), params.part("W_o")

        # d/dlogits of w * log softmax(logits)[target] = w * (onehot - softmax)
        dlogits = -np.exp(self.logp) * W[..., None]
        np.put_along_axis(
            dlogits, self.targets[..., None],
            np.take_along_axis(dlogits, self.targets[..., None], axis=-1) + W[..., None],
            axis=-1,
        )
        grads["W_o"] = np.einsum("tbv,tbh->vh", dlogits, self.hs)
        grads["b_o"] = dlogits.sum(axis=(0, 1))
        dh_out = dlogits @ Wo  # (steps, B, H)

        dxs = np.zeros_like(self.xs)
        dh_next = np.zeros((B, arch.hidden_dim))
        for t in range(steps - 1, -1, -1):
            h = self.hs[t]
            da = (dh_out[t] + dh_next) * (1.0 - h * h)
            h_prev = self.hs[t - 1] if t > 0 else np.zeros_like(h)
            grads["W_x"] += da.T @ self.xs[t]
            grads["W_h"] += da.T @ h_prev
            grads["b_h"] += da.sum(axis=0)
            dxs[t] = da @ Wx
            dh_next = da @ Wh
        np.add.at(grads["E"], self.seqs[:, :steps].T, dxs)
        return np.concatenate([grads[n].ravel() for n in _PARTS])


def logprob_many(params: PolicyParams, prompts, responses) -> list[np.ndarray]:
    return _Tape(params, prompts, responses).response_logprobs()


def logprob_response(params: PolicyParams, prompt, response) -> np.ndarray:
    """Per-token natural-log probabilities of ``response`` given ``prompt``."""
    return _Tape(params, [tuple(prompt)], [tuple(response)]).response_logprobs()[0]


def grad_logprob(params: PolicyParams, prompt, response) -> np.ndarray:
    """Gradient of the summed response log-probability with respect to theta."""
    tape = _Tape(params, [tuple(prompt)], [tuple(response)])
    return tape.backward([np.ones(len(response))])


def next_token_logprobs(params: PolicyParams, prefix) -> np.ndarray:
    """Full log-distribution over the token following ``prefix``."""
    prefix = tuple(prefix)
    _check_fits(params.arch, len(prefix), 0)
    _check_tokens(params.arch, prefix)
    h = np.zeros(params.arch.hidden_dim)
    for tok in prefix:
        h = np.tanh(params.part("W_x") @ params.part("E")[tok] + params.part("W_h") @ h + params.part("b_h"))
    return _log_softmax(params.part("W_o") @ h + params.part("b_o"))


def sample_many(params: PolicyParams, prompts, temperature: float, max_len: int,
                seeds: Sequence[int], eos: int = vocab.EOS) -> list[Response]:
    """Sample one response per prompt; sequence ``b`` draws only from ``seeds[b]``.

    Each sequence pre-draws ``max_len`` uniforms from its own generator and
    samples by inverse CDF, so the result for a sequence does not depend on
    which other sequences share the batch. Returned log-probabilities are
    under the temperature-1 distribution.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    if not temperature > 0:
        raise ConfigError("temperature must be > 0")
    arch = params.arch
    B = len(prompts)
    if B == 0:
        return []
    if len(seeds) != B:
        raise ConfigError("need one seed per prompt")
    for p in prompts:
        _check_fits(arch, len(p), max_len)
        _check_tokens(arch, p)
    E, Wx, Wh, bh = (params.part(n) for n in ("E", "W_x", "W_h", "b_h"))
    Wo, bo = params.part("W_o"), params.part("b_o")
    uniforms = np.stack([np.random.default_rng(s).random(max_len) for s in seeds])

    # Consume prompts; shorter prompts freeze their state once exhausted.
    P = max(len(p) for p in prompts)
    padded = np.zeros((B, P), dtype=np.int64)
    plen = np.array([len(p) for p in prompts])
    for b, p in enumerate(prompts):
        padded[b, : len(p)] = p
    h = np.zeros((B, arch.hidden_dim))
    for t in range(P):
        live = (t < plen)[:, None]
        h = np.where(live, np.tanh(E[padded[:, t]] @ Wx.T + h @ Wh.T + bh), h)

    greedy = temperature <= TEMPERATURE_FLOOR
    tokens = [[] for _ in range(B)]
    logprobs = [[] for _ in range(B)]
    active = np.ones(B, dtype=bool)
    for j in range(max_len):
        logits = h @ Wo.T + bo
        logp = _log_softmax(logits)
        if greedy:
            choice = logits.argmax(axis=1)
        else:
            scaled = logits / temperature
            probs = np.exp(scaled - scaled.max(axis=1, keepdims=True))
            cdf = np.cumsum(probs, axis=1)
            threshold = uniforms[:, j:j + 1] * cdf[:, -1:]
            choice = np.minimum((cdf <= threshold).sum(axis=1), arch.vocab_size - 1)
        for b in np.flatnonzero(active):
            tok = int(choice[b])
            tokens[b].append(tok)
            logprobs[b].append(float(logp[b, tok]))
            if tok == eos:
                active[b] = False
        if not active.any() or j == max_len - 1:
            break
        h = np.tanh(E[choice] @ Wx.T + h @ Wh.T + bh)
    return [Response(tuple(t), np.array(lp)) for t, lp in zip(tokens, logprobs)]


def sample(params: PolicyParams, prompt, temperature: float, max_len: int, seed: int,
           eos: int = vocab.EOS) -> Response:
    """Autoregressive sampling; stops after EOS or ``max_len`` tokens."""
    return sample_many(params, [tuple(prompt)], temperature, max_len, [seed], eos=eos)[0]


CHECKPOINT_VERSION = 1


def save_policy(params: PolicyParams, path) -> None:
    """Text checkpoint; floats are written with repr so reloading is exact."""
    doc = {
        "format": "rlscale-policy",
        "version": CHECKPOINT_VERSION,
        "arch": params.arch.to_json(),
        "n_nonembed": params.n_nonembed,
        "theta": [float(x) for x in params.theta],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_policy(path) -> PolicyParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a policy checkpoint ({exc})") from None
    if doc.get("format") != "rlscale-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format")
    arch = ArchSpec(**doc["arch"])
    return PolicyParams(arch, doc["theta"])
