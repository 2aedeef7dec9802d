"""Character-level ASR: Transformer encoder-decoder trained with a joint
CTC/attention loss, decoded by a length-synchronous beam with CTC prefix
scoring and n-gram shallow fusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor

BLANK_ID = 0
UNK_ID = 1
SOS_ID = 2
EOS_ID = 3
SPECIALS = ("<blank>", "<unk>", "<sos>", "<eos>")


class Vocabulary:
    """Ordered character set plus specials; line index in the vocab file = id."""

    def __init__(self, chars):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("duplicate characters in vocabulary")
        self.tokens = list(SPECIALS) + chars
        self._to_id = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def chars(self):
        return self.tokens[len(SPECIALS):]

    def encode(self, text: str) -> list[int]:
        return [self._to_id.get(ch, UNK_ID) for ch in text]

    def decode(self, ids) -> str:
        return "".join(self.tokens[i] for i in ids if i >= len(SPECIALS))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.strip()]
        if tokens[:len(SPECIALS)] != list(SPECIALS):
            raise ValueError(f"vocabulary file must start with {SPECIALS}")
        return cls(tokens[len(SPECIALS):])


@dataclass
class TokenSequence:
    ids: list[int]
    vocab: Vocabulary

    def __post_init__(self):
        for i in self.ids:
            if not 0 <= i < len(self.vocab):
                raise ValueError(f"token id {i} outside vocabulary of {len(self.vocab)}")

    @property
    def text(self) -> str:
        return self.vocab.decode(self.ids)


@dataclass
class AsrConfig:
    encoder_layers: int = 12
    decoder_layers: int = 6
    heads: int = 4
    ffn_dim: int = 2048
    model_dim: int = 256
    dropout: float = 0.1
    ctc_weight: float = 0.3        # lambda in the joint training loss
    label_smoothing: float = 0.1
    subsample_factor: int = 4      # 10 ms features x4 -> 40 ms effective shift

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError(f"ctc_weight must be in [0, 1], got {self.ctc_weight}")
        if self.subsample_factor not in (2, 4):
            raise ValueError(f"subsample_factor must be 2 or 4, got {self.subsample_factor}")


@dataclass
class RunMode:
    """Training toggles; eval mode is dropout-free and deterministic."""
    training: bool = False
    rng: np.random.Generator | None = None

    def drop(self, x: Tensor, p: float) -> Tensor:
        if not self.training or p <= 0.0:
            return x
        return ad.dropout(x, p, self.rng)


EVAL = RunMode()


def subsample_factor_for_shift(frame_shift: float) -> int:
    """Keep the 40 ms effective shift: x4 for 10 ms features, x2 for 20 ms."""
    factor = round(0.04 / frame_shift)
    if factor not in (2, 4):
        raise ValueError(f"frame shift {frame_shift}s incompatible with 40 ms target")
    return factor


# ---------------------------------------------------------------------------
# parameter initialization


def init_asr_params(store: ParameterStore, config: AsrConfig, vocab_size: int,
                    input_dim: int, rng: np.random.Generator):
    d, ffn = config.model_dim, config.ffn_dim

    def xavier(*shape, fan_in):
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)

    def add_norm(prefix):
        store.add(f"{prefix}.gain", np.ones(d))
        store.add(f"{prefix}.bias", np.zeros(d))

    def add_attn(prefix):
        for nm in ("wq", "wk", "wv", "wo"):
            store.add(f"{prefix}.{nm}.weight", xavier(d, d, fan_in=d))
            store.add(f"{prefix}.{nm}.bias", np.zeros(d))

    def add_ffn(prefix):
        store.add(f"{prefix}.w1.weight", xavier(ffn, d, fan_in=d))
        store.add(f"{prefix}.w1.bias", np.zeros(ffn))
        store.add(f"{prefix}.w2.weight", xavier(d, ffn, fan_in=ffn))
        store.add(f"{prefix}.w2.bias", np.zeros(d))

    c = d  # frontend conv channels
    store.add("asr.frontend.conv1.weight", rng.normal(0.0, np.sqrt(2.0 / 9), size=(c, 1, 3, 3)))
    store.add("asr.frontend.conv1.bias", np.zeros(c))
    store.add("asr.frontend.conv2.weight", rng.normal(0.0, np.sqrt(2.0 / (9 * c)), size=(c, c, 3, 3)))
    store.add("asr.frontend.conv2.bias", np.zeros(c))
    freq = -(-input_dim // 2)
    freq = -(-freq // 2)
    store.add("asr.frontend.out.weight", xavier(d, c * freq, fan_in=c * freq))
    store.add("asr.frontend.out.bias", np.zeros(d))

    for i in range(config.encoder_layers):
        p = f"asr.enc.layer{i}"
        add_norm(f"{p}.norm1")
        add_attn(f"{p}.self_attn")
        add_norm(f"{p}.norm2")
        add_ffn(f"{p}.ffn")
    add_norm("asr.enc.final_norm")
    store.add("asr.ctc.weight", xavier(vocab_size, d, fan_in=d))
    store.add("asr.ctc.bias", np.zeros(vocab_size))

    store.add("asr.dec.embed.weight", rng.normal(0.0, np.sqrt(1.0 / d), size=(vocab_size, d)))
    for i in range(config.decoder_layers):
        p = f"asr.dec.layer{i}"
        add_norm(f"{p}.norm1")
        add_attn(f"{p}.self_attn")
        add_norm(f"{p}.norm2")
        add_attn(f"{p}.src_attn")
        add_norm(f"{p}.norm3")
        add_ffn(f"{p}.ffn")
    add_norm("asr.dec.final_norm")
    store.add("asr.dec.out.weight", xavier(vocab_size, d, fan_in=d))
    store.add("asr.dec.out.bias", np.zeros(vocab_size))


# ---------------------------------------------------------------------------
# building blocks


def layer_norm_t(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mean = ad.tmean(x, axis=-1, keepdims=True)
    centered = x - mean
    var = ad.tmean(ad.square(centered), axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gain + bias


def affine(x: Tensor, params: ParameterStore, prefix: str) -> Tensor:
    return x @ ad.transpose(params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: ParameterStore,
                         prefix: str, heads: int,
                         blocked: np.ndarray | None = None) -> Tensor:
    d = q_in.data.shape[1]
    dh = d // heads
    q = affine(q_in, params, f"{prefix}.wq")
    k = affine(kv_in, params, f"{prefix}.wk")
    v = affine(kv_in, params, f"{prefix}.wv")
    outs = []
    for h in range(heads):
        qh = ad.slice_rows(q, h * dh, (h + 1) * dh, axis=1)
        kh = ad.slice_rows(k, h * dh, (h + 1) * dh, axis=1)
        vh = ad.slice_rows(v, h * dh, (h + 1) * dh, axis=1)
        outs.append(ad.scaled_dot_attention(qh, kh, vh, blocked=blocked))
    return affine(ad.concat(outs, axis=1), params, f"{prefix}.wo")


def feed_forward(x: Tensor, params: ParameterStore, prefix: str,
                 config: AsrConfig, mode: RunMode) -> Tensor:
    h = ad.relu(affine(x, params, f"{prefix}.w1"))
    h = mode.drop(h, config.dropout)
    return affine(h, params, f"{prefix}.w2")


def subsample_frontend(feats: Tensor, params: ParameterStore, config: AsrConfig,
                       mode: RunMode = EVAL) -> Tensor:
    """Two stride-2 convs (time stride halved for factor 2), then affine to model_dim."""
    t, d = feats.data.shape
    if t < 4:
        raise ValueError(f"need at least 4 feature frames, got {t}")
    x = ad.reshape(feats, (1, t, d))
    x = ad.relu(ad.conv2d(x, params["asr.frontend.conv1.weight"], (2, 2), (1, 1),
                          bias=params["asr.frontend.conv1.bias"]))
    t2 = 1 if config.subsample_factor == 2 else 2
    x = ad.relu(ad.conv2d(x, params["asr.frontend.conv2.weight"], (t2, 2), (1, 1),
                          bias=params["asr.frontend.conv2.bias"]))
    c, tt, dd = x.data.shape
    x = ad.reshape(ad.transpose(x, (1, 0, 2)), (tt, c * dd))
    return affine(x, params, "asr.frontend.out")


def encode(feats: Tensor, params: ParameterStore, config: AsrConfig,
           mode: RunMode = EVAL) -> Tensor:
    """Subsample, add positions, run the pre-norm self-attention stack."""
    x = subsample_frontend(feats, params, config, mode)
    t, d = x.data.shape
    x = x * np.sqrt(d) + Tensor(sinusoidal_positions(t, d, x.dtype))
    x = mode.drop(x, config.dropout)
    for i in range(config.encoder_layers):
        p = f"asr.enc.layer{i}"
        h = layer_norm_t(x, params[f"{p}.norm1.gain"], params[f"{p}.norm1.bias"])
        x = x + mode.drop(multi_head_attention(h, h, params, f"{p}.self_attn",
                                               config.heads), config.dropout)
        h = layer_norm_t(x, params[f"{p}.norm2.gain"], params[f"{p}.norm2.bias"])
        x = x + mode.drop(feed_forward(h, params, f"{p}.ffn", config, mode), config.dropout)
    return layer_norm_t(x, params["asr.enc.final_norm.gain"], params["asr.enc.final_norm.bias"])


def decode_states(enc_out: Tensor, token_ids: list[int], params: ParameterStore,
                  config: AsrConfig, mode: RunMode = EVAL) -> Tensor:
    """Teacher-forced decoder log-probs [len(token_ids), vocab]."""
    n = len(token_ids)
    d = config.model_dim
    x = ad.embedding(params["asr.dec.embed.weight"], np.asarray(token_ids)) * np.sqrt(d)
    x = x + Tensor(sinusoidal_positions(n, d, x.dtype))
    x = mode.drop(x, config.dropout)
    causal = np.triu(np.ones((n, n), dtype=bool), k=1)
    for i in range(config.decoder_layers):
        p = f"asr.dec.layer{i}"
        h = layer_norm_t(x, params[f"{p}.norm1.gain"], params[f"{p}.norm1.bias"])
        x = x + mode.drop(multi_head_attention(h, h, params, f"{p}.self_attn",
                                               config.heads, blocked=causal), config.dropout)
        h = layer_norm_t(x, params[f"{p}.norm2.gain"], params[f"{p}.norm2.bias"])
        x = x + mode.drop(multi_head_attention(h, enc_out, params, f"{p}.src_attn",
                                               config.heads), config.dropout)
        h = layer_norm_t(x, params[f"{p}.norm3.gain"], params[f"{p}.norm3.bias"])
        x = x + mode.drop(feed_forward(h, params, f"{p}.ffn", config, mode), config.dropout)
    x = layer_norm_t(x, params["asr.dec.final_norm.gain"], params["asr.dec.final_norm.bias"])
    return ad.log_softmax(affine(x, params, "asr.dec.out"))


def ctc_log_probs(enc_out: Tensor, params: ParameterStore) -> Tensor:
    return ad.log_softmax(affine(enc_out, params, "asr.ctc"))


# ---------------------------------------------------------------------------
# losses


def ctc_required_frames(target: list[int]) -> int:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(log_probs: Tensor, target: list[int], blank: int = BLANK_ID) -> Tensor:
    """Negative log marginal over all blank-augmented alignments.

    Forward recursion in log space; the backward pass uses the matching beta
    recursion and state posteriors.
    """
    t_enc, vocab = log_probs.data.shape
    target = list(target)
    need = ctc_required_frames(target)
    if t_enc < need:
        raise ValueError(f"target needs at least {need} frames, got {t_enc}")
    ext = [blank]
    for c in target:
        ext.extend((c, blank))
    s = len(ext)
    ext_arr = np.asarray(ext)
    lp = log_probs.data.astype(np.float64)
    lp_ext = lp[:, ext_arr]                          # [t, s]
    skip_ok = np.zeros(s, dtype=bool)
    skip_ok[2:] = (ext_arr[2:] != blank) & (ext_arr[2:] != ext_arr[:-2])

    neg = -np.inf
    alpha = np.full((t_enc, s), neg)
    alpha[0, 0] = lp_ext[0, 0]
    if s > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, t_enc):
        prev = alpha[t - 1]
        stay = prev
        step1 = np.concatenate(([neg], prev[:-1]))
        step2 = np.where(skip_ok, np.concatenate(([neg, neg], prev[:-2])), neg)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step1), step2) + lp_ext[t]
    tail = alpha[-1, -1] if s == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    loss = -tail

    def back(g):
        beta = np.full((t_enc, s), neg)
        beta[-1, -1] = 0.0
        if s > 1:
            beta[-1, -2] = 0.0
        for t in range(t_enc - 2, -1, -1):
            nxt = beta[t + 1] + lp_ext[t + 1]
            stay = nxt
            step1 = np.concatenate((nxt[1:], [neg]))
            skip_fwd = np.zeros(s, dtype=bool)
            skip_fwd[:-2] = skip_ok[2:]
            step2 = np.where(skip_fwd, np.concatenate((nxt[2:], [neg, neg])), neg)
            beta[t] = np.logaddexp(np.logaddexp(stay, step1), step2)
        occ = np.exp(alpha + beta - tail)             # [t, s] state occupancy
        grad = np.zeros_like(lp)
        for si in range(s):
            grad[:, ext_arr[si]] += occ[:, si]
        ad._accum(log_probs, (-float(g) * grad).astype(log_probs.dtype))
    return ad._make(np.asarray(loss), (log_probs,), back)


def label_smoothed_nll(log_probs: Tensor, target_ids: list[int], smoothing: float) -> Tensor:
    """Cross-entropy with uniform label smoothing, averaged over positions."""
    vocab = log_probs.data.shape[1]
    nll = -ad.tmean(ad.gather_rows(log_probs, np.asarray(target_ids)))
    if smoothing == 0.0:
        return nll
    uniform = -ad.tmean(log_probs)
    return nll * (1.0 - smoothing) + uniform * smoothing


def attention_loss(enc_out: Tensor, target: TokenSequence, params: ParameterStore,
                   config: AsrConfig, mode: RunMode = EVAL) -> Tensor:
    """Teacher-forced label-smoothed cross-entropy with sos/eos shifting."""
    if not target.ids:
        raise ValueError("empty target")
    inputs = [SOS_ID] + list(target.ids)
    outputs = list(target.ids) + [EOS_ID]
    log_probs = decode_states(enc_out, inputs, params, config, mode)
    return label_smoothed_nll(log_probs, outputs, config.label_smoothing)


def joint_asr_loss(ctc, att, lam: float):
    """lam * ctc + (1 - lam) * att; works on floats and Tensors alike."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"ctc weight must be in [0, 1], got {lam}")
    return ctc * lam + att * (1.0 - lam)


def teacher_forced_accuracy(enc_out: Tensor, target: TokenSequence,
                            params: ParameterStore, config: AsrConfig) -> tuple[int, int]:
    """(correct, total) next-token counts under teacher forcing, eval mode."""
    inputs = [SOS_ID] + list(target.ids)
    outputs = np.asarray(list(target.ids) + [EOS_ID])
    log_probs = decode_states(enc_out, inputs, params, config, EVAL)
    pred = log_probs.data.argmax(axis=1)
    return int((pred == outputs).sum()), len(outputs)


# ---------------------------------------------------------------------------
# character n-gram language model


class CharNgramLM:
    """Add-k smoothed n-gram over token ids with backoff to shorter contexts.

    p(next | ctx) = (count(ctx, next) + k) / (count(ctx) + k * V) when the
    context was seen, else the same formula one order down; the empty context
    is always defined, so every score is finite.
    """

    def __init__(self, order: int = 3, k: float = 0.1, vocab_ids=None):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.k = k
        self.vocab_ids = list(vocab_ids) if vocab_ids is not None else []
        self._next: dict[tuple, dict[int, int]] = {}
        self._ctx: dict[tuple, int] = {}

    def train(self, sequences):
        for seq in sequences:
            seq = list(seq)
            for n in range(self.order):
                padded = [SOS_ID] * n + seq
                for i in range(len(padded) - n):
                    ctx = tuple(padded[i:i + n])
                    nxt = padded[i + n]
                    self._ctx[ctx] = self._ctx.get(ctx, 0) + 1
                    slot = self._next.setdefault(ctx, {})
                    slot[nxt] = slot.get(nxt, 0) + 1

    def score(self, context, next_token: int) -> float:
        """log p(next_token | last order-1 tokens of context)."""
        v = len(self.vocab_ids)
        if v == 0:
            raise ValueError("LM has an empty vocabulary")
        ctx = tuple(context[-(self.order - 1):]) if self.order > 1 else ()
        while ctx and ctx not in self._ctx:
            ctx = ctx[1:]
        total = self._ctx.get(ctx, 0)
        hits = self._next.get(ctx, {}).get(next_token, 0)
        return float(np.log((hits + self.k) / (total + self.k * v)))


def train_char_lm(texts, vocab: Vocabulary, order: int = 3, k: float = 0.1) -> CharNgramLM:
    """Fit the decoding LM on transcripts; predicts characters and eos."""
    lm = CharNgramLM(order=order, k=k,
                     vocab_ids=[vocab.encode(c)[0] for c in vocab.chars] + [EOS_ID])
    lm.train([vocab.encode(t) + [EOS_ID] for t in texts])
    return lm


# ---------------------------------------------------------------------------
# CTC prefix scoring and beam search


class CTCPrefixScorer:
    """Prefix probabilities over CTC frame posteriors.

    State per prefix g: r_b[t], r_nb[t] = log prob of alignments of g over
    frames 0..t ending in blank / non-blank.  Extending g by c:

        phi[t]   = r_b[t] (+ r_nb[t] unless c repeats the last symbol)
        r_nb'[t] = logaddexp(r_nb'[t-1], phi[t-1]) + x[t, c]
        r_b'[t]  = logaddexp(r_b'[t-1], r_nb'[t-1]) + x[t, blank]
        psi'     = logaddexp over t of phi[t-1] + x[t, c]   (prefix score)

    and the eos score of g is logaddexp(r_b[T-1], r_nb[T-1]).
    """

    def __init__(self, log_probs: np.ndarray, blank: int = BLANK_ID):
        self.x = np.asarray(log_probs, dtype=np.float64)
        self.blank = blank
        self.t = self.x.shape[0]

    def initial_state(self):
        r_b = np.cumsum(self.x[:, self.blank])
        r_nb = np.full(self.t, -np.inf)
        return r_b, r_nb, 0.0

    def extend(self, state, last_token: int | None, c: int):
        r_b, r_nb, _psi = state
        xc = self.x[:, c]
        xb = self.x[:, self.blank]
        phi = r_b if c == last_token else np.logaddexp(r_b, r_nb)
        n_nb = np.full(self.t, -np.inf)
        n_b = np.full(self.t, -np.inf)
        # only the empty prefix can start emitting c at frame 0
        start = xc[0] if last_token is None else -np.inf
        n_nb[0] = start
        psi = start
        for t in range(1, self.t):
            n_nb[t] = np.logaddexp(n_nb[t - 1], phi[t - 1]) + xc[t]
            n_b[t] = np.logaddexp(n_b[t - 1], n_nb[t - 1]) + xb[t]
            psi = np.logaddexp(psi, phi[t - 1] + xc[t])
        return (n_b, n_nb, float(psi)), float(psi)

    @staticmethod
    def eos_score(state) -> float:
        r_b, r_nb, _ = state
        return float(np.logaddexp(r_b[-1], r_nb[-1]))


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    att_score: float = 0.0
    ctc_score: float = 0.0
    lm_score: float = 0.0
    finished: bool = False
    flagged_unfinished: bool = False
    ctc_state: tuple | None = None

    def total(self, ctc_weight: float, lm_weight: float) -> float:
        return self.att_score + ctc_weight * self.ctc_score + lm_weight * self.lm_score


def beam_search_decode(enc_out: Tensor, params: ParameterStore, config: AsrConfig,
                       beam: int = 4, ctc_weight: float = 0.3,
                       lm_weight: float = 0.0, lm: CharNgramLM | None = None,
                       vocab: Vocabulary | None = None,
                       max_len: int | None = None) -> Hypothesis:
    """Length-synchronous beam over decoder steps; returns the best finished
    hypothesis (or the best live one, flagged, if none finished in time)."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    t_enc = enc_out.data.shape[0]
    max_len = max_len or t_enc
    vocab_size = params["asr.dec.out.weight"].data.shape[0]
    candidates = [i for i in range(vocab_size) if i not in (BLANK_ID, UNK_ID, SOS_ID)]

    scorer = None
    if ctc_weight != 0.0:
        scorer = CTCPrefixScorer(ctc_log_probs(enc_out, params).data)

    live = [Hypothesis(ctc_state=scorer.initial_state() if scorer else None)]
    done: list[Hypothesis] = []
    for _step in range(max_len):
        expanded: list[Hypothesis] = []
        for hyp in live:
            log_probs = decode_states(enc_out, [SOS_ID] + hyp.tokens, params, config, EVAL)
            att_row = log_probs.data[-1]
            last = hyp.tokens[-1] if hyp.tokens else None
            for c in candidates:
                att = hyp.att_score + float(att_row[c])
                lm_s = hyp.lm_score
                if lm is not None:
                    lm_s += lm.score([SOS_ID] + hyp.tokens, c)
                if c == EOS_ID:
                    ctc = scorer.eos_score(hyp.ctc_state) if scorer else 0.0
                    expanded.append(Hypothesis(list(hyp.tokens), att, ctc, lm_s, finished=True))
                else:
                    if scorer:
                        state, psi = scorer.extend(hyp.ctc_state, last, c)
                    else:
                        state, psi = None, 0.0
                    expanded.append(Hypothesis(hyp.tokens + [c], att, psi, lm_s,
                                               ctc_state=state))
        expanded.sort(key=lambda h: h.total(ctc_weight, lm_weight), reverse=True)
        kept = expanded[:beam]
        live = []
        for h in kept:
            (done if h.finished else live).append(h)
        if not live:
            break
    if done:
        return max(done, key=lambda h: h.total(ctc_weight, lm_weight))
    best = max(live, key=lambda h: h.total(ctc_weight, lm_weight))
    best.flagged_unfinished = True
    return best


def greedy_decode(enc_out: Tensor, params: ParameterStore, config: AsrConfig,
                  max_len: int | None = None) -> list[int]:
    """Argmax attention decoding; equals beam=1 with no CTC/LM weights."""
    hyp = beam_search_decode(enc_out, params, config, beam=1, ctc_weight=0.0,
                             lm_weight=0.0, max_len=max_len)
    return hyp.tokens
