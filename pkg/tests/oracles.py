"""Independent reference implementations used to cross-check the fast paths.

Everything here is deliberately written the slow, obvious way (explicit
loops, no batching, no deduplication) so it shares no structure with the
implementations under test.
"""

from __future__ import annotations

import numpy as np

from babylab.model import LN_EPS, Parameters
from babylab.tokenizer import BOS_ID, EOS_ID, MASK_ID, Vocabulary, encode
import babylab.model as model_mod


def _ln_vec(v: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = v.mean()
    var = ((v - mu) ** 2).mean()
    return (v - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu_scalar(x: float) -> float:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def naive_forward(params: Parameters, input_ids: np.ndarray, attention_mask: np.ndarray) -> np.ndarray:
    """Reference forward pass: explicit loops over examples, heads, positions."""
    cfg = params.config
    ids = np.asarray(input_ids)
    mask = np.asarray(attention_mask, dtype=bool)
    B, L = ids.shape
    H, A = cfg.hidden_size, cfg.num_heads
    D = H // A
    logits = np.zeros((B, L, cfg.vocab_size), dtype=np.float64)
    for bi in range(B):
        x = np.zeros((L, H), dtype=np.float64)
        for t in range(L):
            x[t] = params["tok_emb"][ids[bi, t]] + params["pos_emb"][t]
        for li in range(cfg.num_layers):
            g1, b1 = params[f"layer{li}.ln1_g"], params[f"layer{li}.ln1_b"]
            h = np.stack([_ln_vec(x[t], g1, b1) for t in range(L)])
            attn_concat = np.zeros((L, H), dtype=np.float64)
            for a in range(A):
                wq = params[f"layer{li}.wq"][:, a * D : (a + 1) * D]
                wk = params[f"layer{li}.wk"][:, a * D : (a + 1) * D]
                wv = params[f"layer{li}.wv"][:, a * D : (a + 1) * D]
                q = h @ wq
                k = h @ wk
                v = h @ wv
                for i in range(L):
                    scores = np.full(L, -np.inf)
                    for j in range(L):
                        if mask[bi, j]:
                            scores[j] = float(q[i] @ k[j]) / np.sqrt(D)
                    e = np.exp(scores - scores[np.isfinite(scores)].max())
                    e[~np.isfinite(scores)] = 0.0
                    p = e / e.sum()
                    ctx = np.zeros(D, dtype=np.float64)
                    for j in range(L):
                        ctx += p[j] * v[j]
                    attn_concat[i, a * D : (a + 1) * D] = ctx
            x = x + attn_concat @ params[f"layer{li}.wo"]
            g2, b2 = params[f"layer{li}.ln2_g"], params[f"layer{li}.ln2_b"]
            for t in range(L):
                h2 = _ln_vec(x[t], g2, b2)
                u = h2 @ params[f"layer{li}.w1"] + params[f"layer{li}.b1"]
                act = np.array([_gelu_scalar(ui) for ui in u])
                x[t] = x[t] + act @ params[f"layer{li}.w2"] + params[f"layer{li}.b2"]
        for t in range(L):
            xf = _ln_vec(x[t], params["ln_f_g"], params["ln_f_b"])
            logits[bi, t] = xf @ params["tok_emb"].T + params["out_bias"]
    return logits


def naive_pll(params: Parameters, vocab: Vocabulary, sentence: str) -> float:
    """One full forward per masked position, batch of one."""
    ids = encode(vocab, sentence)
    total = 0.0
    for i in range(len(ids)):
        row = np.array([[BOS_ID] + ids + [EOS_ID]])
        row[0, i + 1] = MASK_ID
        logits = model_mod.forward(params, row, train=False)
        sel = logits[0, i + 1].astype(np.float64)
        logz = np.log(np.exp(sel - sel.max()).sum()) + sel.max()
        total += float(sel[ids[i]] - logz)
    return total


def naive_mlm_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Per-position softmax in extended precision, explicit accumulation."""
    logits = np.asarray(logits, dtype=np.longdouble)
    total = np.longdouble(0)
    count = 0
    B, L, V = logits.shape
    for b in range(B):
        for t in range(L):
            if labels[b, t] < 0:
                continue
            row = logits[b, t]
            z = np.exp(row - row.max()).sum()
            p = np.exp(row[labels[b, t]] - row.max()) / z
            total += -np.log(p)
            count += 1
    return float(total / count)


def rank_then_pearson(x, y) -> float:
    """Brute-force spearman: insertion ranks with tie averaging, then Pearson."""
    def ranks(vals):
        out = []
        for v in vals:
            less = sum(1 for w in vals if w < v)
            equal = sum(1 for w in vals if w == v)
            out.append(less + (equal + 1) / 2.0)
        return out

    rx, ry = ranks(list(x)), ranks(list(y))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = np.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return float(num / den)


def fd_gradient(params: Parameters, ids, mask, labels, name: str, index, h: float = 1e-3) -> float:
    """Central finite difference of the mean masked cross-entropy."""
    arr = params.arrays[name]
    orig = arr[index]
    arr[index] = orig + h
    lp = model_mod.mlm_loss(model_mod.forward(params, ids, mask), labels)
    arr[index] = orig - h
    lm = model_mod.mlm_loss(model_mod.forward(params, ids, mask), labels)
    arr[index] = orig
    return (lp - lm) / (2.0 * h)


def simple_bpe_merges(corpus_units: list[list[bytes]], num_merges: int) -> list[tuple[bytes, bytes]]:
    """Reference BPE trainer over raw unit occurrences, no deduplication."""
    seqs = [list(u) for u in corpus_units]
    merges: list[tuple[bytes, bytes]] = []
    for _ in range(num_merges):
        counts: dict[tuple[bytes, bytes], int] = {}
        for seq in seqs:
            for a, b in zip(seq, seq[1:]):
                counts[(a, b)] = counts.get((a, b), 0) + 1
        if not counts:
            break
        best_count = max(counts.values())
        best = min(p for p, c in counts.items() if c == best_count)
        merges.append(best)
        new_sym = best[0] + best[1]
        for seq in seqs:
            i = 0
            while i < len(seq) - 1:
                if seq[i] == best[0] and seq[i + 1] == best[1]:
                    seq[i : i + 2] = [new_sym]
                else:
                    i += 1
    return merges
