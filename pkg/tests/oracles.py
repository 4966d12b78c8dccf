"""Independent reference implementations used as test oracles.

Everything here is a direct, loop-level transcription of the defining
math, written against plain numpy so it shares no code with the package
paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference(fn, arrays: dict[str, np.ndarray], h: float = 1e-3) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function of named arrays."""
    grads = {}
    for name, base in arrays.items():
        grad = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(arrays)
            flat[i] = orig - h
            down = fn(arrays)
            flat[i] = orig
            grad.reshape(-1)[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def entity_attention_oracle(features, center, neighbors, W_list, q_src_list,
                            q_dst_list, slope=0.01):
    """Direct transcription of single-layer multi-head entity attention with
    the center included in the attention set."""
    ids = [center] + [n for n, _ in neighbors]
    outs = []
    for W, q_src, q_dst in zip(W_list, q_src_list, q_dst_list):
        q = np.concatenate([q_src, q_dst])
        proj = {j: features[j] @ W for j in set(ids)}
        scores = []
        for j in ids:
            cat = np.concatenate([proj[center], proj[j]])
            scores.append(leaky(q @ cat, slope))
        scores = np.array(scores)
        e = np.exp(scores - scores.max())
        alpha = e / e.sum()
        mixed = sum(alpha[k] * proj[j] for k, j in enumerate(ids))
        outs.append(leaky(mixed, slope))
    return np.concatenate(outs)


def relation_gated_oracle(features, neighbors, rel_embed, W1, b1, W2, b2,
                          W_list, relation_offset=0, slope=0.01):
    """Direct transcription of the relation-gated attention branch:
    per-neighbor gate value from the mean relation embedding through a
    two-layer network, softmax over neighbors only."""
    if not neighbors:
        return np.zeros(sum(W.shape[1] for W in W_list))
    gammas = []
    for _, rels in neighbors:
        r = np.mean([rel_embed[relation_offset + rid] for rid in rels], axis=0)
        inner = leaky(r @ W1 + b1, slope)
        gammas.append(leaky(inner @ W2 + b2, slope)[0])
    gammas = np.array(gammas)
    e = np.exp(gammas - gammas.max())
    beta = e / e.sum()
    outs = []
    for W in W_list:
        mixed = sum(beta[k] * (features[j] @ W) for k, (j, _) in enumerate(neighbors))
        outs.append(leaky(mixed, slope))
    return np.concatenate(outs)


def semantic_oracle(features, rel_name_table, center, neighbors, W_ent_list,
                    W_rel_list, q_src_list, q_dst_list, slope=0.01):
    """Direct transcription of the semantic branch: neighbors represented
    by the mean relation-name embedding of their edges, attention over
    neighbors only."""
    if not neighbors:
        return np.zeros(sum(W.shape[1] for W in W_rel_list))
    h_hat = [np.mean([rel_name_table[rid] for rid in rels], axis=0)
             for _, rels in neighbors]
    outs = []
    for W_ent, W_rel, q_src, q_dst in zip(W_ent_list, W_rel_list, q_src_list, q_dst_list):
        q = np.concatenate([q_src, q_dst])
        proj_c = features[center] @ W_ent
        proj = [h @ W_rel for h in h_hat]
        scores = np.array([leaky(q @ np.concatenate([proj_c, p]), slope) for p in proj])
        e = np.exp(scores - scores.max())
        alpha = e / e.sum()
        mixed = sum(alpha[k] * proj[k] for k in range(len(proj)))
        outs.append(leaky(mixed, slope))
    return np.concatenate(outs)


def fusion_oracle(parts, W, b, slope=0.01):
    return leaky(np.concatenate(parts) @ W + b, slope)


def nce_oracle(v: np.ndarray, v_prime: np.ndarray, negatives: np.ndarray,
               tau: float) -> float:
    """Scalar-formula InfoNCE, mean over the batch, no shortcuts."""
    total = 0.0
    for x in range(v.shape[0]):
        pos = math.exp(float(v[x] @ v_prime[x]) / tau)
        denom = pos + sum(math.exp(float(v[x] @ neg) / tau) for neg in negatives)
        total += -math.log(pos / denom)
    return total / v.shape[0]


def icl_oracle(v, v_pseudo, same_negs, cross_negs, tau, beta, mask) -> float:
    """Beta blend of two InfoNCE terms over the unmasked rows."""
    rows = []
    for x in range(v.shape[0]):
        if not mask[x]:
            continue
        pos = math.exp(float(v[x] @ v_pseudo[x]) / tau)

        def term(negs):
            denom = pos + sum(math.exp(float(v[x] @ n) / tau) for n in negs)
            return -math.log(pos / denom)

        rows.append(beta * term(same_negs) + (1.0 - beta) * term(cross_negs))
    return sum(rows) / len(rows) if rows else 0.0


def mine_oracle(v1: np.ndarray, v2: np.ndarray, lam: float):
    """Naive O(n^2) scan: per query, distances to every candidate."""
    out12 = {}
    for i in range(v1.shape[0]):
        d = np.sqrt(np.sum((v2.astype(np.float64) - v1[i].astype(np.float64)) ** 2, axis=1))
        j = int(np.argmin(d))
        if d[j] < lam:
            out12[i] = (j, float(d[j]))
    out21 = {}
    for j in range(v2.shape[0]):
        d = np.sqrt(np.sum((v1.astype(np.float64) - v2[j].astype(np.float64)) ** 2, axis=1))
        i = int(np.argmin(d))
        if d[i] < lam:
            out21[j] = (i, float(d[i]))
    return out12, out21


def adam_single_step_oracle(param: float, grad: float, lr: float,
                            beta1=0.9, beta2=0.999, eps=1e-8) -> float:
    """Hand-evaluated first Adam step with bias correction."""
    m = (1 - beta1) * grad / (1 - beta1)
    v = (1 - beta2) * grad * grad / (1 - beta2)
    return param - lr * m / (math.sqrt(v) + eps)


def merge_oracle(p12: dict, p21: dict):
    """Stated precedence rule: own-direction entry wins; otherwise inherit
    a unique reverse-direction entry."""
    fwd = dict(p12)
    bwd = dict(p21)
    rev1: dict[int, list] = {}
    for src2, (dst1, dist) in p21.items():
        rev1.setdefault(dst1, []).append((src2, dist))
    for e1, cands in rev1.items():
        if e1 not in fwd and len(cands) == 1:
            fwd[e1] = cands[0]
    rev2: dict[int, list] = {}
    for src1, (dst2, dist) in p12.items():
        rev2.setdefault(dst2, []).append((src1, dist))
    for e2, cands in rev2.items():
        if e2 not in bwd and len(cands) == 1:
            bwd[e2] = cands[0]
    return fwd, bwd
