#!/usr/bin/env python3
"""Independent NumPy forward pass for every variant/injector shape.

Parameters and inputs come from closed-form formulas keyed on parameter
names, so the C++ side can rebuild them without sharing an RNG. Writes
tests/unit/forward_oracle_data.hpp.
"""

import math
import sys
from pathlib import Path

import numpy as np

H, HEADS, K, LAYERS, DS, DA, B, TMAX = 8, 2, 3, 2, 2, 1, 2, 8
EPS = 1e-5


def code(name):
    return sum((i + 1) * ord(c) for i, c in enumerate(name)) % 1000


def pval(name, shape):
    n = int(np.prod(shape))
    c = code(name)
    return np.array([0.3 * math.sin(0.7 * j + 0.013 * c + 0.5) for j in range(n)]).reshape(shape)


def inputs():
    rtg = np.zeros((B, K, 1))
    st = np.zeros((B, K, DS))
    act = np.zeros((B, K, DA))
    ts = np.zeros((B, K), dtype=int)
    valid = np.ones((B, K), dtype=bool)
    known = np.ones((B, K), dtype=bool)
    valid[1, 0] = False
    known[1, 0] = False
    known[1, K - 1] = False
    for b in range(B):
        for t in range(K):
            if not valid[b, t]:
                continue
            rtg[b, t, 0] = 1.5 * math.cos(1.1 * t + 0.7 * b) - 0.2
            for j in range(DS):
                st[b, t, j] = math.sin(0.9 * t + 0.4 * j + 0.3 * b)
            if known[b, t]:
                act[b, t, 0] = 0.3 * math.cos(0.5 * t + b)
            ts[b, t] = t + 2 * b
    return rtg, st, act, ts, valid, known


def ln(x):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + EPS)


def softmax_masked(s, m):
    out = np.zeros_like(s)
    for idx in np.ndindex(s.shape[:-1]):
        row, keep = s[idx], m[idx]
        if not keep.any():
            continue
        e = np.where(keep, np.exp(row - row[keep].max()), 0.0)
        out[idx] = e / e.sum()
    return out


def attention(q, k, v, mask, heads):
    b, lq, h = q.shape
    d = h // heads
    out = np.zeros_like(q)
    for hd in range(heads):
        sl = slice(hd * d, (hd + 1) * d)
        s = q[:, :, sl] @ k[:, :, sl].transpose(0, 2, 1) / math.sqrt(d)
        out[:, :, sl] = softmax_masked(s, mask) @ v[:, :, sl]
    return out


class Params:
    def __init__(self):
        self.names = []

    def get(self, name, shape):
        self.names.append(name)
        return pval(name, shape)


CROSS = {
    "cross_q_to_kv": (True, False, False),
    "cross_k_to_qv": (False, True, False),
    "cross_kv_to_q": (False, True, True),
    "cross_qv_to_k": (True, False, True),
}


def injector(P, pre, inj, rtg, x, valid):
    kind = inj["kind"]
    din = x.shape[-1]
    if kind == "concat":
        r = inj.get("rtg_dim", H // 2)
        rr = rtg @ P.get(pre + "rtg_embed.weight", (1, r)) + P.get(pre + "rtg_embed.bias", (r,))
        wf = P.get(pre + "fuse.weight", (r + din, H))
        return np.concatenate([rr, x], -1) @ wf + P.get(pre + "fuse.bias", (H,))
    if kind == "adaln":
        z = rtg @ P.get(pre + "rtg_embed.weight", (1, H)) + P.get(pre + "rtg_embed.bias", (H,))
        mod = z @ P.get(pre + "modulation.weight", (H, 2 * H)) + P.get(pre + "modulation.bias", (2 * H,))
        return mod[..., :H] * ln(x) + mod[..., H:]
    qr, kr, vr = CROSS[kind]
    r = rtg @ P.get(pre + "rtg_embed.weight", (1, H)) + P.get(pre + "rtg_embed.bias", (H,))

    def proj(nm, from_rtg):
        src = r if from_rtg else x
        w = P.get(pre + nm + ".weight", (H if from_rtg else din, H))
        return src @ w + P.get(pre + nm + ".bias", (H,))

    q, k, v = proj("query", qr), proj("key", kr), proj("value", vr)
    mask = np.zeros((x.shape[0], K, K), dtype=bool)
    for b in range(x.shape[0]):
        for i in range(K):
            for j in range(K):
                mask[b, i, j] = valid[b, j] and (not inj.get("causal") or j <= i)
    out = attention(q, k, v, mask, 1)
    out = out @ P.get(pre + "out.weight", (H, H)) + P.get(pre + "out.bias", (H,))
    if inj.get("residual"):
        out = x + out
    return out


def forward(case):
    variant, inj = case["variant"], case.get("injector", {"kind": "concat"})
    rtg, st, act, ts, valid, known = inputs()
    P = Params()
    has_pre = variant in ("slim_pre", "slim_pre_post")
    has_post = variant in ("slim_post", "slim_pre_post")
    concat_pre = has_pre and inj["kind"] == "concat"

    if variant == "dt":
        rtg_w, rtg_b = P.get("embed.rtg.weight", (1, H)), P.get("embed.rtg.bias", (H,))
    if not concat_pre:
        s_w, s_b = P.get("embed.state.weight", (DS, H)), P.get("embed.state.bias", (H,))
    a_w, a_b = P.get("embed.action.weight", (DA, H)), P.get("embed.action.bias", (H,))
    table = P.get("embed.timestep", (TMAX, H))
    time = table[ts]

    a_tok = act @ a_w + a_b + time
    state_repr = None if concat_pre else st @ s_w + s_b
    if has_pre:
        state_repr = injector(P, "injector_pre.", inj, rtg, st if concat_pre else state_repr, valid)
    s_tok = state_repr + time
    if variant == "dt":
        r_tok = rtg @ rtg_w + rtg_b + time
        parts = [r_tok, s_tok, a_tok]
    else:
        parts = [s_tok, a_tok]
    per = len(parts)
    L = per * K
    x = np.stack(parts, axis=2).reshape(B, L, H)
    tok_mask = np.zeros((B, L), dtype=bool)
    for b in range(B):
        for t in range(K):
            for q in range(per):
                is_action = q == per - 1
                tok_mask[b, t * per + q] = valid[b, t] and (not is_action or known[b, t])
    mask = np.zeros((B, L, L), dtype=bool)
    for b in range(B):
        for i in range(L):
            for j in range(i + 1):
                mask[b, i, j] = tok_mask[b, j]

    for l in range(LAYERS):
        p = f"block{l}."
        g = lambda n, s: P.get(p + n, s)
        a = ln(x) * g("ln1.gain", (H,)) + g("ln1.bias", (H,))
        qw, qb = g("attn.query.weight", (H, H)), g("attn.query.bias", (H,))
        kw, kb = g("attn.key.weight", (H, H)), g("attn.key.bias", (H,))
        vw, vb = g("attn.value.weight", (H, H)), g("attn.value.bias", (H,))
        ow, ob = g("attn.out.weight", (H, H)), g("attn.out.bias", (H,))
        att = attention(a @ qw + qb, a @ kw + kb, a @ vw + vb, mask, HEADS)
        x1 = x + att @ ow + ob
        m = ln(x1) * g("ln2.gain", (H,)) + g("ln2.bias", (H,))
        fw, fb = g("mlp.fc.weight", (H, 4 * H)), g("mlp.fc.bias", (4 * H,))
        pw, pb = g("mlp.proj.weight", (4 * H, H)), g("mlp.proj.bias", (H,))
        x = x1 + np.maximum(m @ fw + fb, 0.0) @ pw + pb

    lg, lb = P.get("ln_final.gain", (H,)), P.get("ln_final.bias", (H,))
    if not has_post or case.get("after_final_ln", True):
        x = ln(x) * lg + lb
    slot = 1 if per == 3 else 0
    hs = x[:, [t * per + slot for t in range(K)], :]
    if has_post:
        hs = injector(P, "injector_post.", inj, rtg, hs, valid)
    out = hs @ P.get("head.weight", (H, DA)) + P.get("head.bias", (DA,))
    if case.get("tanh_head"):
        out = np.tanh(out)
    return out.reshape(-1)


def cases():
    out = [{"name": "dt", "variant": "dt"},
           {"name": "dt_tanh", "variant": "dt", "tanh_head": True}]
    kinds = ["concat", "adaln"] + list(CROSS)
    for v in ("slim_pre", "slim_post", "slim_pre_post"):
        for kd in kinds:
            out.append({"name": f"{v}_{kd}", "variant": v, "injector": {"kind": kd}})
    out += [
        {"name": "slim_pre_cross_k_to_qv_causal", "variant": "slim_pre",
         "injector": {"kind": "cross_k_to_qv", "causal": True}},
        {"name": "slim_pre_cross_q_to_kv_causal_residual", "variant": "slim_pre",
         "injector": {"kind": "cross_q_to_kv", "causal": True, "residual": True}},
        {"name": "slim_post_cross_kv_to_q_residual", "variant": "slim_post",
         "injector": {"kind": "cross_kv_to_q", "residual": True}},
        {"name": "slim_post_concat_before_final_ln", "variant": "slim_post",
         "injector": {"kind": "concat"}, "after_final_ln": False},
        {"name": "slim_pre_concat_rtg3", "variant": "slim_pre",
         "injector": {"kind": "concat", "rtg_dim": 3}},
    ]
    return out


def main():
    lines = [
        "// Generated by tests/oracles/forward_oracle.py; do not edit.",
        "#pragma once",
        "",
        "#include <array>",
        "",
        "namespace oracle {",
        "",
        "struct ForwardCase {",
        "  const char* name;",
        "  const char* variant;",
        "  const char* kind;",
        "  bool causal;",
        "  bool residual;",
        "  bool after_final_ln;",
        "  bool tanh_head;",
        "  int rtg_dim;",
        f"  std::array<double, {B * K * DA}> out;",
        "};",
        "",
        "inline const ForwardCase kForwardCases[] = {",
    ]
    for c in cases():
        inj = c.get("injector", {"kind": "concat"})
        vals = ", ".join(repr(float(v)) for v in forward(c))
        b = lambda x: "true" if x else "false"
        lines.append(
            f'    {{"{c["name"]}", "{c["variant"]}", "{inj["kind"]}", {b(inj.get("causal"))}, '
            f'{b(inj.get("residual"))}, {b(c.get("after_final_ln", True))}, '
            f'{b(c.get("tanh_head"))}, {inj.get("rtg_dim", 0)}, {{{vals}}}}},')
    lines += ["};", "", "}  // namespace oracle", ""]
    dst = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "unit" / "forward_oracle_data.hpp"
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_text("\n".join(lines))


if __name__ == "__main__":
    main()
