"""Per-node reference computations shared by the tests.

These loop over nodes one at a time with the single-node operations, so they
share no padding, masking or gathering code with the batched encoder.
"""

import numpy as np

from cpagraph.batcher import prepare
from cpagraph.cpaformer import Variant, attention_logits, cpa_head
from cpagraph.graphio import featurize
from cpagraph.tensorcore import Tensor

REFERENCE_VARIANTS = (Variant.SOFTMAX_ONLY, Variant.CPA, Variant.NORM_CPA, Variant.GLOBAL_SUM_CPA,
                      Variant.SUM_MEAN)


def per_node_attention(model, graphs, h_rows, layer=0, stats=None):
    """Layer ``layer`` attention output u for every node, graph by graph.

    ``h_rows`` holds the stacked layer inputs in batch order.
    """
    cfg, P = model.config, {k: v.data for k, v in model.params.items()}
    p = f"L{layer}."
    dh, M = cfg.head_dim, cfg.heads
    kb = cfg.spd_bins - 1
    out, lo = [], 0
    for g in graphs:
        gi = prepare(g, cfg.k)
        h = h_rows[lo:lo + g.n]
        lo += g.n
        Q = h @ P[p + "wq"] + P[p + "bq"]
        K = h @ P[p + "wk"] + P[p + "bk"]
        V = h @ P[p + "wv"] + P[p + "bv"]
        _, bfeat = featurize(g, model.schema, stats, gi.degree_bins)
        for i in range(g.n):
            js, ds = gi.supports.neighbors[i], gi.supports.spd[i]
            heads = []
            for m in range(M):
                cols = slice(m * dh, (m + 1) * dh)
                bond = np.zeros(len(js))
                for pos, (j, d) in enumerate(zip(js, ds)):
                    if d == 1:
                        feats = bfeat[(min(i, j), max(i, j))]
                        bond[pos] = sum(P[p + f"bond.{name}"][feats[f], m]
                                        for f, (name, _) in enumerate(model.schema.bond_vocab))
                logits = attention_logits(
                    Tensor(Q[i, cols]), Tensor(K[js, cols]), np.minimum(ds, kb), Tensor(P[p + "spd"][:, m]),
                    Tensor(bond), gi.degree_bins[js], Tensor(P[p + "keycent"][:, m]))
                gate = Tensor(P[p + f"gate{m}"]) if (p + f"gate{m}") in P else None
                o = cpa_head(Tensor(Q[i, cols]), Tensor(V[js, cols]), logits, gate, cfg.variant, cfg.gate,
                             graph_values=Tensor(V[:, cols]))
                heads.append(o.data)
            out.append(np.concatenate(heads) @ P[p + "wo"] + P[p + "bo"])
    return np.array(out)
