"""The fourteen acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line, which is also
collected into the terminal summary.  Runtime budgets are part of the check.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from _refs import per_node_attention
from conftest import ACCEPTANCE_LINES

from cpagraph import rng
from cpagraph import tensorcore as tc
from cpagraph.batcher import audit, pad_batch, prepare
from cpagraph.cli import main as cli_main
from cpagraph.cpaformer import CPAFormer, GateKind, ModelConfig, Variant, cpa_channel_norm_probe
from cpagraph.evalstats import holm_adjust, paired_bootstrap, partial_correlation, resample_indices
from cpagraph.expressivity import (injectivity_trial, run_suite, wl_equivalent,
                                   wl_hard_pair_model_check)
from cpagraph.graphio import compute_corpus_stats, parse_smiles
from cpagraph.ssl import (CONTRAST_WEIGHT, AugConfig, FinetuneConfig, PretrainConfig, PretrainHeads,
                          batch_mask_plan, contrast_objective, finetune, make_views, mask_objective,
                          ntxent, pretrain, total_loss)
from cpagraph.synthetic import (cardinality_task, complete_graph, path_graph, random_corpus,
                                random_molecule, star_graph)
from cpagraph.tensorcore import Tensor
from cpagraph.topo import all_pairs_spd, coverage, supports_from_spd, truncated_spd


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_criterion_01_softmax_blindness():
    outcomes, secs = timed(lambda: run_suite("prop1", trials=100))
    ok = sum(o.passed for o in outcomes)
    report(1, ok == 100 and secs < 5, f"{ok}/100 pairs equal within 1e-12 in {secs:.2f}s")


def test_criterion_02_cpa_separation():
    outcomes, secs = timed(lambda: run_suite("prop2", trials=100))
    ok = sum(o.passed for o in outcomes)
    report(2, ok == 100 and secs < 5,
           f"{ok}/100 pairs: CPA differs >= 1e-8, NORM_CPA equal within 1e-12, {secs:.2f}s")


def test_criterion_03_wl_hard_pair():
    def run():
        c6, c3c3 = parse_smiles("C1CCCCC1", "C6"), parse_smiles("C1CC1.C1CC1", "2C3")
        same, _, _ = wl_equivalent(c6, c3c3)
        ctl_a, ctl_b = parse_smiles("CC(C)C", "iso"), parse_smiles("CCCC", "n")
        split, _, _ = wl_equivalent(ctl_a, ctl_b)
        equal_all, control_all = True, True
        for v in Variant:
            model = CPAFormer(ModelConfig(k=1, variant=v, seed=0))
            _, eq = wl_hard_pair_model_check(model, c6, c3c3, tol=1e-9)
            _, ctl = wl_hard_pair_model_check(model, ctl_a, ctl_b, tol=1e-9)
            equal_all &= eq
            control_all &= not ctl
        return same, not split, equal_all, control_all
    (same, ctl_wl, equal_all, control_all), secs = timed(run)
    report(3, same and ctl_wl and equal_all and control_all and secs < 10,
           f"WL equal={same}, embeddings equal for all 9 variants={equal_all}, "
           f"control differs={ctl_wl and control_all}, {secs:.2f}s")


def test_criterion_04_injectivity():
    rep, secs = timed(lambda: injectivity_trial(1000))
    report(4, rep.collisions == 0 and secs < 30,
           f"{rep.collisions} collisions over the {rep.domain_size}-input domain and 1000 draws, "
           f"min distance {rep.min_distance:.2e}, {secs:.2f}s")


def _full_loss_case(variant, gate):
    graphs = [random_molecule(rng.stream(i, "gc"), 6, f"g{i}", aromatic_ring=False) for i in range(2)]
    stats = compute_corpus_stats(graphs)
    model = CPAFormer(ModelConfig(layers=2, model_dim=8, heads=2, ffn_dim=16, k=2, variant=variant,
                                  gate=gate, seed=1))
    heads = PretrainHeads(8, hidden=8, proj_dim=4, seed=1)
    params = model.parameters() + heads.parameters()
    jitter = rng.stream(1, "jitter")
    for p in params:  # move zero-initialised tables away from zero
        p.data = p.data + jitter.normal(0.0, 0.1, size=p.shape)
    batch = pad_batch([prepare(g, 2) for g in graphs], 2, stats=stats)
    plan = batch_mask_plan(batch, rng.stream(0, "mask"))
    views = [make_views(g, AugConfig(), 2, 0) for g in graphs]
    vb = pad_batch([v[0].as_input() for v in views] + [v[1].as_input() for v in views], 2, stats=stats)

    def loss():
        return total_loss(mask_objective(model, heads, batch, plan), contrast_objective(model, heads, vb))

    return loss, params


def test_criterion_05_gradient_checks():
    def run():
        worst = {}
        for v in Variant:
            for g in GateKind:
                loss, params = _full_loss_case(v, g)
                worst[(v.value, g.value)] = tc.grad_check(loss, params, h=1e-5, coords=1,
                                                          rng=rng.stream(0, "coords"), floor=1e-4)
        return worst
    worst, secs = timed(run)
    top = max(worst.values())
    report(5, top < 1e-5 and secs < 60,
           f"max relative error {top:.2e} over {len(worst)} variant x gate cases, {secs:.1f}s")


def test_criterion_06_variant_reduction():
    graphs = random_corpus(20, rng.stream(6, "reduce"), (1, 20))
    batch = pad_batch([prepare(g, 3) for g in graphs], 3)
    base = ModelConfig(seed=6)
    soft = CPAFormer(replace(base, variant=Variant.SOFTMAX_ONLY))
    cpa = CPAFormer(replace(base, variant=Variant.CPA, gate=GateKind.LINEAR))
    for name, p in cpa.params.items():
        if ".gate" in name:
            p.data = np.zeros(p.shape)
    same_params = all(np.array_equal(soft.params[n].data, p.data) for n, p in cpa.params.items()
                      if ".gate" not in n)
    a, b = cpa.encode(batch).data, soft.encode(batch).data
    report(6, same_params and a.tobytes() == b.tobytes(),
           f"node embeddings bitwise equal on 20 graphs: {a.tobytes() == b.tobytes()}")


def test_criterion_07_coverage():
    p10 = coverage(path_graph(10), 3)
    k5 = coverage(complete_graph(5), 3)
    graphs = random_corpus(100, rng.stream(7, "cov"), (1, 20))
    agree = all(truncated_spd(g, 3).as_sets() == supports_from_spd(all_pairs_spd(g), 3).as_sets()
                for g in graphs)
    report(7, p10 == 58.0 and k5 == 100.0 and agree,
           f"P10 K=3 {p10:.1f}%, K5 {k5:.1f}%, truncated == full BFS on 100 graphs: {agree}")


def test_criterion_08_padding():
    pct = audit([[3, 5]], width=1).padding_percent
    graphs = random_corpus(20, rng.stream(8, "pad"), (1, 16))
    worst = 0.0
    for v in (Variant.SOFTMAX_ONLY, Variant.CPA, Variant.NORM_CPA, Variant.GLOBAL_SUM_CPA, Variant.SUM_MEAN):
        model = CPAFormer(ModelConfig(layers=1, model_dim=8, heads=2, ffn_dim=8, k=2, variant=v, seed=8))
        gen = rng.stream(8, "tables")
        for name, p in model.params.items():
            if name.endswith(("spd", "keycent")) or ".bond." in name:
                p.data = gen.normal(size=p.shape)
        batch = pad_batch([prepare(g, 2) for g in graphs], 2)
        h = model.embed(batch)
        worst = max(worst, float(np.max(np.abs(model.attention(0, h, batch).data
                                                - per_node_attention(model, graphs, h.data)))))
    report(8, pct == 20.0 and worst <= 1e-12,
           f"lengths {{3,5}} -> {pct:.1f}% padding, padded vs per-node max |diff| {worst:.1e}")


def _brute_ntxent(z1, z2, tau):
    z = np.vstack([z1, z2])
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n, B = z.shape[0], z1.shape[0]
    total = 0.0
    for i in range(n):
        j = (i + B) % n
        den = sum(np.exp(z[i] @ z[k] / tau) for k in range(n) if k != i)
        total -= np.log(np.exp(z[i] @ z[j] / tau) / den)
    return total / n


def test_criterion_09_ntxent():
    worst = 0.0
    for B in range(2, 9):
        gen = rng.stream(B, "acc-ntxent")
        z1, z2 = gen.normal(size=(B, 6)), gen.normal(size=(B, 6))
        worst = max(worst, abs(ntxent(Tensor(z1), Tensor(z2), 0.2).item() - _brute_ntxent(z1, z2, 0.2)))
    m, c = Tensor(np.array(0.75)), Tensor(np.array(2.25))
    weighted = total_loss(m, c).item() == 0.75 + 0.5 * 2.25 and CONTRAST_WEIGHT == 0.5
    report(9, worst <= 1e-10 and weighted,
           f"max |NT-Xent - enumeration| {worst:.1e} for B=2..8 at tau=0.2, weight 0.5 exact: {weighted}")


def test_criterion_10_statistics():
    holm = holm_adjust([0.01, 0.04, 0.03])
    holm_ok = np.allclose(holm, [0.03, 0.06, 0.06], atol=1e-15, rtol=0)
    gen = rng.stream(10, "boot")
    y = (gen.random(50) > 0.5).astype(float)
    y[:2] = [0, 1]
    s = gen.random(50)
    same = paired_bootstrap(s, s, y, "auc", resamples=1000, seed=1)
    ya = np.array([1.0, 2.0, 3.0, 4.0])
    a, b = np.array([1.0, 2.5, 3.0, 3.0]), np.array([2.0, 2.0, 3.5, 4.0])
    res = paired_bootstrap(a, b, ya, "mae", resamples=8, seed=2)
    idx = resample_indices(4, 8, 2)
    trace_ok = np.array_equal(res.indices, idx) and all(
        abs(res.deltas[r] - (np.abs(ya[ii] - a[ii]).mean() - np.abs(ya[ii] - b[ii]).mean())) <= 1e-15
        for r, ii in enumerate(idx))
    report(10, holm_ok and same.ci == (0.0, 0.0) and trace_ok,
           f"holm {[round(x, 10) for x in holm]}, identical-system CI {same.ci}, n=4 shared-index trace: {trace_ok}")


def _cardinality_auc(variant, seed):
    data = cardinality_task(700, rng.stream(seed, "card"))
    model = CPAFormer(ModelConfig(layers=1, model_dim=16, heads=2, ffn_dim=32, k=3, variant=variant, seed=seed))
    out = finetune(data[:500], model, cfg=FinetuneConfig(epochs=45, batch_size=32, lr=1e-2, seed=seed),
                   test=data[500:])
    return out["metric"]


def test_criterion_11_cardinality_task():
    def run():
        return [(_cardinality_auc(Variant.CPA, s), _cardinality_auc(Variant.SOFTMAX_ONLY, s)) for s in range(3)]
    aucs, secs = timed(run)
    ok = all(c >= 0.9 and m <= 0.65 for c, m in aucs) and secs < 300
    detail = ", ".join(f"seed {s}: CPA {c:.3f} / softmax {m:.3f}" for s, (c, m) in enumerate(aucs))
    report(11, ok, f"{detail}, {secs:.0f}s")


def test_criterion_12_partial_correlation():
    graphs = [star_graph(a, f"star{a}") for a in range(2, 13)]
    batch = pad_batch([prepare(g, 3) for g in graphs], 3)
    rs = []
    for seed in range(5):
        norms, sizes, degrees = cpa_channel_norm_probe(CPAFormer(ModelConfig(seed=seed)), batch)
        rs.append(partial_correlation(norms, sizes, degrees))
    report(12, all(r > 0 for r in rs), "partial r per seed " + ", ".join(f"{r:.4f}" for r in rs))


def test_criterion_13_gate_stability():
    corpus = random_corpus(32, rng.stream(0, "corpus"))

    def halts(gate):
        count = 0
        for seed in range(5):
            model = CPAFormer(ModelConfig(layers=2, model_dim=16, heads=2, ffn_dim=32, gate=gate,
                                          gate_init_scale=1e155, seed=seed))
            res, _ = pretrain(corpus, model, PretrainConfig(batch_size=8, lr=1e-3), steps=20, seed=seed)
            count += res.halted_at is not None
        return count
    (lin, sig), secs = timed(lambda: (halts(GateKind.LINEAR), halts(GateKind.SIGMOID)))
    report(13, lin >= sig and lin > 0 and secs < 300,
           f"divergence halts over 5 seeds at gate init scale 1e155: LINEAR {lin}, SIGMOID {sig}, {secs:.0f}s")


def test_criterion_14_determinism(tmp_path, capsys):
    for name in ("a", "b"):
        assert cli_main(["pretrain", "--steps", "50", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("trace.json", "checkpoint.json")}
    report(14, all(same.values()), f"byte-identical outputs across two runs: {same}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
