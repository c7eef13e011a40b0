"""End-to-end acceptance suite.

Each test covers one numbered acceptance criterion and emits a single
PASS/FAIL line on the real stderr so the verdicts survive pytest's capture.
Criteria 6 and 7 run full multi-seed pipelines and take several minutes
each.
"""

import json
import statistics
import sys
import time

import numpy as np

from dcasr import autodiff as ad
from dcasr.config import config_from_dict
from dcasr.data import ClickSession, PopularityTable, SlateInteraction, SlateStep
from dcasr.diffusion import (DiffusionConfig, cfg_combine, diffusion_loss,
                             init_diffusion, make_schedule, retrieve_slate,
                             reverse_step, sample_next_item_embedding,
                             train_diffusion)
from dcasr.augment import check_provenance, read_counterfactuals_jsonl
from dcasr.data import read_slate_log_jsonl
from dcasr.metrics import arp, evaluate_offline, mrr_at_k, recall_at_k
from dcasr.nn import finite_diff_check
from dcasr.pipeline import run_pipeline
from dcasr.rng import substream
from dcasr.scm import (SCMConfig, elbo_loss, init_scm_params,
                       response_probabilities, generate_response, train_scm)
from dcasr.sr import SRConfig, encode_session, init_sr_params, score_items, sr_loss, train_sr


VERDICTS: list[str] = []


def verdict(num: int, name: str, ok: bool, detail: str = ""):
    line = f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    VERDICTS.append(line)
    print(line, file=sys.__stderr__, flush=True)
    assert ok, line


# -- 1: gradients ---------------------------------------------------------

def test_criterion_1_gradients():
    t0 = time.time()
    worst = 0.0
    for seed in range(3):
        sr_store = init_sr_params(4, SRConfig(d=3), seed=seed)
        worst = max(worst, finite_diff_check(
            lambda p: sr_loss(p, SRConfig(d=3), [[0, 2], [3]], np.array([1, 0])),
            sr_store))

        cfg = DiffusionConfig(d=3, T=4, hidden_mult=2, max_len=4)
        model = init_diffusion(3, cfg, seed=seed)
        sched = make_schedule(cfg.T)
        eps = substream(seed, "acc1").standard_normal((2, 3))

        def dloss(store, _cfg=cfg, _eps=eps):
            m = type(model)(store, _cfg)
            return diffusion_loss(m, sched, [[0], [1, 2]], np.array([1, 0]),
                                  np.array([2, 4]), _eps, np.array([False, True]))

        worst = max(worst, finite_diff_check(dloss, model.store))

        scm_store = init_scm_params(5, SCMConfig(d=3), seed=seed)
        batch = [SlateInteraction(0, [SlateStep([0, 1, 2], [False, True, False]),
                                      SlateStep([3, 4, 0], [False] * 3)])]
        worst = max(worst, finite_diff_check(
            lambda p: elbo_loss(batch, p, substream(seed, "acc1-zeta")), scm_store))
    runtime = time.time() - t0
    verdict(1, "analytic gradients vs finite differences", worst < 1e-6 and runtime < 60,
            f"max rel err {worst:.2e}, {runtime:.1f}s")


# -- 2: diffusion math ----------------------------------------------------

def test_criterion_2_diffusion_math():
    t0 = time.time()
    ok = True
    s = make_schedule(10)
    ok &= np.allclose(s.alpha_bar, np.cumprod(1.0 - s.beta))
    ok &= s.beta_tilde[0] == 0.0
    f = np.array([0.4, -1.1])
    ok &= np.allclose(reverse_step(np.array([9.0, 9.0]), f, 1, s, np.zeros(2)), f,
                      atol=1e-12)
    c, u = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    ok &= np.array_equal(cfg_combine(c, u, 0.0), c)
    ok &= np.allclose(cfg_combine(c, c, 5.0), c)
    # closed form vs iterated chain, 1e4 Monte Carlo chains at 3 sigma
    rng = substream(0, "acc2")
    e0, t, n = 1.7, 6, 10_000
    x = np.full(n, e0)
    for step in range(t):
        x = np.sqrt(1.0 - s.beta[step]) * x + np.sqrt(s.beta[step]) * rng.standard_normal(n)
    mean, var = np.sqrt(s.alpha_bar[t - 1]) * e0, 1.0 - s.alpha_bar[t - 1]
    ok &= abs(x.mean() - mean) < 3 * np.sqrt(var / n)
    ok &= abs(x.var() - var) < 3 * var * np.sqrt(2.0 / (n - 1))
    runtime = time.time() - t0
    verdict(2, "diffusion schedule and sampler identities", ok and runtime < 120,
            f"{runtime:.1f}s")


# -- 3: response-probability contract -------------------------------------

def test_criterion_3_response_contract():
    store = init_scm_params(6, SCMConfig(d=4), seed=0)
    ok = True
    p = response_probabilities(np.ones(4) * 0.3, [0, 2, 4], np.arange(6.0), store)
    ok &= abs(p.sum() - 1.0) < 1e-12
    # uniform logits: zero out everything that feeds them
    store["V"].data[:] = 0.0
    store["w_conf"].data[:] = 0.0
    store["b0"].data[()] = 0.0
    p = response_probabilities(np.zeros(4), [1, 3, 5], np.zeros(6), store)
    ok &= np.allclose(p, 0.25, atol=1e-12)
    store["b0"].data[()] = -40.0
    store["w_conf"].data[2] = 5.0
    for M in (0, 1, 2, 3):
        resp = generate_response(np.zeros(4), [2, 1, 0], np.ones(6), M, store)
        ok &= sum(resp) <= M
    ok &= sum(generate_response(np.zeros(4), [2, 1, 0], np.ones(6), 3, store)) >= 1
    store["b0"].data[()] = 40.0
    ok &= generate_response(np.zeros(4), [2, 1, 0], np.ones(6), 3, store) == [False] * 3
    verdict(3, "K+1 response probabilities and click budget", ok)


# -- 4: synthesis auditability --------------------------------------------

def test_criterion_4_provenance(tmp_path):
    obj = {
        "seed": 0, "out_dir": str(tmp_path), "mode": "simulator",
        "simulator": {"n_items": 100, "n_log_sessions": 600, "n_eval_sessions": 50,
                      "session_length": 5, "slate_size": 3},
        "sr": {"d": 16, "epochs": 2, "patience": 0},
        "diffusion": {"d": 16, "T": 30, "epochs": 10, "batch_size": 128,
                      "hidden_mult": 2, "guidance_w": 4.0},
        "scm": {"d": 8, "epochs": 10},
    }
    cfg = config_from_dict(obj)
    for stage in ("simulate-log", "train-diffusion", "train-scm", "augment"):
        run_pipeline(cfg, stage)
    observed = read_slate_log_jsonl(tmp_path / "observed.jsonl")
    kept = read_counterfactuals_jsonl(tmp_path / "counterfactuals.jsonl")
    bad = sum(1 for cs in kept if check_provenance(cs, observed))
    ok = bad == 0 and 0 < len(kept) <= len(observed)
    verdict(4, "counterfactual provenance audit", ok,
            f"{len(kept)} sessions, {bad} violations, N={len(observed)}")


# -- 5: memorization oracles ----------------------------------------------

def test_criterion_5_memorization():
    t0 = time.time()
    # diffusion: the only continuation of item 0 is item 1
    dcfg = DiffusionConfig(d=8, T=20, epochs=40, lr=5e-3, batch_size=32,
                           hidden_mult=2, max_len=4)
    sessions = [ClickSession(i, [0, 1], [0, 1]) for i in range(40)]
    model = train_diffusion(sessions, 2, dcfg, seed=0)
    sched = make_schedule(dcfg.T)
    hits = 0
    for k in range(100):
        e0 = sample_next_item_embedding([0], model, sched, 2.0,
                                        substream(k, "acc5-sample"))
        hits += retrieve_slate(e0, model.store["emb"].data, 1) == [1]
    diffusion_ok = hits > 90

    scfg = SRConfig(d=8, epochs=30, lr=1e-2, batch_size=16, patience=0)
    store = train_sr(sessions, 2, scfg, seed=0)
    with ad.no_grad():
        scores = score_items(encode_session([0], store), store, scfg).data
    p = np.exp(scores - scores.max())
    sr_ok = (p / p.sum())[1] > 0.9

    # scm: item 1 is clicked every time it is shown
    log = [SlateInteraction(u, [SlateStep([0, 1, 2], [False, True, False]),
                                SlateStep([1, 3, 2], [True, False, False])])
           for u in range(30)]
    scm_store = train_scm(log, 4, SCMConfig(d=4, epochs=30, lr=5e-2), seed=0)
    p = response_probabilities(scm_store["h0"].data, [0, 1, 2],
                               scm_store["q_mu"].data, scm_store)
    scm_ok = p[1] > 0.8
    runtime = time.time() - t0
    verdict(5, "memorization oracles", diffusion_ok and sr_ok and scm_ok
            and runtime < 300,
            f"diffusion {hits}/100, P(b|a)={(np.exp(scores - scores.max()) / np.exp(scores - scores.max()).sum())[1]:.3f}, "
            f"scm p={p[1]:.3f}, {runtime:.0f}s")


# -- 6: simulator bias mitigation -----------------------------------------

def run_sim_seed(seed, out_dir):
    obj = {
        "seed": seed, "out_dir": str(out_dir), "mode": "simulator",
        "simulator": {"n_items": 200, "n_log_sessions": 1000,
                      "n_eval_sessions": 400, "session_length": 5,
                      "slate_size": 3,
                      "train_mixture": [0.8, 0.2], "eval_mixture": [0.5, 0.5]},
        "sr": {"d": 32, "epochs": 15, "batch_size": 128, "patience": 0},
        "diffusion": {"d": 16, "T": 50, "epochs": 30, "batch_size": 128,
                      "hidden_mult": 2, "guidance_w": 4.0},
        "scm": {"d": 16, "epochs": 40},
        "augment": {"guidance_w": 4.0},
        "eval": {"K": 3},
    }
    run_pipeline(config_from_dict(obj), "run-all")
    rep = json.loads((out_dir / "report-eval-online.json").read_text())
    return rep["models"]["baseline"], rep["models"]["dcasr"]


def test_criterion_6_bias_mitigation(tmp_path):
    t0 = time.time()
    rel_gains, arp_deltas, ctr_deltas = [], [], []
    for seed in (0, 1, 2):
        b, d = run_sim_seed(seed, tmp_path / f"seed{seed}")
        b_ut2 = b["per_type"]["1"]["ctr"]
        d_ut2 = d["per_type"]["1"]["ctr"]
        rel_gains.append((d_ut2 - b_ut2) / b_ut2)
        arp_deltas.append(d["arp"] - b["arp"])
        ctr_deltas.append(d["ctr"] - b["ctr"])
    med_rel = statistics.median(rel_gains)
    med_arp = statistics.median(arp_deltas)
    med_ctr = statistics.median(ctr_deltas)
    runtime = time.time() - t0
    ok = med_rel >= 0.10 and med_arp < 0.0 and med_ctr >= -2.0 and runtime < 1800
    verdict(6, "online bias mitigation, median of 3 seeds", ok,
            f"ut2 rel {100*med_rel:+.1f}%, ARP delta {med_arp:+.4f}, "
            f"CTR delta {med_ctr:+.2f}, {runtime:.0f}s")


# -- 7: offline long-tail improvement -------------------------------------

def run_longtail_seed(seed, out_dir):
    """10k-session, 500-item log whose under-served type-2 items form the
    long tail; logging exposure is popularity-skewed, so click counts are
    long-tailed and the planted block sits at the bottom of the ranking."""
    obj = {
        "seed": seed, "out_dir": str(out_dir), "mode": "simulator",
        "simulator": {"n_items": 500, "n_log_sessions": 10000,
                      "n_eval_sessions": 400, "session_length": 5,
                      "slate_size": 3,
                      "train_mixture": [0.8, 0.2], "eval_mixture": [0.5, 0.5]},
        "sr": {"d": 32, "epochs": 12, "batch_size": 128, "patience": 0},
        "diffusion": {"d": 16, "T": 50, "epochs": 4, "batch_size": 128,
                      "hidden_mult": 2, "guidance_w": 4.0},
        "scm": {"d": 16, "epochs": 4},
        "augment": {"guidance_w": 4.0},
        "eval": {"K": 5},
    }
    run_pipeline(config_from_dict(obj), "run-all")
    rep = json.loads((out_dir / "report-eval-offline.json").read_text())
    return rep["models"]["baseline"], rep["models"]["dcasr"]


def test_criterion_7_longtail(tmp_path):
    t0 = time.time()
    lt_deltas, all_deltas = [], []
    for seed in (0, 1, 2):
        b, d = run_longtail_seed(seed, tmp_path / f"seed{seed}")
        lt_deltas.append(d["buckets"]["long_tail"]["recall"]
                         - b["buckets"]["long_tail"]["recall"])
        all_deltas.append(d["overall"]["recall"] - b["overall"]["recall"])
    med_lt = statistics.median(lt_deltas)
    med_all = statistics.median(all_deltas)
    runtime = time.time() - t0
    ok = med_lt > 0.0 and med_all >= -0.01 and runtime < 1800
    verdict(7, "offline long-tail recall, median of 3 seeds", ok,
            f"long-tail delta {100*med_lt:+.2f}, overall delta "
            f"{100*med_all:+.2f}, {runtime:.0f}s")


# -- 8: metric oracles ----------------------------------------------------

def test_criterion_8_metric_oracles():
    rng = substream(0, "acc8")
    ok = True
    for _ in range(1000):
        m = int(rng.integers(2, 11))
        ranked = [int(i) for i in rng.permutation(m)]
        target = int(rng.integers(m))
        K = int(rng.integers(1, m + 1))
        brute_recall = int(target in ranked[:K])
        brute_mrr = 0.0
        for pos, item in enumerate(ranked[:K]):
            if item == target:
                brute_mrr = 1.0 / (pos + 1)
        ok &= recall_at_k(ranked, target, K) == brute_recall
        ok &= abs(mrr_at_k(ranked, target, K) - brute_mrr) < 1e-15
        counts = rng.integers(1, 50, size=m)
        pop = PopularityTable(counts)
        lists = [[int(i) for i in rng.choice(m, size=min(3, m), replace=False)]
                 for _ in range(3)]
        brute_arp = sum(sum(counts[i] / counts.max() for i in lst) / len(lst)
                        for lst in lists) / len(lists)
        ok &= abs(arp(lists, pop) - brute_arp) < 1e-12

    # bucket aggregation identity on a randomized evaluation
    store = init_sr_params(30, SRConfig(d=8), seed=3)
    sessions = [ClickSession(i, [int(a) for a in rng.choice(30, 4, replace=False)],
                             [0, 1, 2, 3]) for i in range(60)]
    pop = PopularityTable(rng.integers(1, 100, size=30))
    rep = evaluate_offline(store, SRConfig(d=8), sessions, K=5, pop=pop)
    n_sum = sum(b.n for b in rep.buckets.values())
    ok &= n_sum == rep.overall.n
    for attr in ("recall", "mrr"):
        weighted = sum(getattr(b, attr) * b.n for b in rep.buckets.values()) / n_sum
        ok &= abs(weighted - getattr(rep.overall, attr)) < 1e-9
    verdict(8, "metric brute-force oracles and bucket identity", ok)


# -- 9: determinism -------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    def run(sub):
        obj = {
            "seed": 11, "out_dir": str(tmp_path / sub), "mode": "simulator",
            "simulator": {"n_items": 20, "n_log_sessions": 40,
                          "n_eval_sessions": 15, "session_length": 4,
                          "slate_size": 3},
            "sr": {"d": 8, "epochs": 2, "batch_size": 16, "patience": 0},
            "diffusion": {"d": 8, "T": 5, "epochs": 2, "batch_size": 16,
                          "hidden_mult": 2},
            "scm": {"d": 4, "epochs": 2},
            "augment": {"n_attempts": 15},
            "eval": {"K": 3},
        }
        run_pipeline(config_from_dict(obj), "run-all")
        return tmp_path / sub

    a, b = run("a"), run("b")
    names = sorted(p.name for p in a.iterdir())
    ok = names == sorted(p.name for p in b.iterdir())
    diffs = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    ok = ok and not diffs
    verdict(9, "bitwise deterministic run-all", ok,
            f"{len(names)} artifacts" + (f", diffs: {diffs}" if diffs else ""))
