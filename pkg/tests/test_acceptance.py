"""Acceptance suite: one test per release criterion.

Each test prints a PASS/FAIL line (visible with ``pytest -s``) and asserts
the criterion at its stated tolerance. The end-to-end criteria train the
agent on the default synthetic dataset for five fixed seeds; the whole
module runs in a few minutes.
"""

import time

import numpy as np
import pytest
from scipy import stats

from specmart.agent import (
    ReplayBuffer,
    RewardParams,
    Transition,
    compute_reward,
    epsilon_at,
)
from specmart.cli import main
from specmart.market import (
    Ledger,
    Order,
    Region,
    compatible,
    match_epoch,
    price_of,
)
from specmart.neural import DenseNet
from specmart.sim import SimConfig, evaluate, train

SEEDS = (1, 2, 3, 4, 5)
EPISODES = 60  # well inside the 300-episode budget

WIDE = Region(x=(0.0, 1000.0), y=(0.0, 1000.0), z=(0.0, 100.0))


def verdict(number, description, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}: criterion {number:02d} - {description}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def training_runs():
    t0 = time.time()
    runs = {}
    for seed in SEEDS:
        cfg = SimConfig(episodes=EPISODES, seed=seed)
        runs[seed] = (cfg, train(cfg))
    return runs, time.time() - t0


def test_criterion_01_formula_fidelity():
    reward = compute_reward(2.0, 0.0, 4.8, True, RewardParams())
    sale = compute_reward(0.0, 4.0, -3.6, True, RewardParams())
    price = price_of(24.0, 0.1)
    ok = (abs(reward - (-18.45)) < 1e-12
          and abs(sale - (-6.25)) < 1e-12
          and abs(price - 2.4) < 1e-12)
    verdict(1, "reward and pricing formulas reproduce hand-evaluated cases",
            ok, f"R={reward!r}, R_sell={sale!r}, P={price!r}")


def test_criterion_02_gradient_correctness():
    t0 = time.time()
    net = DenseNet([4, 16, 5], seed=2024)
    rng = np.random.default_rng(99)
    while True:
        x = rng.normal(size=4)
        _, pre = net._forward_cached(x)
        if min(np.min(np.abs(z)) for z in pre) > 1e-3:
            break
    direction = rng.normal(size=5)
    flat = net.flat_grads(net.backward(x, direction))
    params = net.parameters

    h = 1e-5
    worst = 0.0
    for _ in range(100):
        which = int(rng.integers(len(params)))
        arr, grad = params[which], flat[which]
        index = tuple(int(rng.integers(s)) for s in arr.shape)
        original = arr[index]
        arr[index] = original + h
        plus = float(direction @ net.forward(x))
        arr[index] = original - h
        minus = float(direction @ net.forward(x))
        arr[index] = original
        fd = (plus - minus) / (2 * h)
        an = grad[index]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-10)
        worst = max(worst, rel)
    elapsed = time.time() - t0
    verdict(2, "backward matches central finite differences on [4,16,5]",
            worst < 1e-5 and elapsed < 5.0,
            f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_03_epsilon_schedule():
    ok = (epsilon_at(0) == 1.0
          and abs(epsilon_at(100) - 0.60577) <= 1e-4
          and epsilon_at(918) > 0.01
          and epsilon_at(919) == 0.01)
    verdict(3, "epsilon decays 1.0 -> 0.01 at rate 0.995, floor at step 919",
            ok, f"eps(100)={epsilon_at(100):.6f}")


def test_criterion_04_matching_oracle_equivalence():
    t0 = time.time()

    def order(order_id, side, price, qty, freq, region, window):
        return Order(order_id, "op", side, qty, price, freq, region, window,
                     "non_rt")

    freq_pool = [(3.50e9, 3.70e9), (3.55e9, 3.65e9), (3.58e9, 3.60e9),
                 (3.40e9, 3.52e9)]
    region_pool = [WIDE,
                   Region(x=(100.0, 200.0), y=(100.0, 200.0), z=(0.0, 50.0)),
                   Region(x=(500.0, 900.0), y=(500.0, 900.0), z=(0.0, 100.0))]
    window_pool = [(0.0, 10.0), (5.0, 15.0), (20.0, 30.0)]

    def brute_force(bids, asks):
        compat = [[compatible(b, a) for a in asks] for b in bids]
        best = 0

        def recurse(i, used, count):
            nonlocal best
            if i == len(bids):
                best = max(best, count)
                return
            recurse(i + 1, used, count)
            for j in range(len(asks)):
                if compat[i][j] and j not in used:
                    recurse(i + 1, used | {j}, count + 1)

        recurse(0, frozenset(), 0)
        return best

    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)

        def make(side, i):
            return order(f"{side}{i}", side,
                         float(rng.integers(1, 6)) / 2.0,
                         float(rng.integers(1, 7)) / 2.0,
                         freq_pool[rng.integers(len(freq_pool))],
                         region_pool[rng.integers(len(region_pool))],
                         window_pool[rng.integers(len(window_pool))])

        bids = [make("bid", i) for i in range(rng.integers(1, 5))]
        asks = [make("ask", i) for i in range(rng.integers(1, 5))]
        if len(match_epoch(bids, asks)) != brute_force(bids, asks):
            mismatches += 1
    elapsed = time.time() - t0
    verdict(4, "match count equals exhaustive maximum over 100 instances",
            mismatches == 0 and elapsed < 10.0,
            f"{mismatches} mismatches, {elapsed:.2f}s")


def test_criterion_05_conservation():
    rng = np.random.default_rng(2025)
    ledger = Ledger({"A": 500.0, "B": 500.0})
    total = ledger.total_srus()
    exact = True
    for step in range(1000):
        qty = float(rng.integers(1, 4096)) / 1024.0  # dyadic quantities
        price = float(rng.integers(1, 50)) / 10.0
        buyer, seller = ("A", "B") if rng.random() < 0.5 else ("B", "A")
        bid = Order(f"b{step}", buyer, "bid", qty, price, (3.5e9, 3.7e9),
                    WIDE, (0.0, 10.0), "non_rt")
        ask = Order(f"a{step}", seller, "ask", qty, price, (3.5e9, 3.7e9),
                    WIDE, (0.0, 10.0), "non_rt")
        ledger.settle(match_epoch([bid], [ask]),
                      {bid.order_id: bid, ask.order_id: ask})
        if ledger.total_srus() != total:
            exact = False
        if ledger.balances["A"] != -ledger.balances["B"]:
            exact = False
    verdict(5, "SRUs exactly conserved and debits mirror credits over 1000 trades",
            exact and len(ledger.entries) == 1000,
            f"total={ledger.total_srus()!r}")


def test_criterion_06_baseline_identity():
    cfg = SimConfig(seed=0)
    out = evaluate(None, cfg, "hour", policy="hold")
    dyn = out.summary["cumulative_dynamic_profit"]
    stat = out.summary["cumulative_static_profit"]
    rows_equal = all(r.profit_dynamic == r.profit_static for r in out.results)
    verdict(6, "always-hold dynamic profit bit-equals static profit",
            dyn == stat and rows_equal and out.summary["normalized_profit_ratio"] == 1.0,
            f"cumulative={dyn!r}")


def test_criterion_07_end_to_end_learning(training_runs):
    runs, train_elapsed = training_runs
    t0 = time.time()
    passing = 0
    details = []
    for seed in SEEDS:
        cfg, outcome = runs[seed]
        hour = evaluate(outcome.agent, cfg, "hour").summary[
            "normalized_profit_ratio"]
        minute = evaluate(outcome.agent, cfg, "minute").summary[
            "normalized_profit_ratio"]
        if hour > 1.0 and minute > 1.0:
            passing += 1
        details.append(f"seed {seed}: h={hour:.4f} m={minute:.4f}")
    elapsed = train_elapsed + (time.time() - t0)
    verdict(7, "trained agent beats the static baseline in >=4 of 5 seeds "
               "at both granularities",
            passing >= 4 and elapsed < 600.0,
            f"{passing}/5 seeds, {elapsed:.0f}s total; " + "; ".join(details))


def test_criterion_08_learning_progress(training_runs):
    runs, _ = training_runs
    failing = []
    details = []
    for seed in SEEDS:
        _, outcome = runs[seed]
        rewards = outcome.episode_rewards
        k = max(1, len(rewards) // 10)
        first = float(np.mean(rewards[:k]))
        last = float(np.mean(rewards[-k:]))
        details.append(f"seed {seed}: {first:.0f} -> {last:.0f}")
        if not last > first:
            failing.append(seed)
    verdict(8, "mean episode reward of final 10% exceeds first 10% for all seeds",
            not failing, "; ".join(details))


def test_criterion_09_determinism(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(
        '{"train_days": 2, "total_days": 4, "episodes": 4, "seed": 5}')
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert main(["eval", "--checkpoint", str(out / "agent"),
                     "--config", str(config), "--out", str(out)]) == 0
        assert main(["eval", "--checkpoint", str(out / "agent"),
                     "--granularity", "minute", "--config", str(config),
                     "--out", str(out)]) == 0
        outputs.append(out)
    a, b = outputs
    files = ("reward_trace.csv", "results_hour.csv", "results_minute.csv",
             "ledger_hour.csv", "summary_hour.json", "agent.online.npz")
    identical = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    verdict(9, "train and eval reruns produce byte-identical outputs",
            identical, ", ".join(files))


def test_criterion_10_replay_uniformity():
    buffer = ReplayBuffer(capacity=10, seed=7)
    for i in range(10):
        buffer.push(Transition(np.full(4, float(i)), 0, 0.0,
                               np.full(4, float(i)), False))
    counts = np.zeros(10)
    for _ in range(10_000):
        for t in buffer.sample(10):  # 1e5 draws in precondition-sized batches
            counts[int(t.state[0])] += 1
    expected = 10_000.0
    statistic = float(np.sum((counts - expected) ** 2 / expected))
    threshold = float(stats.chi2.ppf(0.999, df=9))
    verdict(10, "chi-square does not reject replay-sampling uniformity at 0.001",
            statistic < threshold,
            f"stat {statistic:.2f} < {threshold:.2f}")
