"""The ten release criteria.  Each test prints one ``criterion NN PASS/FAIL`` line."""

import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy import stats

from lobmm.agents import TrainConfig, random_policy, run_episode, select_action, train
from lobmm.book import OrderBook, Side, replay
from lobmm.env import ACTION_IDS, FLATTEN, EnvConfig, MarketMakingEnv, reward_trade_completion
from lobmm.errors import DuplicateOrder, UnknownOrder
from lobmm.kernels import KERNELS
from lobmm.pipeline import replay_to_snapshots, write_snapshots
from lobmm.synthetic import synthetic_day

from oracles import BanditEnv, NaiveBook, fixture_days, ledger_pnl, make_day, random_events

TESTS = Path(__file__).parent


def test_01_book_matches_rebuild(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checked = mismatches = 0
    for _ in range(1000):
        events = random_events(rng, int(rng.integers(1, 1001)))
        book, naive = OrderBook(), NaiveBook()
        for k, ev in enumerate(events):
            naive.apply(ev)
            try:
                book.apply(ev)
            except (UnknownOrder, DuplicateOrder):
                pass
            state = book.state()
            mismatches += state != naive.state()
            if k % 250 == 249:
                mismatches += replay(events[:k + 1]).state() != state
            checked += 1
        mismatches += replay(events).state() != book.state()
    elapsed = time.perf_counter() - t0
    acceptance(1, "book equals rebuild", mismatches == 0 and elapsed < 30.0,
               f"{checked} events in 1000 sequences, {mismatches} mismatches, {elapsed:.1f}s (limit 30s)")


def test_02_feature_suite(acceptance):
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(TESTS / "test_features.py")],
                         capture_output=True, text=True, cwd=TESTS.parent)
    summary = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    acceptance(2, "feature properties", res.returncode == 0 and "failed" not in summary, summary)


def test_03_trade_completion_shape(acceptance):
    r = np.linspace(-0.01, 0.01, 201)
    got = np.array([reward_trade_completion(float(x), 2.0, 0.002) for x in r])
    expected = np.where(r >= 0.004, 1.0, np.where(r <= -0.002, -1.0, r))
    err = float(np.max(np.abs(got - expected)))
    clipped_up, clipped_down = int(np.sum(got == 1.0)), int(np.sum(got == -1.0))
    acceptance(3, "trade-completion reward shape", err <= 1e-12 and clipped_up == 61 and clipped_down == 81,
               f"201 points, max error {err:.1e}, {clipped_up} at +1, {clipped_down} at -1")


def _random_scenario(rng, n_rows, quiet_end=False):
    """Random walk book with random prints; ``quiet_end`` leaves the last interval without prints."""
    rows, trades = [], []
    bid = 1000
    for k in range(n_rows):
        bid += int(rng.integers(-2, 3))
        ask = bid + int(rng.integers(1, 4))
        rows.append((bid, ask, rng.uniform(0.2, 3.0, 15).round(2)))
        for _ in range(0 if quiet_end and k == n_rows - 1 else int(rng.integers(0, 5))):
            side = Side(int(rng.integers(2)))
            depth = int(rng.integers(0, 8))
            px = bid - depth if side == Side.BID else ask + depth
            trades.append((k, side, px, float(rng.uniform(0.1, 4.0))))
    return make_day(rows, trades, tick_size=0.01)


def test_04_accounting_identity(acceptance):
    rng = np.random.default_rng(7)
    worst = worst_fee = 0.0
    steps = flattens = fills = 0
    p = np.full(17, 0.9 / 15)
    p[0], p[16] = 0.05, 0.05
    for _ in range(10_000):
        lot = float(rng.choice([1.0, 0.5, 2.0]))
        env = MarketMakingEnv(_random_scenario(rng, 12), EnvConfig(ruin_threshold=None, lot_size=lot))
        env.reset()
        done = False
        while not done:
            a = int(rng.choice(ACTION_IDS, p=p))
            ic, fee_before = env.account.inventory, env.account.fee_paid
            res = env.step(a)
            done = res.done
            realized, unreal, _, inv = ledger_pnl(env.account.ledger, res.info["midpoint"])
            worst = max(worst, abs(res.info["realized_pnl"] - realized), abs(res.info["unrealized_pnl"] - unreal))
            assert inv == res.info["inventory"]
            if a == FLATTEN and ic != 0:
                px = res.info["fills"][0]["price"]
                worst_fee = max(worst_fee, abs(env.account.fee_paid - fee_before - 0.002 * px * lot * abs(ic)))
                flattens += 1
            fills += len(res.info["fills"])
            steps += 1
    ok = worst < 1e-9 and worst_fee < 1e-12 and flattens > 1000
    acceptance(4, "accounting identity", ok,
               f"10000 scenarios, {steps} steps, {fills} fills, max PnL gap {worst:.1e}; "
               f"{flattens} flattens, max fee gap {worst_fee:.1e}")


def test_05_positional_rewards_telescope(acceptance):
    rng = np.random.default_rng(11)
    worst = 0.0
    closed = 0
    for _ in range(1000):
        n = int(rng.integers(5, 40))
        env = MarketMakingEnv(_random_scenario(rng, n + 1, quiet_end=True), EnvConfig(reward="positional", ruin_threshold=None))
        env.reset()
        total = 0.0
        for _ in range(n - 1):
            total += env.step(int(rng.choice(ACTION_IDS[:16]))).reward
        res = env.step(FLATTEN)
        total += res.reward
        assert res.done and env.account.inventory == 0
        worst = max(worst, abs(total - env.account.realized_pnl))
        closed += len(env.account.closed_returns)
    acceptance(5, "positional rewards telescope", worst < 1e-9 and closed > 1000,
               f"1000 flat-to-flat episodes, {closed} closed lots, max gap {worst:.1e}")


def test_06_gradient_checks(acceptance):
    from test_agents import a2c_gradient_error, ppo_gradient_error

    a2c, ppo = a2c_gradient_error(), ppo_gradient_error()
    acceptance(6, "finite-difference gradients", max(a2c, ppo) < 1e-4,
               f"max relative error A2C {a2c:.1e}, PPO {ppo:.1e} (limit 1e-4)")


def test_07_bandit(acceptance):
    t0 = time.perf_counter()
    probs = {}
    for algo in ("a2c", "ppo"):
        cfg = TrainConfig(algo=algo, training_steps=50_000, action_repeat=1, seed=0)
        net, _ = train(lambda rank: BanditEnv(paying=2), cfg)
        with torch.no_grad():
            probs[algo] = torch.softmax(net(torch.ones(1, 4))[0], -1)[1].item()
    elapsed = time.perf_counter() - t0
    acceptance(7, "bandit convergence", min(probs.values()) > 0.95 and elapsed < 120.0,
               f"P(paying arm) A2C {probs['a2c']:.4f}, PPO {probs['ppo']:.4f} after 50k steps, {elapsed:.0f}s (limit 120s)")


def _harness(policy_for, day, env_cfg, n=20):
    out = []
    for ep in range(n):
        env = MarketMakingEnv(day, env_cfg)
        out.append(run_episode(policy_for(ep, env), env, action_repeat=5, seed=1000 + ep).daily_return_pct)
    return np.array(out)


@pytest.mark.slow
def test_08_learning_beats_random(acceptance):
    t0 = time.perf_counter()
    train_day, eval_day = fixture_days()
    env_cfg = EnvConfig(reward="trade_completion", episode_length=1000, random_start=True)
    # baseline first, with the same harness the trained agent is measured by
    rand = _harness(lambda ep, env: random_policy(env.action_ids, seed=ep), eval_day, env_cfg)
    cfg = TrainConfig(algo="a2c", training_steps=200_000, seed=0, checkpoint_interval=10**9)
    net, _ = train(lambda rank: MarketMakingEnv(train_day, env_cfg, seed=rank), cfg)
    gen = torch.Generator().manual_seed(0)
    agent = _harness(lambda ep, env: (lambda obs: env.action_ids[select_action(net, obs, False, gen)]),
                     eval_day, env_cfg)
    test = stats.ttest_ind(agent, rand, equal_var=False, alternative="greater")
    elapsed = time.perf_counter() - t0
    ok = agent.mean() > rand.mean() and test.pvalue < 0.05 and elapsed < 1800
    acceptance(8, "trained agent beats random", ok,
               f"A2C mean episode return {agent.mean():.3f}% vs random {rand.mean():.3f}% "
               f"(20 episodes each, Welch one-sided p={test.pvalue:.1e}), {elapsed:.0f}s (limit 1800s)")


def test_09_byte_reproducible(acceptance, tmp_path, monkeypatch):
    from lobmm.cli import main

    ticks = synthetic_day(600, seed=77)
    same = {}
    for backend in sorted(KERNELS):
        a, b = tmp_path / f"a_{backend}.csv", tmp_path / f"b_{backend}.csv"
        write_snapshots(a, replay_to_snapshots(ticks, backend=backend))
        write_snapshots(b, replay_to_snapshots(ticks, backend=backend))
        same[backend] = a.read_bytes() == b.read_bytes() and (
            tmp_path / f"a_{backend}.trades.csv").read_bytes() == (tmp_path / f"b_{backend}.trades.csv").read_bytes()
    snap = tmp_path / f"a_{sorted(KERNELS)[0]}.csv"
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"train_data: {snap}\nagent: ppo\ntraining_steps: 400\nn_envs: 2\nn_steps: 20\n"
                   f"shared_width: 32\nhead_width: 16\nepisode_length: 100\nrandom_start: true\nseed: 5\n"
                   f"checkpoint_interval: 200\n")
    out = tmp_path / "run"
    monkeypatch.setenv("LOBMM_OUTPUT_DIR", str(out))
    artifacts = ("metrics.jsonl", "checkpoint.pt", "config.json")
    copies = []
    for k in range(2):
        if out.exists():
            shutil.rmtree(out)
        assert main(["train", "--config", str(cfg)]) == 0
        copies.append({name: (out / name).read_bytes() for name in artifacts})
    train_same = copies[0] == copies[1]
    acceptance(9, "byte-reproducible pipeline", all(same.values()) and train_same,
               f"snapshots identical per backend {same}; training artifacts {list(artifacts)} identical: {train_same}")


def test_10_throughput(acceptance):
    ticks = synthetic_day(3600, seed=1)
    rates = {}
    for backend in sorted(KERNELS):
        replay_to_snapshots(synthetic_day(60, seed=2), backend=backend)  # warm up
        best = float("inf")
        for _ in range(2):
            t0 = time.perf_counter()
            replay_to_snapshots(ticks, backend=backend)
            best = min(best, time.perf_counter() - t0)
        rates[backend] = len(ticks) / best
    detail = ", ".join(f"{k} {v:,.0f} events/s" for k, v in rates.items())
    acceptance(10, "replay throughput", min(rates.values()) >= 50_000,
               f"{len(ticks)} events; {detail} (floor 50,000)")
