"""Policy/value network, A2C and PPO-clip losses, and the training loop.

Environments are stepped synchronously in one process; the network is
updated once per collected rollout.  Every source of randomness (weight
init, action sampling, minibatch order, environment seeds) is derived
from ``TrainConfig.seed`` so a run is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, IncompatibleCheckpoint, NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from .report import EpisodeReport

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU}


@dataclass
class TrainConfig:
    algo: str = "ppo"
    gamma: float = 0.99
    learning_rate: float = 3e-4
    n_steps: Optional[int] = None           # 256 for PPO, 40 for A2C when unset
    training_steps: int = 10_000_000        # agent decisions summed over environments
    action_repeat: int = 5
    n_envs: int = 4
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: Optional[bool] = None  # on for PPO, off for A2C when unset
    adam_eps: float = 1e-5
    shared_width: int = 256
    head_width: int = 128
    activation: str = "tanh"
    checkpoint_interval: int = 100_000
    seed: int = 0

    @property
    def rollout_steps(self) -> int:
        if self.n_steps is not None:
            return self.n_steps
        return 256 if self.algo == "ppo" else 40

    @property
    def advantage_norm(self) -> bool:
        if self.normalize_advantages is not None:
            return self.normalize_advantages
        return self.algo == "ppo"

    def validate(self) -> List[str]:
        errs = []
        if self.algo not in ("a2c", "ppo"):
            errs.append(f"algo must be 'a2c' or 'ppo', got {self.algo!r}")
        if self.activation not in _ACTIVATIONS:
            errs.append(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if not 0.0 < self.gamma <= 1.0:
            errs.append("gamma must be in (0, 1]")
        for name in ("learning_rate", "clip_epsilon", "adam_eps", "max_grad_norm"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        for name in ("action_repeat", "n_envs", "ppo_epochs", "minibatch_size", "shared_width",
                     "head_width", "checkpoint_interval"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if self.n_steps is not None and self.n_steps < 1:
            errs.append("n_steps must be >= 1")
        if self.training_steps < 0:
            errs.append("training_steps must be >= 0")
        for name in ("entropy_coef", "value_coef"):
            if getattr(self, name) < 0:
                errs.append(f"{name} must be >= 0")
        return errs

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# -- network -----------------------------------------------------------------------------
class PolicyNetwork(nn.Module):
    """Shared layer over the flattened window, then policy and value heads."""

    def __init__(self, obs_shape: Sequence[int], n_actions: int = 17, shared_width: int = 256,
                 head_width: int = 128, activation: str = "tanh"):
        super().__init__()
        self.obs_shape = tuple(int(d) for d in obs_shape)
        self.n_actions = n_actions
        act = _ACTIVATIONS[activation]
        n_in = int(np.prod(self.obs_shape))
        self.shared = nn.Sequential(nn.Flatten(start_dim=-len(self.obs_shape)), nn.Linear(n_in, shared_width), act())
        self.policy = nn.Sequential(nn.Linear(shared_width, head_width), act(), nn.Linear(head_width, n_actions))
        self.value = nn.Sequential(nn.Linear(shared_width, head_width), act(), nn.Linear(head_width, 1))
        with torch.no_grad():
            # start close to uniform
            self.policy[-1].weight.mul_(0.01)
            self.policy[-1].bias.zero_()

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if tuple(obs.shape[-len(self.obs_shape):]) != self.obs_shape or obs.dim() not in (len(self.obs_shape), len(self.obs_shape) + 1):
            raise ShapeMismatch(f"observation shape {tuple(obs.shape)} does not end with {self.obs_shape}")
        squeeze = obs.dim() == len(self.obs_shape)
        if squeeze:
            obs = obs.unsqueeze(0)
        h = self.shared(obs)
        logits = self.policy(h)
        value = self.value(h).squeeze(-1)
        if squeeze:
            return logits[0], value[0]
        return logits, value

    def distribution(self, obs: torch.Tensor):
        logits, value = self(obs)
        return torch.distributions.Categorical(logits=logits), value


def build_network(obs_shape, n_actions: int, config: TrainConfig) -> PolicyNetwork:
    return PolicyNetwork(obs_shape, n_actions, config.shared_width, config.head_width, config.activation)


# -- returns and losses ----------------------------------------------------------------------
def n_step_returns(rewards, values, dones, bootstrap, gamma: float):
    """Discounted returns and advantages over a ``(T, N)`` rollout.

    ``dones[t]`` marks that the episode ended after step ``t``; nothing
    is carried across it.  Each step uses every later reward in the
    buffer plus the discounted bootstrap value.
    """
    rewards = torch.as_tensor(rewards)
    values = torch.as_tensor(values, dtype=rewards.dtype)
    dones = torch.as_tensor(dones, dtype=rewards.dtype)
    ret = torch.as_tensor(bootstrap, dtype=rewards.dtype).clone()
    returns = torch.zeros_like(rewards)
    for t in range(rewards.shape[0] - 1, -1, -1):
        ret = rewards[t] + gamma * ret * (1.0 - dones[t])
        returns[t] = ret
    return returns - values, returns


def n_step_advantage(rewards, values, dones, bootstrap, gamma: float):
    return n_step_returns(rewards, values, dones, bootstrap, gamma)[0]


def a2c_loss(logits, values, actions, advantages, returns, entropy_coef=0.01, value_coef=0.5):
    """Policy-gradient loss with advantages held constant."""
    dist = torch.distributions.Categorical(logits=logits)
    logp = dist.log_prob(actions)
    policy_loss = -(logp * advantages.detach()).mean()
    value_loss = (returns.detach() - values).pow(2).mean()
    entropy = dist.entropy().mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    return loss, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(), "entropy": entropy.item()}


def ppo_clip_loss(logits, values, actions, old_log_probs, advantages, returns, clip_epsilon=0.2,
                  entropy_coef=0.01, value_coef=0.5):
    """Negated clipped surrogate plus value and entropy terms."""
    dist = torch.distributions.Categorical(logits=logits)
    logp = dist.log_prob(actions)
    ratio = torch.exp(logp - old_log_probs.detach())
    adv = advantages.detach()
    surrogate = torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv)
    policy_loss = -surrogate.mean()
    value_loss = (returns.detach() - values).pow(2).mean()
    entropy = dist.entropy().mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"PPO loss is {loss.item()} (policy {policy_loss.item()}, value {value_loss.item()})")
    with torch.no_grad():
        approx_kl = (old_log_probs - logp).mean().item()
        clip_frac = ((ratio - 1.0).abs() > clip_epsilon).double().mean().item()
    return loss, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(), "entropy": entropy.item(),
                  "approx_kl": approx_kl, "clip_fraction": clip_frac}


# -- checkpoints -------------------------------------------------------------------------------
def save_checkpoint(path, net: PolicyNetwork, optimizer, config: TrainConfig, step: int, update: int,
                    generator: torch.Generator, extra: Optional[dict] = None) -> None:
    """Atomically write a versioned checkpoint (a ``torch.save`` dict)."""
    path = Path(path)
    state = {
        "format": CHECKPOINT_FORMAT,
        "obs_shape": list(net.obs_shape),
        "n_actions": net.n_actions,
        "train_config": config.to_dict(),
        "model": net.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "generator": generator.get_state() if generator is not None else None,
        "step": int(step),
        "update": int(update),
        "extra": extra or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        # a file object keeps the random temp name out of the archive
        with open(tmp, "wb") as fh:
            torch.save(state, fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_checkpoint(path) -> dict:
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IncompatibleCheckpoint(f"{path}: cannot read checkpoint ({exc})") from None
    if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
        found = state.get("format") if isinstance(state, dict) else None
        raise IncompatibleCheckpoint(f"{path}: checkpoint format {found!r}, expected {CHECKPOINT_FORMAT}")
    missing = {"obs_shape", "n_actions", "train_config", "model", "step"} - set(state)
    if missing:
        raise IncompatibleCheckpoint(f"{path}: missing fields {sorted(missing)}")
    return state


def network_from_checkpoint(state: dict) -> PolicyNetwork:
    cfg = TrainConfig.from_dict(state["train_config"])
    net = build_network(state["obs_shape"], state["n_actions"], cfg)
    try:
        net.load_state_dict(state["model"])
    except RuntimeError as exc:
        raise IncompatibleCheckpoint(f"parameters do not fit the network: {exc}") from None
    return net


# -- training ----------------------------------------------------------------------------------
class Trainer:
    """Synchronous A2C / PPO over ``n_envs`` environments.

    ``env_factory(rank)`` builds one environment; action repeats are
    applied here.  ``metrics_path`` receives one JSON line per update.
    """

    def __init__(self, env_factory: Callable[[int], object], config: TrainConfig,
                 metrics_path=None, checkpoint_path=None, extra: Optional[dict] = None):
        errs = config.validate()
        if errs:
            raise ConfigError(errs)
        from .env import ActionRepeat

        self.config = config
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.extra = extra or {}
        torch.manual_seed(config.seed)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.envs = []
        for rank in range(config.n_envs):
            env = env_factory(rank)
            self.envs.append(ActionRepeat(env, config.action_repeat) if config.action_repeat > 1 else env)
        self.action_ids = tuple(self.envs[0].action_ids)
        self.obs_shape = tuple(self.envs[0].observation_shape)
        self.net = build_network(self.obs_shape, len(self.action_ids), config)
        self.optimizer = torch.optim.Adam(self.net.parameters(), lr=config.learning_rate, eps=config.adam_eps)
        self.step = 0
        self.update = 0
        self.metrics: List[dict] = []
        self._obs = None
        self._ep_return = np.zeros(config.n_envs)
        self._finished: List[Tuple[float, float]] = []

    def resume(self, path) -> None:
        state = load_checkpoint(path)
        if tuple(state["obs_shape"]) != self.obs_shape or state["n_actions"] != len(self.action_ids):
            raise IncompatibleCheckpoint(
                f"{path}: network for {tuple(state['obs_shape'])}x{state['n_actions']} "
                f"does not match {self.obs_shape}x{len(self.action_ids)}")
        self.net.load_state_dict(state["model"])
        if state.get("optimizer") is not None:
            self.optimizer.load_state_dict(state["optimizer"])
        if state.get("generator") is not None:
            self.generator.set_state(state["generator"])
        self.step = int(state["step"])
        self.update = int(state.get("update", 0))
        log.info("resumed from %s at step %d", path, self.step)

    # -- rollout ---------------------------------------------------------------
    def _env_seed(self, rank: int, episode: int) -> int:
        return int(np.random.SeedSequence([self.config.seed, self.update, rank, episode]).generate_state(1)[0])

    def _reset_all(self) -> None:
        obs = [env.reset(seed=self._env_seed(rank, 0)).observation for rank, env in enumerate(self.envs)]
        self._obs = torch.as_tensor(np.stack(obs), dtype=torch.float32)
        self._ep_return[:] = 0.0
        self._episodes = [0] * len(self.envs)

    def collect(self, n_steps: int):
        net, envs = self.net, self.envs
        N = len(envs)
        obs_buf = torch.zeros((n_steps, N) + self.obs_shape)
        act_buf = torch.zeros((n_steps, N), dtype=torch.long)
        logp_buf = torch.zeros((n_steps, N))
        val_buf = torch.zeros((n_steps, N))
        rew_buf = torch.zeros((n_steps, N), dtype=torch.float64)
        done_buf = torch.zeros((n_steps, N))
        for t in range(n_steps):
            obs_buf[t] = self._obs
            with torch.no_grad():
                logits, value = net(self._obs)
                probs = torch.softmax(logits, dim=-1)
                actions = torch.multinomial(probs, 1, generator=self.generator).squeeze(-1)
                logp = torch.log_softmax(logits, dim=-1).gather(-1, actions[:, None]).squeeze(-1)
            act_buf[t], logp_buf[t], val_buf[t] = actions, logp, value
            nxt = []
            for i, env in enumerate(envs):
                res = env.step(self.action_ids[int(actions[i])])
                rew_buf[t, i] = res.reward
                self._ep_return[i] += res.reward
                if res.done:
                    done_buf[t, i] = 1.0
                    self._finished.append((self._ep_return[i], float(res.info.get("total_pnl", 0.0))))
                    self._ep_return[i] = 0.0
                    self._episodes[i] += 1
                    res = env.reset(seed=self._env_seed(i, self._episodes[i]))
                nxt.append(res.observation)
            self._obs = torch.as_tensor(np.stack(nxt), dtype=torch.float32)
        with torch.no_grad():
            _, bootstrap = net(self._obs)
        adv, ret = n_step_returns(rew_buf, val_buf.double(), done_buf, bootstrap.double(), self.config.gamma)
        return {
            "obs": obs_buf.reshape((-1,) + self.obs_shape),
            "actions": act_buf.reshape(-1),
            "log_probs": logp_buf.reshape(-1),
            "advantages": adv.float().reshape(-1),
            "returns": ret.float().reshape(-1),
            "rewards": rew_buf,
        }

    # -- update ------------------------------------------------------------------
    def _apply(self, loss) -> float:
        self.optimizer.zero_grad()
        loss.backward()
        norm = nn.utils.clip_grad_norm_(self.net.parameters(), self.config.max_grad_norm)
        if not torch.isfinite(norm):
            raise NonFiniteGradient(f"gradient norm is {norm.item()} at step {self.step}")
        self.optimizer.step()
        return norm.item()

    def learn(self, batch) -> dict:
        cfg = self.config
        adv = batch["advantages"]
        if cfg.advantage_norm and adv.numel() > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        if cfg.algo == "a2c":
            logits, values = self.net(batch["obs"])
            loss, parts = a2c_loss(logits, values, batch["actions"], adv, batch["returns"],
                                   cfg.entropy_coef, cfg.value_coef)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"A2C loss is {loss.item()}")
            parts["grad_norm"] = self._apply(loss)
            return parts
        n = adv.shape[0]
        acc: Dict[str, float] = {}
        count = 0
        for _ in range(cfg.ppo_epochs):
            perm = torch.randperm(n, generator=self.generator)
            for lo in range(0, n, cfg.minibatch_size):
                idx = perm[lo:lo + cfg.minibatch_size]
                logits, values = self.net(batch["obs"][idx])
                loss, parts = ppo_clip_loss(logits, values, batch["actions"][idx], batch["log_probs"][idx],
                                            adv[idx], batch["returns"][idx], cfg.clip_epsilon,
                                            cfg.entropy_coef, cfg.value_coef)
                parts["grad_norm"] = self._apply(loss)
                for k, v in parts.items():
                    acc[k] = acc.get(k, 0.0) + v
                count += 1
        return {k: v / count for k, v in acc.items()}

    def _log(self, row: dict) -> None:
        self.metrics.append(row)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def save(self, path=None) -> None:
        path = path or self.checkpoint_path
        if path is not None:
            save_checkpoint(path, self.net, self.optimizer, self.config, self.step, self.update,
                            self.generator, self.extra)

    def run(self) -> PolicyNetwork:
        cfg = self.config
        total = cfg.training_steps
        if self.step >= total:
            return self.net
        torch.set_num_threads(1)
        self._reset_all()
        next_ckpt = (self.step // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval
        while self.step < total:
            n = min(cfg.rollout_steps, max(1, -(-(total - self.step) // len(self.envs))))
            batch = self.collect(n)
            parts = self.learn(batch)
            self.step += n * len(self.envs)
            self.update += 1
            finished, self._finished = self._finished, []
            row = {"step": self.step, "update": self.update, "mean_reward": float(batch["rewards"].mean())}
            row.update({k: float(v) for k, v in parts.items()})
            row["episodes"] = len(finished)
            if finished:
                row["mean_episode_return"] = float(np.mean([f[0] for f in finished]))
                row["mean_episode_pnl"] = float(np.mean([f[1] for f in finished]))
            self._log(row)
            if self.step >= next_ckpt:
                self.save()
                next_ckpt += cfg.checkpoint_interval
        self.save()
        return self.net


def train(env_factory, config: TrainConfig, metrics_path=None, checkpoint_path=None, resume_from=None,
          extra: Optional[dict] = None) -> Tuple[PolicyNetwork, List[dict]]:
    """Train and return ``(network, metric rows)``."""
    trainer = Trainer(env_factory, config, metrics_path, checkpoint_path, extra)
    if resume_from is not None:
        trainer.resume(resume_from)
    net = trainer.run()
    return net, trainer.metrics


# -- evaluation ----------------------------------------------------------------------------------
def select_action(net: PolicyNetwork, obs: np.ndarray, greedy: bool, generator: torch.Generator) -> int:
    with torch.no_grad():
        dtype = next(net.parameters()).dtype
        logits, _ = net(torch.as_tensor(obs, dtype=dtype))
        if greedy:
            return int(torch.argmax(logits))
        return int(torch.multinomial(torch.softmax(logits, -1), 1, generator=generator))


def run_episode(policy: Callable[[np.ndarray], int], env, action_repeat: int = 1, seed: Optional[int] = None,
                agent: str = "", reward: str = "") -> EpisodeReport:
    """Roll one episode; ``policy(obs)`` returns an action id.

    The chosen action is executed once and followed by ``action_repeat - 1``
    no-action steps.  Series are recorded at every environment step.
    """
    res = env.reset(seed=seed)
    equity, inventory, stamps, fills, closed = [], [], [], [], []
    fee = 0.0
    while not res.done:
        action = policy(res.observation)
        for k in range(action_repeat):
            res = env.step(action if k == 0 else env.noop_action)
            info = res.info
            equity.append(info["total_pnl"])
            inventory.append(info["inventory"])
            stamps.append(info["timestamp"])
            fills += [dict(f, timestamp=info["timestamp"]) for f in info["fills"]]
            closed += info["closed_returns"]
            fee = info["fee_paid"]
            if res.done:
                break
    day = env.day.dataset
    final = res.info
    return EpisodeReport(
        agent=agent,
        reward=reward,
        instrument=day.instrument,
        date=day.date,
        action_repeat=action_repeat,
        daily_return_pct=100.0 * final["total_pnl"],
        avg_trade_return_pct=100.0 * float(np.mean(closed)) if closed else 0.0,
        trade_count=len(closed),
        max_inventory=int(max((abs(i) for i in inventory), default=0)),
        fee_total=fee,
        realized_pnl=final["realized_pnl"],
        unrealized_pnl=final["unrealized_pnl"],
        trade_returns=closed,
        timestamps=stamps,
        equity=equity,
        inventory=inventory,
        fills=fills,
    )


def evaluate(net: PolicyNetwork, env, action_repeat: int = 1, greedy: bool = False, seed: int = 0,
             agent: str = "", reward: str = "") -> EpisodeReport:
    gen = torch.Generator().manual_seed(seed)
    net.eval()
    return run_episode(lambda obs: env.action_ids[select_action(net, obs, greedy, gen)], env,
                       action_repeat, seed, agent, reward or getattr(getattr(env, "config", None), "reward", ""))


def random_policy(action_ids: Sequence[int], seed: int = 0) -> Callable[[np.ndarray], int]:
    rng = np.random.default_rng(seed)
    return lambda obs: int(action_ids[int(rng.integers(len(action_ids)))])
