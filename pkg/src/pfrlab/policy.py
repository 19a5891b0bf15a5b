"""Recurrent and feed-forward policy/value networks with factored per-VNF heads."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .env import N_ACTIONS


@dataclass(frozen=True)
class ArchitectureSpec:
    input_width: int
    n_heads: int
    n_actions: int = N_ACTIONS
    pre_layers: tuple = (512, 512)
    recurrent_layers: tuple = (100, 100)
    post_layers: tuple = (256, 256)
    dropout: tuple = ()  # one rate per fully connected layer (pre then post); empty disables
    q_heads: int = 0  # twin soft-Q heads for SAC
    value_outputs: int = 1  # 1 for a joint value, n_heads for one value per VNF
    init_seed: int = 0

    def __post_init__(self):
        if self.input_width < 1 or self.n_heads < 1 or self.n_actions < 2:
            raise ValueError("input_width, n_heads must be >= 1 and n_actions >= 2")
        n_fc = len(self.pre_layers) + len(self.post_layers)
        if self.dropout and len(self.dropout) != n_fc:
            raise ValueError(f"dropout needs {n_fc} rates, got {len(self.dropout)}")
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.value_outputs not in (1, self.n_heads):
            raise ValueError(f"value_outputs must be 1 or n_heads ({self.n_heads})")
        if not (self.pre_layers or self.recurrent_layers or self.post_layers):
            raise ValueError("architecture needs at least one hidden layer")

    @classmethod
    def hybrid(cls, input_width: int, n_heads: int, **kw) -> "ArchitectureSpec":
        """FC (512, 512) -> LSTM (100, 100) -> FC (256, 256)."""
        return cls(input_width, n_heads, **kw)

    @classmethod
    def feedforward(cls, input_width: int, n_heads: int, **kw) -> "ArchitectureSpec":
        """Twelve FC layers with heavy dropout and no recurrence."""
        return cls(input_width, n_heads,
                   pre_layers=(512,) * 10 + (256, 128), recurrent_layers=(), post_layers=(),
                   dropout=(0.4,) * 10 + (0.2, 0.2), **kw)

    @property
    def is_recurrent(self) -> bool:
        return bool(self.recurrent_layers)

    @property
    def feature_width(self) -> int:
        widths = [self.input_width, *self.pre_layers, *self.recurrent_layers, *self.post_layers]
        return widths[-1]

    def layer_shapes(self) -> list:
        """(name, shape) for every tensor, in parameter order."""
        shapes = []
        width = self.input_width
        for i, w in enumerate(self.pre_layers):
            shapes += [(f"pre.{i}.weight", (w, width)), (f"pre.{i}.bias", (w,))]
            width = w
        for i, h in enumerate(self.recurrent_layers):
            # torch LSTM keeps separate input and hidden biases
            shapes += [(f"rnn.{i}.weight_ih_l0", (4 * h, width)), (f"rnn.{i}.weight_hh_l0", (4 * h, h)),
                       (f"rnn.{i}.bias_ih_l0", (4 * h,)), (f"rnn.{i}.bias_hh_l0", (4 * h,))]
            width = h
        for i, w in enumerate(self.post_layers):
            shapes += [(f"post.{i}.weight", (w, width)), (f"post.{i}.bias", (w,))]
            width = w
        out = self.n_heads * self.n_actions
        shapes += [("policy_head.weight", (out, width)), ("policy_head.bias", (out,)),
                   ("value_head.weight", (self.value_outputs, width)),
                   ("value_head.bias", (self.value_outputs,))]
        for j in range(self.q_heads):
            shapes += [(f"q_heads.{j}.weight", (out, width)), (f"q_heads.{j}.bias", (out,))]
        return shapes

    def parameter_count(self) -> int:
        return sum(math.prod(s) for _, s in self.layer_shapes())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        d = dict(d)
        for k in ("pre_layers", "recurrent_layers", "post_layers", "dropout"):
            d[k] = tuple(d.get(k, ()))
        return cls(**d)


class ActionDistribution:
    """Independent categorical per VNF head; joint quantities are sums over heads."""

    def __init__(self, logits: torch.Tensor):
        self.logits = logits
        self.log_probs = torch.log_softmax(logits, dim=-1)

    @property
    def probs(self) -> torch.Tensor:
        return self.log_probs.exp()

    def log_prob(self, actions: torch.Tensor) -> torch.Tensor:
        return self.log_probs.gather(-1, actions.long().unsqueeze(-1)).squeeze(-1).sum(-1)

    def entropy(self) -> torch.Tensor:
        return -(self.probs * self.log_probs).sum(-1).sum(-1)

    def head_entropy(self) -> torch.Tensor:
        return -(self.probs * self.log_probs).sum(-1)

    def mode(self) -> torch.Tensor:
        return self.logits.argmax(-1)


def sample_and_logprob(dist: ActionDistribution, rng: np.random.Generator) -> tuple:
    """Inverse-CDF draw per head from a numpy stream; returns (actions, joint log-prob, entropy)."""
    probs = dist.probs.detach().cpu().double().numpy()
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    actions = np.minimum((cdf < u).sum(-1), probs.shape[-1] - 1)
    lp = dist.log_prob(torch.as_tensor(actions, device=dist.logits.device)).detach().cpu().numpy()
    ent = dist.entropy().detach().cpu().numpy()
    return actions, lp, ent


@dataclass
class NetOutput:
    dist: ActionDistribution
    value: torch.Tensor  # (B, T), or (B, T, V) with per-VNF values
    q: Optional[torch.Tensor]  # (B, T, q_heads, V, A)
    features: torch.Tensor
    state: Optional[list]


class PolicyNet(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec
        rates = list(spec.dropout) or [0.0] * (len(spec.pre_layers) + len(spec.post_layers))
        self.pre = nn.ModuleList()
        width = spec.input_width
        for w in spec.pre_layers:
            self.pre.append(nn.Linear(width, w))
            width = w
        self.rnn = nn.ModuleList()
        for h in spec.recurrent_layers:
            self.rnn.append(nn.LSTM(width, h, batch_first=True))
            width = h
        self.post = nn.ModuleList()
        for w in spec.post_layers:
            self.post.append(nn.Linear(width, w))
            width = w
        self._rates = rates
        out = spec.n_heads * spec.n_actions
        self.policy_head = nn.Linear(width, out)
        self.value_head = nn.Linear(width, spec.value_outputs)
        self.q_heads = nn.ModuleList(nn.Linear(width, out) for _ in range(spec.q_heads))
        self.reset_parameters(spec.init_seed)
        self.version = 0

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for lin in [*self.pre, *self.post]:
                bound = 1.0 / math.sqrt(lin.in_features)
                lin.weight.uniform_(-bound, bound, generator=g)
                lin.bias.zero_()
            for lstm in self.rnn:
                h = lstm.hidden_size
                bound = 1.0 / math.sqrt(lstm.input_size)
                lstm.weight_ih_l0.uniform_(-bound, bound, generator=g)
                for k in range(4):
                    block = torch.empty(h, h)
                    nn.init.orthogonal_(block, generator=g)
                    lstm.weight_hh_l0[k * h:(k + 1) * h].copy_(block)
                lstm.bias_ih_l0.zero_()
                lstm.bias_hh_l0.zero_()
                lstm.bias_ih_l0[h:2 * h].fill_(1.0)  # forget gate
            for lin in [self.policy_head, self.value_head, *self.q_heads]:
                lin.weight.uniform_(-1e-3, 1e-3, generator=g)
                lin.bias.zero_()

    def initial_state(self, batch: int) -> Optional[list]:
        if not self.spec.is_recurrent:
            return None
        p = next(self.parameters())
        return [(torch.zeros(1, batch, h, dtype=p.dtype), torch.zeros(1, batch, h, dtype=p.dtype))
                for h in self.spec.recurrent_layers]

    def trunk(self, obs: torch.Tensor, state: Optional[list] = None) -> tuple:
        x = obs
        k = 0
        for lin in self.pre:
            x = torch.relu(lin(x))
            if self._rates[k] > 0:
                x = nn.functional.dropout(x, self._rates[k], self.training)
            k += 1
        new_state = None
        if self.rnn:
            state = state or self.initial_state(obs.shape[0])
            new_state = []
            for lstm, hc in zip(self.rnn, state):
                x, hc = lstm(x, hc)
                new_state.append(hc)
        for lin in self.post:
            x = torch.relu(lin(x))
            if self._rates[k] > 0:
                x = nn.functional.dropout(x, self._rates[k], self.training)
            k += 1
        return x, new_state

    def heads(self, features: torch.Tensor) -> tuple:
        lead = features.shape[:-1]
        logits = self.policy_head(features).view(*lead, self.spec.n_heads, self.spec.n_actions)
        value = self.value_head(features)
        if self.spec.value_outputs == 1:
            value = value.squeeze(-1)
        q = None
        if self.q_heads:
            q = torch.stack([qh(features).view(*lead, self.spec.n_heads, self.spec.n_actions)
                             for qh in self.q_heads], dim=-3)
        return logits, value, q

    def forward(self, obs: torch.Tensor, state: Optional[list] = None) -> NetOutput:
        """``obs`` is (batch, time, width); recurrent state threads across calls."""
        if obs.dim() != 3 or obs.shape[-1] != self.spec.input_width:
            raise ValueError(f"expected obs of shape (batch, time, {self.spec.input_width}), got {tuple(obs.shape)}")
        feats, new_state = self.trunk(obs, state)
        logits, value, q = self.heads(feats)
        return NetOutput(ActionDistribution(logits), value, q, feats, new_state)

    # flat parameter views -------------------------------------------------
    def flat_parameters(self) -> torch.Tensor:
        return nn.utils.parameters_to_vector(self.parameters()).detach().clone()

    def load_flat_parameters(self, vec) -> None:
        vec = torch.as_tensor(vec, dtype=next(self.parameters()).dtype)
        if vec.numel() != self.spec.parameter_count():
            raise ValueError(f"expected {self.spec.parameter_count()} parameters, got {vec.numel()}")
        nn.utils.vector_to_parameters(vec, self.parameters())

    def named_views(self) -> dict:
        return dict(self.named_parameters())


def backward(loss: torch.Tensor, params) -> torch.Tensor:
    """Flat gradient of ``loss`` w.r.t. ``params``; refuses non-finite losses."""
    params = list(params)
    if not torch.isfinite(loss).all():
        raise FloatingPointError(f"non-finite loss {loss.item()!r}; parameter norm "
                                 f"{float(torch.norm(torch.cat([p.detach().reshape(-1) for p in params]))):.4g}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)])


def jitter_(module: nn.Module, scale: float = 0.3, seed: int = 0) -> nn.Module:
    """Add seeded Gaussian noise to every parameter in place.

    Freshly initialized heads are near zero, which leaves most gradients below the
    round-off floor of a finite difference; gradient checks run at a jittered point.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return module


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], module: nn.Module, n_params: int = 200,
                            step: float = 1e-5, seed: int = 0, floor: float = 1e-7,
                            relative_floor: float = 0.0) -> dict:
    """Compare autograd against central differences on randomly chosen parameter entries.

    ``loss_fn`` must be a deterministic function of the module's current
    parameters. Returns the max relative error. The denominator is guarded by
    ``max(floor, relative_floor * max|grad|)`` so that entries whose gradient is
    at round-off level are judged by absolute error instead.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    loss = loss_fn()
    analytic = backward(loss, params).detach()
    floor = max(floor, relative_floor * float(analytic.abs().max()))
    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_params, offsets[-1]), replace=False)
    errors, fd_vals = [], []
    with torch.no_grad():
        for idx in picks:
            j = int(np.searchsorted(offsets, idx, side="right") - 1)
            flat = params[j].view(-1)
            local = int(idx - offsets[j])
            orig = flat[local].item()
            flat[local] = orig + step
            lp = loss_fn().item()
            flat[local] = orig - step
            lm = loss_fn().item()
            flat[local] = orig
            fd = (lp - lm) / (2 * step)
            a = analytic[idx].item()
            errors.append(abs(a - fd) / max(abs(a), abs(fd), floor))
            fd_vals.append(fd)
    return {"max_rel_error": float(max(errors)), "n_checked": len(picks),
            "n_nonzero": int(sum(abs(x) > floor for x in fd_vals))}


class NetRolloutPolicy:
    """Steps a :class:`PolicyNet` one slot at a time, threading the recurrent state."""

    def __init__(self, net: PolicyNet):
        self.net = net
        self._state = None

    def begin(self, n_envs: int) -> None:
        self._state = self.net.initial_state(n_envs)

    def act(self, obs: np.ndarray, envs, rng: np.random.Generator, greedy: bool = False) -> tuple:
        was_training = self.net.training
        self.net.eval()
        dtype = next(self.net.parameters()).dtype
        with torch.no_grad():
            out = self.net(torch.as_tensor(obs[:, None, :], dtype=dtype), self._state)
        self._state = out.state
        self.net.train(was_training)
        dist = ActionDistribution(out.dist.logits[:, 0])
        if greedy:
            actions = dist.mode().numpy()
            lp = dist.log_prob(torch.as_tensor(actions)).numpy()
        else:
            actions, lp, _ = sample_and_logprob(dist, rng)
        return actions, lp, out.value[:, 0].numpy()
