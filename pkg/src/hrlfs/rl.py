"""Per-node actor-critic brains: small dense nets with hand-written gradients.

Each tree node owns an actor (sigmoid head giving P(select)), a critic
(scalar value), Adam state for both, and a prioritized replay buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_rng

HIDDEN_WIDTHS = (64, 8)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PRIORITY_EPS = 1e-6

MODE_UNIFORM = "uniform-random"
MODE_SAMPLE = "sample"
MODE_GREEDY = "greedy"


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class MLP:
    """Dense ReLU network with a scalar linear output and exact backprop."""

    def __init__(self, input_dim: int, hidden=HIDDEN_WIDTHS, seed: int = 0):
        self.widths = (input_dim, *hidden, 1)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass; x is (B, input_dim), result is (B,)."""
        out, _ = self._forward_cached(np.atleast_2d(x))
        return out

    def _forward_cached(self, x: np.ndarray):
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        pre: list[np.ndarray] = []
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return h[:, 0], (pre, acts)

    def backward(self, cache, dout: np.ndarray):
        """Gradients of sum_i dout_i * out_i w.r.t. every parameter."""
        pre, acts = cache
        grad_w = [np.zeros_like(W) for W in self.weights]
        grad_b = [np.zeros_like(b) for b in self.biases]
        delta = dout[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            grad_w[i] = acts[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        return grad_w, grad_b

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.weights + self.biases])

    def set_params(self, flat: np.ndarray) -> None:
        pos = 0
        for store in (self.weights, self.biases):
            for i, p in enumerate(store):
                store[i] = flat[pos : pos + p.size].reshape(p.shape).copy()
                pos += p.size
        if pos != flat.size:
            raise ValueError("parameter vector length mismatch")


class Adam:
    """Adam optimizer state for one MLP's parameter list."""

    def __init__(self, net: MLP, lr: float):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.weights + net.biases]
        self.v = [np.zeros_like(p) for p in net.weights + net.biases]

    def step(self, net: MLP, grad_w, grad_b) -> None:
        self.t += 1
        grads = grad_w + grad_b
        params = net.weights + net.biases
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            m_hat = m / (1 - ADAM_BETA1**self.t)
            v_hat = v / (1 - ADAM_BETA2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


class PrioritizedReplay:
    """Fixed-capacity FIFO buffer sampled proportionally to priority^alpha."""

    def __init__(self, capacity: int = 400):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: list[Experience] = []
        self.priorities: list[float] = []

    def __len__(self) -> int:
        return len(self.items)

    def add(self, exp: Experience) -> None:
        priority = max(self.priorities) if self.priorities else 1.0
        self.items.append(exp)
        self.priorities.append(priority)
        if len(self.items) > self.capacity:
            self.items.pop(0)
            self.priorities.pop(0)

    def sample(
        self,
        batch: int,
        per_alpha: float,
        per_beta: float,
        rng: np.random.Generator,
    ):
        """Returns (experiences, importance weights normalized by their max, indices)."""
        size = len(self.items)
        if batch > size:
            raise ValueError(f"cannot sample {batch} items from buffer of {size}")
        scaled = np.asarray(self.priorities, dtype=np.float64) ** per_alpha
        probs = scaled / scaled.sum()
        idx = rng.choice(size, size=batch, replace=True, p=probs)
        weights = (size * probs[idx]) ** (-per_beta)
        weights = weights / weights.max()
        return [self.items[i] for i in idx], weights, idx

    def update_priorities(self, idx, priorities) -> None:
        for i, p in zip(idx, priorities):
            self.priorities[int(i)] = max(float(p), PRIORITY_EPS)


class AgentBrain:
    """Actor, critic, their Adam states, and a replay buffer for one tree node."""

    def __init__(
        self,
        node_id: int,
        input_dim: int,
        seed: int,
        capacity: int = 400,
        lr_actor: float = 0.001,
        lr_critic: float = 0.01,
    ):
        self.node_id = node_id
        self.actor = MLP(input_dim, seed=derive_rng(seed, "actor", node_id).integers(2**63))
        self.critic = MLP(input_dim, seed=derive_rng(seed, "critic", node_id).integers(2**63))
        self.actor_opt = Adam(self.actor, lr_actor)
        self.critic_opt = Adam(self.critic, lr_critic)
        self.replay = PrioritizedReplay(capacity)

    def select_probability(self, s: np.ndarray) -> float:
        return float(sigmoid(self.actor.forward(s))[0])

    def value(self, s: np.ndarray) -> float:
        return float(self.critic.forward(s)[0])


def act(brain: AgentBrain, s: np.ndarray, mode: str, rng: np.random.Generator) -> int:
    """One select(1)/drop(0) decision; greedy resolves the 0.5 tie to select."""
    if mode == MODE_UNIFORM:
        return int(rng.random() < 0.5)
    prob = brain.select_probability(s)
    if mode == MODE_SAMPLE:
        return int(rng.random() < prob)
    if mode == MODE_GREEDY:
        return int(prob >= 0.5)
    raise ValueError(f"unknown action mode {mode!r}")


def remember(brain: AgentBrain, exp: Experience) -> None:
    brain.replay.add(exp)


def sample_batch(replay: PrioritizedReplay, batch: int, per_alpha: float, per_beta: float, rng):
    return replay.sample(batch, per_alpha, per_beta, rng)


def learn(
    brain: AgentBrain,
    batch: tuple,
    gamma: float,
) -> tuple[float, float, np.ndarray]:
    """One actor-critic update from a sampled batch.

    The critic minimizes importance-weighted squared TD error against
    y = r + gamma * V(s'); the actor ascends weighted log pi(a|s) * A with the
    one-step advantage A = y - V(s) held constant. Returns (actor loss,
    critic loss, new priorities |TD error| + eps) for the sampled indices.
    """
    experiences, weights, _ = batch
    B = len(experiences)
    s = np.stack([e.s for e in experiences])
    s_next = np.stack([e.s_next for e in experiences])
    actions = np.array([e.a for e in experiences], dtype=np.float64)
    rewards = np.array([e.r for e in experiences], dtype=np.float64)

    v_next = brain.critic.forward(s_next)
    targets = rewards + gamma * v_next
    values, critic_cache = brain.critic._forward_cached(s)
    td_error = targets - values
    advantage = td_error.copy()

    critic_loss = float(np.mean(weights * td_error**2))
    d_values = -2.0 * weights * td_error / B
    if not np.isfinite(critic_loss):
        raise FloatingPointError("non-finite critic loss")
    grad_w, grad_b = brain.critic.backward(critic_cache, d_values)
    brain.critic_opt.step(brain.critic, grad_w, grad_b)

    logits, actor_cache = brain.actor._forward_cached(s)
    probs = sigmoid(logits)
    log_pi = np.where(actions > 0.5, np.log(np.maximum(probs, 1e-12)),
                      np.log(np.maximum(1.0 - probs, 1e-12)))
    actor_loss = float(-np.mean(weights * advantage * log_pi))
    if not np.isfinite(actor_loss):
        raise FloatingPointError("non-finite actor loss")
    # d(-w*A*log pi)/d logit = -w*A*(a - sigmoid(logit))
    d_logits = -weights * advantage * (actions - probs) / B
    grad_w, grad_b = brain.actor.backward(actor_cache, d_logits)
    brain.actor_opt.step(brain.actor, grad_w, grad_b)

    new_priorities = np.abs(td_error) + PRIORITY_EPS
    return actor_loss, critic_loss, new_priorities


def squared_loss_gradients(net: MLP, s: np.ndarray, target: float):
    """Loss (out - target)^2 and its exact parameter gradients for one input."""
    out, cache = net._forward_cached(np.atleast_2d(s))
    loss = float((out[0] - target) ** 2)
    grad_w, grad_b = net.backward(cache, np.array([2.0 * (out[0] - target)]))
    return loss, grad_w, grad_b


def logpi_loss_gradients(net: MLP, s: np.ndarray, action: int, advantage: float):
    """Policy-gradient loss -A*log pi(a|s) and its exact parameter gradients."""
    logit, cache = net._forward_cached(np.atleast_2d(s))
    prob = float(sigmoid(logit)[0])
    pi = prob if action == 1 else 1.0 - prob
    loss = float(-advantage * np.log(max(pi, 1e-12)))
    d_logit = -advantage * (action - prob)
    grad_w, grad_b = net.backward(cache, np.array([d_logit]))
    return loss, grad_w, grad_b


def brain_state_dict(brain: AgentBrain) -> dict:
    """JSON-ready checkpoint: widths, parameters, Adam moments, replay contents."""
    def net_state(net: MLP, opt: Adam) -> dict:
        return {
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
            "adam_m": [m.tolist() for m in opt.m],
            "adam_v": [v.tolist() for v in opt.v],
            "adam_t": opt.t,
            "lr": opt.lr,
        }

    return {
        "format": "hrlfs-brain-v1",
        "node_id": brain.node_id,
        "widths": list(brain.actor.widths),
        "actor": net_state(brain.actor, brain.actor_opt),
        "critic": net_state(brain.critic, brain.critic_opt),
        "replay": {
            "capacity": brain.replay.capacity,
            "priorities": list(brain.replay.priorities),
            "items": [
                {"s": e.s.tolist(), "a": e.a, "r": e.r, "s_next": e.s_next.tolist()}
                for e in brain.replay.items
            ],
        },
    }


def brain_from_state_dict(state: dict) -> AgentBrain:
    if state.get("format") != "hrlfs-brain-v1":
        raise ValueError(f"unsupported brain checkpoint format {state.get('format')!r}")
    widths = state["widths"]
    brain = AgentBrain(
        node_id=state["node_id"],
        input_dim=widths[0],
        seed=0,
        capacity=state["replay"]["capacity"],
        lr_actor=state["actor"]["lr"],
        lr_critic=state["critic"]["lr"],
    )

    def restore(net: MLP, opt: Adam, blob: dict) -> None:
        net.weights = [np.asarray(w, dtype=np.float64) for w in blob["weights"]]
        net.biases = [np.asarray(b, dtype=np.float64) for b in blob["biases"]]
        opt.m = [np.asarray(m, dtype=np.float64) for m in blob["adam_m"]]
        opt.v = [np.asarray(v, dtype=np.float64) for v in blob["adam_v"]]
        opt.t = blob["adam_t"]

    restore(brain.actor, brain.actor_opt, state["actor"])
    restore(brain.critic, brain.critic_opt, state["critic"])
    brain.replay.items = [
        Experience(
            s=np.asarray(e["s"], dtype=np.float64),
            a=int(e["a"]),
            r=float(e["r"]),
            s_next=np.asarray(e["s_next"], dtype=np.float64),
        )
        for e in state["replay"]["items"]
    ]
    brain.replay.priorities = [float(p) for p in state["replay"]["priorities"]]
    return brain
