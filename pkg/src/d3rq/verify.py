"""Invariant suites runnable from the command line.

Each check reports its tolerance and the worst error it observed. The
suites are deliberately independent of the training loop: projections are
compared against a per-atom mass-splitting loop, gradients against central
differences, replay windows against a re-walk of the stored episodes, and
tabular targets against exhaustive enumeration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import netcore, oracle
from .agent import Agent, Networks, NoiseSchedule, actor_loss_and_grads, critic_loss_and_grads
from .distrib import wire
from .envsim import chain6, random_mdp
from .replay import ReplayBuffer, Transition
from .valuedist import Support, cross_entropy_loss, make_support, project, shift_scale_targets

SUITES = ("projection", "gradients", "replay", "oracle", "protocol")
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: float
    observed: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<44} observed {self.observed:.3e}  "
                f"tolerance {self.tolerance:.1e}  ({self.seconds:.2f} s)")


def _check(name, tolerance, fn):
    start = time.perf_counter()
    observed = float(fn())
    ok = bool(observed <= tolerance) and math.isfinite(observed)
    return CheckResult(name, tolerance, observed, ok, time.perf_counter() - start)


# -- projection ----------------------------------------------------------------

def project_loop(support: Support, values, probs) -> np.ndarray:
    """Reference projection: one target atom at a time, floor/ceil neighbours."""
    out = np.zeros(support.n_atoms)
    for v, p in zip(values, probs):
        b = (min(max(v, support.v_min), support.v_max) - support.v_min) / support.delta
        b = min(max(b, 0.0), support.n_atoms - 1)
        lo, hi = math.floor(b), math.ceil(b)
        if lo == hi:
            out[lo] += p
        else:
            out[lo] += p * (hi - b)
            out[hi] += p * (b - lo)
    return out


def random_projection_case(rng):
    """Random support plus target atoms inside it, as (support, values, probs)."""
    v_min = rng.uniform(-20, 5)
    support = make_support(v_min, v_min + rng.uniform(0.5, 40), int(rng.integers(2, 102)))
    k = int(rng.integers(1, 80))
    values = rng.uniform(support.v_min, support.v_max, k)
    snap = rng.random(k) < 0.2  # some targets land exactly on atoms or bounds
    values[snap] = rng.choice(support.atoms, snap.sum())
    probs = rng.dirichlet(np.full(k, 0.5))
    return support, values, probs


def projection_checks(cases=1000, seed=0):
    rng = np.random.default_rng(seed)
    data = [random_projection_case(rng) for _ in range(cases)]

    def oracle_err():
        return max(np.max(np.abs(project(s, v, p) - project_loop(s, v, p))) for s, v, p in data)

    def mass_err():
        return max(abs(project(s, v, p).sum() - 1.0) for s, v, p in data)

    def mean_err():
        return max(abs(project(s, v, p) @ s.atoms - v @ p) for s, v, p in data)

    def identity_err():
        worst = 0.0
        for s, _, _ in data[:100]:
            p = rng.dirichlet(np.ones(s.n_atoms))
            out = project(s, shift_scale_targets(s, 0.0, 1.0, 1.0), p)
            worst = max(worst, np.max(np.abs(out - p)))
        return worst

    return [
        _check(f"projection matches mass-splitting loop ({cases})", 1e-12, oracle_err),
        _check("projection conserves mass", 1e-9, mass_err),
        _check("projection preserves the mean", 1e-9, mean_err),
        _check("identity shift-scale then project", 1e-12, identity_err),
    ]


# -- gradients -----------------------------------------------------------------

def rel_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def fd_params(loss_fn, params: netcore.ParamSet, coords, h=FD_STEP, active=None):
    """Central differences of ``loss_fn(params)`` at flat coordinates ``coords``.

    With ``active(params)`` returning the ReLU on/off masks, a coordinate whose
    +-h probe flips any unit is non-differentiable there and comes back as NaN.
    """
    flat = params.flat()
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        up = flat.copy()
        up[c] += h
        down = flat.copy()
        down[c] -= h
        p_up, p_down = params.from_flat(up), params.from_flat(down)
        if active is not None and not all(np.array_equal(a, b)
                                          for a, b in zip(active(p_up), active(p_down))):
            out[i] = np.nan
            continue
        out[i] = (loss_fn(p_up) - loss_fn(p_down)) / (2 * h)
    return out


def relu_masks(net, params, x):
    _, tape = netcore.forward(net, params, x)
    return [r[1] > 0 for r in tape.records if r[0] == "relu"]


def _smooth_error(analytic, numeric) -> float:
    keep = ~np.isnan(numeric)
    return rel_error(np.asarray(analytic)[keep], numeric[keep]) if keep.any() else 0.0


def _flat_grads(params, grads):
    return np.concatenate([np.ravel(grads[k]) for k in params])


def _sample_coords(rng, size, count):
    return rng.choice(size, min(size, count), replace=False)


def grad_check_cross_entropy(rng):
    n = int(rng.integers(2, 30))
    logits = rng.normal(size=n) * 2
    target = rng.dirichlet(np.ones(n))
    _, grad = cross_entropy_loss(target, logits)
    num = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = FD_STEP
        num[i] = (cross_entropy_loss(target, logits + e)[0]
                  - cross_entropy_loss(target, logits - e)[0]) / (2 * FD_STEP)
    return rel_error(grad, num)


def grad_check_mlp(rng, coords=12):
    sizes = [int(rng.integers(2, 9))] + [int(rng.integers(2, 17)) for _ in range(2)] + [int(rng.integers(1, 6))]
    net = netcore.mlp(sizes, "tanh" if rng.random() < 0.5 else None)
    params = _init(net, rng)
    x = rng.normal(size=(int(rng.integers(1, 6)), sizes[0]))
    w = rng.normal(size=(x.shape[0], sizes[-1]))

    def loss(p):
        return float(np.sum(netcore.forward(net, p, x)[0] * w))

    y, tape = netcore.forward(net, params, x)
    grads, _ = netcore.backward(tape, params, w)
    idx = _sample_coords(rng, params.size(), coords)
    numeric = fd_params(loss, params, idx, active=lambda p: relu_masks(net, p, x))
    return _smooth_error(_flat_grads(params, grads)[idx], numeric)


def grad_check_conv(rng, coords=12):
    c = int(rng.integers(1, 4))
    size = int(rng.integers(7, 12))
    net = netcore.conv_encoder((c, size, size), features_dim=int(rng.integers(2, 6)),
                               channels=int(rng.integers(2, 5)))
    params = _init(net, rng)
    x = rng.random((2, c, size, size))
    w = rng.normal(size=(2, net.output_dim))

    def loss(p):
        return float(np.sum(netcore.forward(net, p, x)[0] * w))

    _, tape = netcore.forward(net, params, x)
    grads, dx = netcore.backward(tape, params, w)
    idx = _sample_coords(rng, params.size(), coords)
    numeric = fd_params(loss, params, idx, active=lambda p: relu_masks(net, p, x))
    err = _smooth_error(_flat_grads(params, grads)[idx], numeric)
    # input gradient on a few pixels too
    flat_x = x.ravel()
    pix = _sample_coords(rng, flat_x.size, 4)
    num = np.empty(len(pix))
    for j, i in enumerate(pix):
        up, down = flat_x.copy(), flat_x.copy()
        up[i] += FD_STEP
        down[i] -= FD_STEP
        up, down = up.reshape(x.shape), down.reshape(x.shape)
        if not all(np.array_equal(a, b) for a, b in
                   zip(relu_masks(net, params, up), relu_masks(net, params, down))):
            num[j] = np.nan
            continue
        num[j] = (float(np.sum(netcore.forward(net, params, up)[0] * w))
                  - float(np.sum(netcore.forward(net, params, down)[0] * w))) / (2 * FD_STEP)
    return max(err, _smooth_error(dx.ravel()[pix], num))


def small_networks(rng, mode="categorical", pixels=None):
    pixels = rng.random() < 0.5 if pixels is None else pixels
    obs_shape = (3, 9, 9) if pixels else (int(rng.integers(2, 6)),)
    nets = Networks.build(obs_shape, int(rng.integers(1, 3)), mode, hidden_dim=int(rng.integers(4, 12)),
                          features_dim=int(rng.integers(2, 6)), n_atoms=int(rng.integers(3, 12)))
    if pixels:
        nets = Networks(nets.obs_shape, nets.action_dim, nets.actor, nets.critic,
                        netcore.conv_encoder(obs_shape, nets.feature_dim, channels=3),
                        nets.feature_dim, mode)
    return nets


def _init(net, rng, **kw):
    """Float64 parameters with nonzero biases, so no ReLU sits exactly on its kink."""
    params = netcore.init_params(net, int(rng.integers(1 << 30)), np.float64, **kw)
    return netcore.ParamSet({k: v + 0.1 * rng.normal(size=v.shape) if k.endswith(".b") else v
                             for k, v in params.items()})


def grad_check_critic(rng, mode="categorical", coords=8):
    nets = small_networks(rng, mode)
    c1, c2 = _init(nets.critic, rng), _init(nets.critic, rng)
    enc = _init(nets.encoder, rng) if nets.encoder else netcore.ParamSet()
    batch = 3
    obs = rng.random((batch,) + nets.obs_shape)
    action = rng.uniform(-1, 1, (batch, nets.action_dim))
    if mode == "categorical":
        target = rng.dirichlet(np.ones(nets.critic.output_dim), batch)
    else:
        target = rng.normal(size=batch)
    _, _, g1, g2, genc = critic_loss_and_grads(nets, c1, c2, enc, obs, action, target)

    def total(a, b, e):
        l1, l2, *_ = critic_loss_and_grads(nets, a, b, e, obs, action, target)
        return l1 + l2

    errs = []
    for which, params, grads in (("c1", c1, g1), ("c2", c2, g2), ("enc", enc, genc)):
        if len(params) == 0:
            continue
        idx = _sample_coords(rng, params.size(), coords)
        fn = {"c1": lambda p: total(p, c2, enc), "c2": lambda p: total(c1, p, enc),
              "enc": lambda p: total(c1, c2, p)}[which]
        errs.append(rel_error(_flat_grads(params, grads)[idx], fd_params(fn, params, idx)))
    return max(errs)


def grad_check_actor(rng, mode="categorical", coords=12):
    nets = small_networks(rng, mode, pixels=False)
    support = make_support(-3.0, 3.0, nets.critic.output_dim) if mode == "categorical" else None
    actor = _init(nets.actor, rng)
    c1, c2 = _init(nets.critic, rng), _init(nets.critic, rng)
    batch = 4
    h = rng.normal(size=(batch, nets.feature_dim))
    noise = np.clip(0.2 * rng.normal(size=(batch, nets.action_dim)), -0.2, 0.2)
    _, grads = actor_loss_and_grads(nets, support, actor, c1, c2, h, noise)

    def loss(p):
        return actor_loss_and_grads(nets, support, p, c1, c2, h, noise)[0]

    idx = _sample_coords(rng, actor.size(), coords)
    return rel_error(_flat_grads(actor, grads)[idx], fd_params(loss, actor, idx))


GRADIENT_CASES = {
    "cross-entropy with softmax": grad_check_cross_entropy,
    "MLP": grad_check_mlp,
    "conv encoder": grad_check_conv,
    "critic loss (categorical)": lambda rng: grad_check_critic(rng, "categorical"),
    "critic loss (scalar)": lambda rng: grad_check_critic(rng, "scalar"),
    "actor loss (categorical)": lambda rng: grad_check_actor(rng, "categorical"),
    "actor loss (scalar)": lambda rng: grad_check_actor(rng, "scalar"),
}


def gradient_checks(instances=50, seed=0, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    return [_check(f"gradient: {name} ({instances} cases)", tolerance,
                   lambda fn=fn: max(fn(rng) for _ in range(instances)))
            for name, fn in GRADIENT_CASES.items()]


# -- replay --------------------------------------------------------------------

def random_episodes(rng, count, writers=3, max_len=12, p_terminal=0.4, obs_dim=2):
    """Interleaved transitions from several writers; each episode ends terminal or truncated."""
    streams = []
    for w in range(writers):
        eps = []
        for e in range(count // writers + (w < count % writers)):
            length = int(rng.integers(1, max_len + 1))
            terminal = rng.random() < p_terminal
            eps.append([Transition(np.full(obs_dim, e, np.float32), np.zeros(1, np.float32),
                                   float(rng.normal()), np.full(obs_dim, e, np.float32),
                                   terminal and s == length - 1, (not terminal) and s == length - 1,
                                   e, s, w)
                        for s in range(length)])
        streams.append([t for ep in eps for t in ep])
    out = []
    pos = [0] * writers
    while any(pos[w] < len(streams[w]) for w in range(writers)):
        w = int(rng.integers(writers))
        if pos[w] < len(streams[w]):
            out.append(streams[w][pos[w]])
            pos[w] += 1
    return out


def walk_oracle(transitions, n, gamma):
    """(g, m, bootstrap) for every (writer, episode, step) by re-walking stored episodes."""
    episodes = {}
    for t in transitions:
        episodes.setdefault((t.writer, t.episode), []).append(t)
    table = {}
    for key, ep in episodes.items():
        for s in range(len(ep)):
            acc, disc, m, boot = 0.0, 1.0, 0, True
            for k in range(s, len(ep)):
                acc += disc * ep[k].reward
                disc *= gamma
                m += 1
                if ep[k].terminal:
                    boot = False
                    break
                if ep[k].truncated or m == n:
                    break
            table[key + (s,)] = (acc, m, boot)
    return table


def replay_checks(episodes=10_000, seed=0, n=3, gamma=0.97, draws=200):
    rng = np.random.default_rng(seed)
    transitions = random_episodes(rng, episodes)
    buf = ReplayBuffer(len(transitions))
    for t in transitions:
        buf.push(t)
    table = walk_oracle(transitions, n, gamma)
    sample_rng = np.random.default_rng(seed + 1)
    batches = [buf.sample_nstep(256, n, gamma, sample_rng) for _ in range(draws)]

    def mismatch():
        bad = 0
        for b in batches:
            for i in range(len(b)):
                g, m, boot = table[(int(b.writer[i]), int(b.episode[i]), int(b.step[i]))]
                bad += not (b.g[i] == g and b.m[i] == m and bool(b.bootstrap[i]) == boot)
        return bad

    def uniformity():
        idx = np.concatenate([b.index for b in batches])
        bins = 20
        counts = np.bincount(idx * bins // len(buf), minlength=bins)
        edges = np.arange(bins + 1) * len(buf)
        sizes = np.diff(-(-edges // bins))  # slots per bin
        p = sizes / len(buf)
        sigma = np.sqrt(len(idx) * p * (1 - p))
        return float(np.max(np.abs(counts - len(idx) * p) / sigma))

    return [
        _check(f"n-step windows equal the re-walk oracle ({episodes} episodes)", 0.0, mismatch),
        _check("sampled start slots are uniform (max z-score)", 5.0, uniformity),
    ]


# -- tabular oracles -----------------------------------------------------------

def one_hot_critic_params(Z, action_values, dtype=np.float64, floor=-700.0):
    """Critic weights that map (one-hot state, action) to log Z[state, action].

    Actions are encoded as the scalars in ``action_values`` (one per action
    index). The first hidden layer lights exactly one unit per (state,
    action) pair, the second copies it, and the output layer holds the log
    probabilities.
    """
    S, A, N = Z.shape
    if A != 2 or not (action_values[0] < 0 < action_values[1]):
        raise ValueError("construction expects two actions encoded as (-a, +a)")
    scale = 1.0 / action_values[1]
    w0 = np.zeros((S + 1, 2 * S))
    b0 = np.zeros(2 * S)
    for s in range(S):
        # unit 2s fires for the negative action, unit 2s+1 for the positive one
        w0[s, 2 * s] = 1.0
        w0[S, 2 * s] = -0.5 * scale
        b0[2 * s] = -0.5
        w0[s, 2 * s + 1] = 1.0
        w0[S, 2 * s + 1] = 0.5 * scale
        b0[2 * s + 1] = -0.5
    logz = np.maximum(np.log(np.maximum(Z, 1e-300)), floor)
    w2 = logz.reshape(2 * S, N)
    return netcore.ParamSet({
        "l0.w": w0.astype(dtype), "l0.b": b0.astype(dtype),
        "l1.w": np.eye(2 * S, dtype=dtype), "l1.b": np.zeros(2 * S, dtype),
        "l2.w": w2.astype(dtype), "l2.b": np.zeros(N, dtype),
    })


def one_hot_actor_params(actions, action_value=0.5, dtype=np.float64):
    """Actor weights whose tanh output is +-action_value for the chosen action per state."""
    S = len(actions)
    pre = math.atanh(action_value)
    w0 = np.eye(S)
    w1 = np.eye(S)
    w2 = np.array([[pre if a == 1 else -pre] for a in actions])
    return netcore.ParamSet({
        "l0.w": w0.astype(dtype), "l0.b": np.zeros(S, dtype),
        "l1.w": w1.astype(dtype), "l1.b": np.zeros(S, dtype),
        "l2.w": w2.astype(dtype), "l2.b": np.zeros(1, dtype),
    })


def chain_target_gap(n=3, seed=0, gamma=0.9):
    """Largest gap between the agent's targets and the enumerated n-step operator on chain6.

    The agent's critic targets are computed per enumerated trajectory with
    one-hot features, no noise, and networks whose outputs equal a known
    return-distribution table; mixing them by trajectory probability must
    reproduce the operator.
    """
    mdp = chain6(gamma)
    S, A = mdp.n_states, mdp.n_actions
    rng = np.random.default_rng(seed)
    actions = rng.integers(0, A, S)
    policy = oracle.TabularPolicy.deterministic(actions, A)
    support = make_support(-1.0, 1.2 / (1 - gamma), 41)
    Z = rng.dirichlet(np.ones(support.n_atoms), (S, A))
    expected = oracle.nstep_dist_operator(mdp, policy, Z, n, support).probs

    nets = Networks.build((S,), 1, "categorical", hidden_dim=S, features_dim=S,
                          n_atoms=support.n_atoms)
    critic_net = netcore.mlp([S + 1, 2 * S, 2 * S, support.n_atoms])
    nets = Networks(nets.obs_shape, 1, nets.actor, critic_net, None, S, "categorical")
    agent = Agent(nets, support, NoiseSchedule(), gamma=gamma, n_step=n, seed=seed,
                  dtype=np.float64)
    critic = one_hot_critic_params(Z, (-0.5, 0.5))
    agent.state = replace(agent.state, actor=one_hot_actor_params(actions), target1=critic,
                          target2=critic)

    worst = 0.0
    for s0 in range(S):
        for a0 in range(A):
            state, action = np.array([s0]), np.array([a0])
            prob, ret = np.ones(1), np.zeros(1)
            for i in range(n):
                ret = ret + gamma ** i * mdp.R[state, action]
                parent, state, action, prob = oracle._expand(mdp, policy, state, action, prob,
                                                             oracle.DEFAULT_CAP)
                ret = ret[parent]
            next_obs = np.eye(S)[state]
            targets = agent.critic_targets(next_obs, ret, np.full(len(ret), gamma ** n),
                                           np.ones(len(ret)), rng, sigma=0.0)
            worst = max(worst, float(np.max(np.abs(prob @ targets - expected[s0, a0]))))
    return worst


def oracle_checks(seed=0):
    mdp = chain6()
    rng = np.random.default_rng(seed)
    policy = oracle.TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), mdp.n_states))
    support = make_support(-1.0, 12.0, 101)
    Q = oracle.exact_q(mdp, policy)

    def dist_gap():
        table = oracle.dist_eval(mdp, policy, support)
        if not table.converged:
            return math.inf
        return float(np.max(np.abs(table.mean() - Q))) / (2 * support.delta)

    def brute_gap():
        returns = oracle.brute_force_returns(mdp, policy, 10, 0.9)
        bound = oracle.truncation_bound(mdp, 10, 0.9)
        return max(abs(returns[k].mean() - Q[k]) for k in returns) / bound

    def random_residual():
        worst = 0.0
        for _ in range(20):
            m = random_mdp(6, 3, float(rng.uniform(0.5, 0.99)), rng)
            pol = oracle.TabularPolicy(rng.dirichlet(np.ones(3), 6))
            worst = max(worst, oracle.bellman_residual(m, pol, oracle.exact_q(m, pol)))
        return worst

    return [
        _check("exact_q Bellman residual on chain6", 1e-10,
               lambda: oracle.bellman_residual(mdp, policy, Q)),
        _check("exact_q Bellman residual, random MDPs", 1e-10, random_residual),
        _check("dist_eval mean vs exact_q (units of 2*delta)", 1.0, dist_gap),
        _check("brute-force mean vs exact_q (units of bound)", 1.0, brute_gap),
        _check("agent critic targets vs n-step operator", 1e-6, chain_target_gap),
    ]


# -- protocol ------------------------------------------------------------------

def random_message(rng):
    kind = int(rng.integers(1, 6))
    if kind == wire.MsgType.TRANSITION:
        shape = tuple(int(d) for d in rng.integers(1, 5, int(rng.integers(1, 4))))
        dtype = rng.choice([np.float32, np.float64, np.uint8])
        obs = (rng.random(shape) * 200).astype(dtype)
        tr = Transition(obs, rng.normal(size=int(rng.integers(1, 4))).astype(np.float32),
                        float(rng.normal()), (rng.random(shape) * 200).astype(dtype),
                        bool(rng.random() < 0.3), bool(rng.random() < 0.3),
                        int(rng.integers(0, 1 << 40)), int(rng.integers(0, 1 << 20)),
                        int(rng.integers(0, 64)))
        return wire.TransitionMsg(int(rng.integers(0, 1 << 62)), tr)
    if kind == wire.MsgType.WEIGHTS_REQUEST:
        return wire.WeightsRequest(int(rng.integers(0, 1 << 31)), int(rng.integers(0, 1 << 62)))
    if kind == wire.MsgType.WEIGHTS_SNAPSHOT:
        tensors = {f"t{i}/w": rng.normal(size=tuple(int(d) for d in rng.integers(0, 6, int(rng.integers(0, 3)))))
                   .astype(rng.choice([np.float32, np.float64])) for i in range(int(rng.integers(0, 4)))}
        return wire.WeightsSnapshot(int(rng.integers(1, 1 << 62)), int(rng.integers(0, 1 << 62)), tensors)
    if kind == wire.MsgType.HELLO:
        return wire.Hello(int(rng.integers(0, 1 << 31)), int(rng.integers(0, 256)))
    reason = "".join(rng.choice(list("abc xyz-é")) for _ in range(int(rng.integers(0, 12))))
    return wire.Shutdown(int(rng.integers(0, 1 << 31)), int(rng.integers(0, 1 << 62)), reason)


def protocol_checks(messages=10_000, seed=0):
    rng = np.random.default_rng(seed)
    msgs = [random_message(rng) for _ in range(messages)]

    def roundtrip():
        return sum(not wire.messages_equal(wire.decode_frame(wire.encode_frame(m)), m) for m in msgs)

    def stream():
        dec = wire.FrameDecoder()
        sent = msgs[:500]
        blob = b"".join(wire.encode_frame(m) for m in sent)
        got = []
        cuts = np.sort(rng.integers(0, len(blob), 200))
        for a, b in zip(np.r_[0, cuts], np.r_[cuts, len(blob)]):
            got.extend(dec.feed(blob[a:b]))
        return (len(got) != len(sent)) + sum(not wire.messages_equal(a, b) for a, b in zip(got, sent))

    def truncation():
        bad = 0
        for m in msgs[:300]:
            frame = wire.encode_frame(m)
            cut = int(rng.integers(0, len(frame)))
            try:
                wire.decode_frame(frame[:cut])
                bad += 1
            except wire.TruncatedFrame:
                pass
        return bad

    def bad_type():
        bad = 0
        for kind in (0, 6, 7, 255):
            frame = bytearray(wire.encode_frame(wire.Hello(1)))
            frame[4] = kind
            try:
                wire.decode_frame(bytes(frame))
                bad += 1
            except wire.ProtocolError:
                pass
        return bad

    return [
        _check(f"frame round-trip ({messages} random messages)", 0, roundtrip),
        _check("stream decoding across arbitrary splits", 0, stream),
        _check("truncated frames rejected", 0, truncation),
        _check("unknown type bytes rejected", 0, bad_type),
    ]


RUNNERS = {
    "projection": projection_checks,
    "gradients": gradient_checks,
    "replay": replay_checks,
    "oracle": oracle_checks,
    "protocol": protocol_checks,
}


def run_suite(name: str):
    if name == "all":
        return [r for suite in SUITES for r in RUNNERS[suite]()]
    if name not in RUNNERS:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES + ('all',))}")
    return RUNNERS[name]()
