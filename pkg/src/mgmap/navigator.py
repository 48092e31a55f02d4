"""The navigation policy and its local point-goal controller.

One head evaluation (every ``replan_every`` simulator steps) runs::

    M_s   = hallucinate(M_f)                       per-cell category distribution
    M     = encode(M_f, M_s)                       fused map, (c, m, m)
    s, h  = GRU1([pool(M), f_R(R), f_D(D)], h)     state encoder
    i_bar = Att(W_a s, BiLSTM(tokens))             instruction attention
    P_hat = softmax_cells(<W_q i_bar, W_k M_cell>)  localization
    m_bar = sum_cells P_hat * M_cell               attended map feature
    s', h'= GRU2([m_bar, i_bar, s, centroid(P_hat)], h')
    w_hat = A_w s' + b_w ;  p_hat = sigmoid(a_p s' + b_p)

Between head evaluations the controller walks toward the stored waypoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import params as P
from .geometry import Pose, wrap_angle
from .mapping import MapNet, MapSpec, ego_offsets, init_mapping_params
from .sim import Action
from .tensor import (DimensionError, Tensor, bilstm, concat, conv2d, embedding_lookup, exp, gru_cell, linear, log,
                     matmul, mean, mul, relu, reshape, scaled_dot_attention, sigmoid, softmax, sum_)
from .world.geodesic import geodesic_field
from .world.scene import DomainError


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int
    spec: MapSpec = field(default_factory=MapSpec)
    n_rays: int = 64
    max_range: float = 6.0
    embed: int = 32
    lstm: int = 32
    gru1: int = 128
    gru2: int = 128
    enc_hidden: int = 64
    enc_out: int = 32
    pool: int = 32
    loc_dim: int = 32
    cosine: bool = False
    centroid: bool = True
    map_type: str = "multi"
    bn_mode: str = "batch"
    waypoint_prior: float = 3.0  # initial waypoint bias: this far straight ahead

    @property
    def instr_dim(self) -> int:
        return 2 * self.lstm


@dataclass
class AgentState:
    h: np.ndarray
    h2: np.ndarray
    waypoint: np.ndarray | None = None  # world frame, set at each head evaluation
    steps_since_replan: int = 0
    p_hat: float = 0.0


@dataclass
class HeadOutput:
    M_s: Tensor
    M: Tensor
    P_hat: Tensor  # (m, m)
    i_bar: Tensor
    s: Tensor
    h: Tensor
    h2: Tensor
    w_hat: Tensor  # (2,)
    p_hat: Tensor  # (1,)


def init_policy_params(cfg: PolicyConfig, rng: np.random.Generator, zero: bool = False) -> tuple[dict, dict]:
    spec = cfg.spec
    p, buffers = init_mapping_params(rng, spec, zero)
    d = cfg.instr_dim
    p["policy/instr/embed"] = P.uniform(rng, (cfg.vocab_size, cfg.embed), 0.5, zero)
    for side in ("fwd", "bwd"):
        s = 1.0 / math.sqrt(cfg.lstm)
        p[f"policy/instr/{side}/w_ih"] = P.uniform(rng, (4 * cfg.lstm, cfg.embed), s, zero)
        p[f"policy/instr/{side}/w_hh"] = P.uniform(rng, (4 * cfg.lstm, cfg.lstm), s, zero)
        p[f"policy/instr/{side}/b"] = P.zeros((4 * cfg.lstm,))
    n_feat = cfg.n_rays * spec.c_f
    for name, n_in in (("rgb", n_feat), ("depth", cfg.n_rays)):
        p[f"policy/{name}/l1/w"] = P.he(rng, (cfg.enc_hidden, n_in), n_in, zero)
        p[f"policy/{name}/l1/b"] = P.zeros((cfg.enc_hidden,))
        p[f"policy/{name}/l2/w"] = P.he(rng, (cfg.enc_out, cfg.enc_hidden), cfg.enc_hidden, zero)
        p[f"policy/{name}/l2/b"] = P.zeros((cfg.enc_out,))
    ci = spec.c
    for k in (1, 2, 3):
        p[f"policy/pool/c{k}/w"] = P.he(rng, (cfg.pool, ci, 3, 3), ci * 9, zero)
        p[f"policy/pool/c{k}/b"] = P.zeros((cfg.pool,))
        ci = cfg.pool
    g1_in = cfg.pool + 2 * cfg.enc_out
    g2_in = spec.c + d + cfg.gru1 + (2 if cfg.centroid else 0)
    for name, n_in, hid in (("gru1", g1_in, cfg.gru1), ("gru2", g2_in, cfg.gru2)):
        s = 1.0 / math.sqrt(hid)
        p[f"policy/{name}/w_ih"] = P.uniform(rng, (3 * hid, n_in), s, zero)
        p[f"policy/{name}/w_hh"] = P.uniform(rng, (3 * hid, hid), s, zero)
        p[f"policy/{name}/b_ih"] = P.zeros((3 * hid,))
        p[f"policy/{name}/b_hh"] = P.zeros((3 * hid,))
    p["policy/att/w"] = P.uniform(rng, (d, cfg.gru1), 1.0 / math.sqrt(cfg.gru1), zero)
    p["policy/loc/w_q"] = P.uniform(rng, (cfg.loc_dim, d), 1.0 / math.sqrt(d), zero)
    p["policy/loc/w_k"] = P.uniform(rng, (cfg.loc_dim, spec.c), 1.0 / math.sqrt(spec.c), zero)
    p["policy/head/waypoint/w"] = P.uniform(rng, (2, cfg.gru2), 1.0 / math.sqrt(cfg.gru2), zero)
    p["policy/head/waypoint/b"] = Tensor(np.array([0.0 if zero else cfg.waypoint_prior, 0.0]), requires_grad=True)
    p["policy/head/progress/w"] = P.uniform(rng, (1, cfg.gru2), 1.0 / math.sqrt(cfg.gru2), zero)
    p["policy/head/progress/b"] = P.zeros((1,))
    return p, buffers


class Policy:
    def __init__(self, cfg: PolicyConfig, seed: int = 0, zero: bool = False):
        self.cfg = cfg
        self.params, self.buffers = init_policy_params(cfg, np.random.default_rng(seed), zero)
        self.mapnet = MapNet(self.params, self.buffers, cfg.spec, bn_mode=cfg.bn_mode, map_type=cfg.map_type)
        cells = ego_offsets(cfg.spec.m, cfg.spec.cell).reshape(-1, 2)
        self._cell_xy = cells.T.copy()  # (2, m*m) agent-frame coordinates

    # persistence
    def arrays(self) -> dict[str, np.ndarray]:
        out = P.to_arrays(self.params)
        out.update(P.to_arrays(self.buffers))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        both = dict(self.params)
        both.update(self.buffers)
        P.assign(both, arrays)

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # instruction
    def encode_instruction(self, tokens) -> tuple[Tensor, np.ndarray]:
        """Per-token features (L, 2*lstm) and the attention mask (False at padding)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise DomainError("instruction must contain at least one token")
        x = embedding_lookup(self._p("policy/instr/embed"), tokens)
        fwd = P.sub(self.params, "policy/instr/fwd")
        bwd = P.sub(self.params, "policy/instr/bwd")
        return bilstm(x, fwd, bwd), tokens != 0

    # observation encoders
    def _mlp(self, name: str, x: Tensor) -> Tensor:
        h = relu(linear(x, self._p(f"policy/{name}/l1/w"), self._p(f"policy/{name}/l1/b")))
        return relu(linear(h, self._p(f"policy/{name}/l2/w"), self._p(f"policy/{name}/l2/b")))

    def embed_rays(self, r_feat: np.ndarray, depth: np.ndarray) -> tuple[Tensor, Tensor]:
        r = Tensor(np.asarray(r_feat).reshape(-1))
        d = Tensor(np.asarray(depth) / self.cfg.max_range)
        return self._mlp("rgb", r), self._mlp("depth", d)

    def pool_features(self, M: Tensor) -> Tensor:
        x = M
        for k in (1, 2, 3):
            x = relu(conv2d(x, self._p(f"policy/pool/c{k}/w"), self._p(f"policy/pool/c{k}/b"), stride=2, padding=1))
        return mean(reshape(x, (x.shape[0], -1)), axis=1)

    def state_encode(self, M: Tensor, e_r: Tensor, e_d: Tensor, h_prev: Tensor) -> tuple[Tensor, Tensor]:
        x = concat([self.pool_features(M), e_r, e_d])
        h = gru_cell(x, h_prev, P.sub(self.params, "policy/gru1"))
        return h, h

    def attend_instruction(self, s: Tensor, I: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if mask is not None and not np.any(mask):
            raise DomainError("every instruction token is padding")
        q = matmul(self._p("policy/att/w"), s)
        return scaled_dot_attention(q, I, I, mask)

    def predict_localization(self, i_bar: Tensor, M: Tensor) -> Tensor:
        c, m, _ = M.shape
        flat = reshape(M, (c, m * m))
        q = matmul(self._p("policy/loc/w_q"), i_bar)
        if self.cfg.cosine:
            keys = matmul(self._p("policy/loc/w_k"), flat)  # (d, m*m)
            kn = exp(mul(log(sum_(keys * keys, axis=0) + 1e-12), 0.5))
            qn = exp(mul(log(sum_(q * q) + 1e-12), 0.5))
            logits = matmul(q, keys) / (kn * qn)
        else:
            u = matmul(q, self._p("policy/loc/w_k"))  # W_k^T W_q i_bar
            logits = matmul(u, flat)
        return reshape(softmax(logits, axis=0), (m, m))

    @staticmethod
    def pool_map(M: Tensor, p_hat: Tensor) -> Tensor:
        c, m, _ = M.shape
        return matmul(reshape(M, (c, m * m)), reshape(p_hat, (m * m,)))

    def fuse_state(self, m_bar: Tensor, i_bar: Tensor, s: Tensor, h2_prev: Tensor,
                   p_hat: Tensor | None = None) -> tuple[Tensor, Tensor]:
        parts = [m_bar, i_bar, s]
        if self.cfg.centroid:
            parts.append(matmul(Tensor(self._cell_xy), reshape(p_hat, (-1,))))
        h2 = gru_cell(concat(parts), h2_prev, P.sub(self.params, "policy/gru2"))
        return h2, h2

    def predict_heads(self, s2: Tensor) -> tuple[Tensor, Tensor]:
        w = linear(s2, self._p("policy/head/waypoint/w"), self._p("policy/head/waypoint/b"))
        p = sigmoid(linear(s2, self._p("policy/head/progress/w"), self._p("policy/head/progress/b")))
        return w, p

    def head_step(self, m_f: np.ndarray, r_feat: np.ndarray, depth: np.ndarray, instr: tuple[Tensor, np.ndarray],
                  h: Tensor, h2: Tensor) -> HeadOutput:
        M_f = Tensor(m_f)
        M_s = self.mapnet.hallucinate(M_f)
        M = self.mapnet.encode(M_f, M_s)
        e_r, e_d = self.embed_rays(r_feat, depth)
        s, h_new = self.state_encode(M, e_r, e_d, h)
        I, mask = instr
        i_bar = self.attend_instruction(s, I, mask)
        p_hat_map = self.predict_localization(i_bar, M)
        m_bar = self.pool_map(M, p_hat_map)
        s2, h2_new = self.fuse_state(m_bar, i_bar, s, h2, p_hat_map)
        w, p = self.predict_heads(s2)
        return HeadOutput(M_s, M, p_hat_map, i_bar, s, h_new, h2_new, w, p)

    def initial_state(self) -> AgentState:
        return AgentState(np.zeros(self.cfg.gru1, dtype=np.float32), np.zeros(self.cfg.gru2, dtype=np.float32))


# functional aliases


def encode_instruction(policy: Policy, tokens) -> Tensor:
    return policy.encode_instruction(tokens)[0]


def state_encode(policy: Policy, M, e_r, e_d, h_prev):
    return policy.state_encode(M, e_r, e_d, h_prev)


def attend_instruction(policy: Policy, s, I, mask=None):
    return policy.attend_instruction(s, I, mask)


def predict_localization(policy: Policy, i_bar, M):
    return policy.predict_localization(i_bar, M)


def pool_map(M, p_hat):
    return Policy.pool_map(M, p_hat)


def fuse_state(policy: Policy, m_bar, i_bar, s, h2_prev, p_hat=None):
    return policy.fuse_state(m_bar, i_bar, s, h2_prev, p_hat)


def predict_heads(policy: Policy, s2):
    return policy.predict_heads(s2)


# local controller


@dataclass
class LocalController:
    """Frozen point-goal controller: descends a geodesic field toward the waypoint.

    The aim point lies ``aim`` metres down the shortest grid path; the agent
    turns toward it when the bearing error exceeds ``tolerance_deg`` and
    moves forward otherwise.  Within ``arrive`` metres of the waypoint it
    turns in place while waiting for the next waypoint.
    """
    scene: object
    tolerance_deg: float = 15.0
    aim: float = 0.75
    arrive: float = 0.25
    _field: object = None
    _target: np.ndarray | None = None

    def set_target(self, world_xy: np.ndarray, from_xy: np.ndarray) -> None:
        self._target = np.asarray(world_xy, dtype=np.float64)
        xmin, ymin, xmax, ymax = self.scene.bounds
        t = np.clip(self._target, [xmin + 0.2, ymin + 0.2], [xmax - 0.2, ymax - 0.2])
        limit = 2.5 * float(np.linalg.norm(t - from_xy)) + 3.0
        try:
            snapped = self.scene.grid.centers(self.scene.grid.snap(t, radius=1.0))
            self._field = geodesic_field(self.scene, snapped, limit=limit, predecessors=True)
        except DomainError:
            self._field = None

    def action(self, pose: Pose) -> Action:
        p = np.array([pose.x, pose.y])
        tgt = self._target
        if tgt is None or np.linalg.norm(tgt - p) <= self.arrive:
            return Action.TURN_LEFT
        aim = tgt
        f = self._field
        if f is not None:
            try:
                path = f.path_from(p)
            except DomainError:
                path = None
            if path is not None and len(path) > 1:
                seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
                k = int(np.searchsorted(np.cumsum(seg), self.aim))
                aim = path[min(k + 1, len(path) - 1)]
                if np.linalg.norm(aim - p) < 1e-6:
                    aim = tgt
        err = wrap_angle(math.atan2(aim[1] - p[1], aim[0] - p[0]) - pose.theta)
        if abs(err) > math.radians(self.tolerance_deg):
            return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
        return Action.FORWARD


def act(agent: AgentState, pose: Pose, controller: LocalController, w_hat=None, p_hat: float | None = None,
        lambda_p: float = 0.8) -> tuple[Action, AgentState]:
    """Low-level action for this step.

    On a head step (``steps_since_replan == 0``) the caller passes fresh
    ``w_hat`` (agent frame) and ``p_hat``: progress above ``lambda_p`` stops
    the episode, otherwise the waypoint is stored in the world frame and
    handed to the controller.
    """
    if agent.steps_since_replan == 0:
        if p_hat is None or w_hat is None:
            raise ValueError("head step needs fresh w_hat and p_hat")
        if p_hat > lambda_p:
            return Action.STOP, replace(agent, p_hat=p_hat)
        wp = pose.to_world(np.asarray(w_hat, dtype=np.float64))
        controller.set_target(wp, np.array([pose.x, pose.y]))
        agent = replace(agent, waypoint=wp, p_hat=p_hat)
    return controller.action(pose), agent


def advance(agent: AgentState, replan_every: int = 3) -> AgentState:
    return replace(agent, steps_since_replan=(agent.steps_since_replan + 1) % replan_every)


__all__ = [
    "AgentState", "HeadOutput", "LocalController", "Policy", "PolicyConfig", "act", "advance",
    "attend_instruction", "encode_instruction", "fuse_state", "init_policy_params", "pool_map",
    "predict_heads", "predict_localization", "state_encode", "DimensionError",
]
