"""Multi-granularity maps.

Observations accumulate in a world-frame :class:`AllocentricBuffer`; each
step the buffer is re-rendered as an egocentric ``m x m`` view.  All map
tensors are channel-first ``(C, m, m)``.  Egocentric cell ``(i, j)`` has its
center at ``x = (m//2 - i) * cell`` metres ahead of the agent and
``y = (m//2 - j) * cell`` metres to its left, so row 0 is the far front edge,
column 0 the far left edge and the agent sits in cell ``(m//2, m//2)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import params as P
from .geometry import Pose
from .tensor import DimensionError, Tensor, batch_norm, concat, conv2d, cross_entropy_per_pixel, relu
from .tensor import softmax, transpose_conv2d


@dataclass(frozen=True)
class MapSpec:
    m: int = 100
    cell: float = 0.12
    c_f: int = 8
    c_s: int = 8
    c: int = 32

    @property
    def center(self) -> int:
        return self.m // 2


@lru_cache(maxsize=8)
def ego_offsets(m: int, cell: float) -> np.ndarray:
    """Agent-frame (forward, left) coordinates of every egocentric cell center, shape (m, m, 2)."""
    k = m // 2 - np.arange(m)
    fwd, left = np.meshgrid(k * cell, k * cell, indexing="ij")
    return np.stack([fwd, left], axis=-1)


def ego_cell(spec: MapSpec, local) -> tuple[int, int]:
    """Egocentric cell containing an agent-frame point (may fall outside the map)."""
    x, y = float(local[0]), float(local[1])
    return spec.center - int(math.floor(x / spec.cell + 0.5)), spec.center - int(math.floor(y / spec.cell + 0.5))


@dataclass
class AllocentricBuffer:
    origin: np.ndarray
    cell: float
    shape: tuple[int, int]
    c_f: int
    feat: np.ndarray = field(init=False)
    count: np.ndarray = field(init=False)
    gt: np.ndarray = field(init=False)
    free: np.ndarray = field(init=False)
    dropped: int = 0

    def __post_init__(self):
        h, w = self.shape
        self.feat = np.zeros((h, w, self.c_f), dtype=np.float32)
        self.count = np.zeros((h, w), dtype=np.int64)
        self.gt = np.full((h, w), -1, dtype=np.int64)
        self.free = np.zeros((h, w), dtype=bool)

    @classmethod
    def for_bounds(cls, bounds, cell: float = 0.12, c_f: int = 8, margin: int = 1) -> "AllocentricBuffer":
        xmin, ymin, xmax, ymax = bounds
        origin = np.array([xmin - margin * cell, ymin - margin * cell])
        shape = (int(math.ceil((xmax - xmin) / cell - 1e-9)) + 2 * margin,
                 int(math.ceil((ymax - ymin) / cell - 1e-9)) + 2 * margin)
        return cls(origin, cell, shape, c_f)

    def copy(self) -> "AllocentricBuffer":
        b = AllocentricBuffer(self.origin.copy(), self.cell, self.shape, self.c_f)
        b.feat, b.count, b.gt, b.free = self.feat.copy(), self.count.copy(), self.gt.copy(), self.free.copy()
        b.dropped = self.dropped
        return b

    def cell_of(self, pts) -> np.ndarray:
        return np.floor((np.asarray(pts, dtype=np.float64) - self.origin) / self.cell).astype(np.int64)

    def inside(self, idx) -> np.ndarray:
        return (idx[..., 0] >= 0) & (idx[..., 0] < self.shape[0]) & (idx[..., 1] >= 0) & (idx[..., 1] < self.shape[1])

    @property
    def observed(self) -> np.ndarray:
        return (self.count > 0) | self.free


def project_observation(buf: AllocentricBuffer, pose: Pose, obs) -> int:
    """Write one scan into ``buf``; returns the number of feature writes.

    Hit points are binned to world cells.  A cell's feature is the
    element-wise max over everything written to it (the first write sets
    it), its ground-truth category is that of the latest hit, and cells the
    ray crossed before its hit are marked observed-free.  Hits landing
    outside the buffer are counted in ``buf.dropped``.
    """
    ang = pose.theta + np.asarray(obs.angles)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    o = np.array([pose.x, pose.y])
    depth = np.asarray(obs.D, dtype=np.float64)

    # free space along each ray, stopping half a cell short of the hit
    step = buf.cell / 2
    reach = np.where(obs.hit, depth - step, depth)
    n_s = int(math.ceil(depth.max() / step)) + 1
    ts = np.arange(n_s) * step
    pts = o + ts[None, :, None] * dirs[:, None, :]
    ok = ts[None, :] <= reach[:, None]
    idx = buf.cell_of(pts[ok])
    idx = idx[buf.inside(idx)]
    buf.free[idx[:, 0], idx[:, 1]] = True

    rays = np.flatnonzero(obs.hit)
    if len(rays) == 0:
        return 0
    hits = o + (depth[rays] + 1e-6)[:, None] * dirs[rays]
    idx = buf.cell_of(hits)
    inside = buf.inside(idx)
    buf.dropped += int((~inside).sum())
    rays, idx = rays[inside], idx[inside]
    if len(rays) == 0:
        return 0
    flat = idx[:, 0] * buf.shape[1] + idx[:, 1]
    order = np.argsort(flat, kind="stable")
    flat_s = flat[order]
    starts = np.flatnonzero(np.r_[True, flat_s[1:] != flat_s[:-1]])
    cells = flat_s[starts]
    fmax = np.maximum.reduceat(np.asarray(obs.R_feat, dtype=np.float32)[rays[order]], starts, axis=0)
    ends = np.r_[starts[1:], len(flat_s)] - 1
    last_cat = np.asarray(obs.cat_gt)[rays[order][ends]]
    counts = np.diff(np.r_[starts, len(flat_s)])
    ci, cj = cells // buf.shape[1], cells % buf.shape[1]
    fresh = buf.count[ci, cj] == 0
    cur = buf.feat[ci, cj]
    buf.feat[ci, cj] = np.where(fresh[:, None], fmax, np.maximum(cur, fmax))
    buf.count[ci, cj] += counts
    buf.gt[ci, cj] = last_cat
    return int(len(rays))


def render_egocentric(buf: AllocentricBuffer, pose: Pose, spec: MapSpec, bilinear: bool = False):
    """Egocentric crops ``(M_f (c_f, m, m), gt (m, m), observed (m, m))``; outside the buffer is zero/unknown."""
    world = pose.to_world(ego_offsets(spec.m, spec.cell))
    g = (world - buf.origin) / buf.cell
    idx = np.floor(g).astype(np.int64)
    ok = buf.inside(idx)
    ci = np.where(ok, idx[..., 0], 0)
    cj = np.where(ok, idx[..., 1], 0)
    gt = np.where(ok, buf.gt[ci, cj], -1)
    observed = ok & buf.observed[ci, cj]
    if not bilinear:
        feat = np.where(ok[..., None], buf.feat[ci, cj], 0.0)
    else:
        u = g - 0.5
        i0 = np.floor(u).astype(np.int64)
        fr = u - i0
        feat = np.zeros((spec.m, spec.m, buf.c_f))
        for di in (0, 1):
            for dj in (0, 1):
                ii, jj = i0[..., 0] + di, i0[..., 1] + dj
                w = (fr[..., 0] if di else 1 - fr[..., 0]) * (fr[..., 1] if dj else 1 - fr[..., 1])
                inb = buf.inside(np.stack([ii, jj], axis=-1))
                val = buf.feat[np.where(inb, ii, 0), np.where(inb, jj, 0)]
                feat += np.where(inb[..., None], w[..., None] * val, 0.0)
    return np.ascontiguousarray(feat.transpose(2, 0, 1), dtype=np.float32), gt, observed


# learned parts


def init_mapping_params(rng: np.random.Generator, spec: MapSpec, zero: bool = False,
                        prefix: str = "policy/map") -> tuple[dict, dict]:
    """Hallucination network and map encoder parameters, plus batch-norm running buffers."""
    p, buffers = {}, {}

    def conv(name, co, ci, k, bn=True):
        p[f"{prefix}/{name}/w"] = P.he(rng, (co, ci, k, k), ci * k * k, zero)
        p[f"{prefix}/{name}/b"] = P.zeros((co,))
        if bn:
            p[f"{prefix}/{name}/gamma"] = P.ones((co,), zero)
            p[f"{prefix}/{name}/beta"] = P.zeros((co,))
            buffers[f"{prefix}/{name}/running_mean"] = np.zeros(co, dtype=np.float32)
            buffers[f"{prefix}/{name}/running_var"] = np.ones(co, dtype=np.float32)

    def tconv(name, ci, co, k):
        p[f"{prefix}/{name}/w"] = P.he(rng, (ci, co, k, k), ci * k * k // 4, zero)
        p[f"{prefix}/{name}/b"] = P.zeros((co,))
        p[f"{prefix}/{name}/gamma"] = P.ones((co,), zero)
        p[f"{prefix}/{name}/beta"] = P.zeros((co,))
        buffers[f"{prefix}/{name}/running_mean"] = np.zeros(co, dtype=np.float32)
        buffers[f"{prefix}/{name}/running_var"] = np.ones(co, dtype=np.float32)

    h = 8
    conv("hall/pre1", h, spec.c_f, 3)
    conv("hall/pre2", h, h, 3)
    conv("hall/pre3", h, h, 3)
    conv("hall/enc1", 2 * h, h, 3)
    conv("hall/enc2", 4 * h, 2 * h, 3)
    tconv("hall/dec1", 4 * h, 2 * h, 4)
    tconv("hall/dec2", 4 * h, h, 4)
    conv("hall/head", spec.c_s, 2 * h, 1, bn=False)
    conv("enc/fine", 16, spec.c_f, 3, bn=False)
    conv("enc/sem", 16, spec.c_s, 3, bn=False)
    conv("enc/fuse", spec.c, 32, 1, bn=False)
    return p, buffers


@dataclass
class MapNet:
    """Hallucination U-Net and multi-granularity encoder sharing one parameter dict.

    ``bn_mode`` "batch" normalises with the statistics of the current map
    (still updating the running buffers); "running" uses the buffers.
    ``map_type`` "fine" or "semantic" zeroes the other branch.
    """
    params: dict
    buffers: dict
    spec: MapSpec
    prefix: str = "policy/map"
    bn_mode: str = "batch"
    map_type: str = "multi"
    update_stats: bool = True

    def _cbr(self, x, name, stride=1, pad=1):
        q = f"{self.prefix}/{name}"
        y = conv2d(x, self.params[q + "/w"], self.params[q + "/b"], stride=stride, padding=pad)
        return self._bnr(y, q)

    def _bnr(self, y, q):
        y = batch_norm(y, self.params[q + "/gamma"], self.params[q + "/beta"], self.buffers[q + "/running_mean"],
                       self.buffers[q + "/running_var"], training=self.bn_mode == "batch",
                       update_stats=self.update_stats)
        return relu(y)

    def _up(self, x, name, like):
        q = f"{self.prefix}/{name}"
        y = transpose_conv2d(x, self.params[q + "/w"], self.params[q + "/b"], stride=2, padding=1)
        y = y[:, :like.shape[1], :like.shape[2]]
        return concat([self._bnr(y, q), like], axis=0)

    def hallucinate(self, m_f: Tensor) -> Tensor:
        """Per-cell category distribution (c_s, m, m) from the fine-grained map."""
        s = self.spec
        if m_f.shape != (s.c_f, s.m, s.m):
            raise DimensionError(f"hallucinate: M_f {m_f.shape} != {(s.c_f, s.m, s.m)}")
        x = self._cbr(m_f, "hall/pre1")
        x = self._cbr(x, "hall/pre2")
        x0 = self._cbr(x, "hall/pre3")
        e1 = self._cbr(x0, "hall/enc1", stride=2)
        e2 = self._cbr(e1, "hall/enc2", stride=2)
        d1 = self._up(e2, "hall/dec1", e1)
        d2 = self._up(d1, "hall/dec2", x0)
        q = f"{self.prefix}/hall/head"
        logits = conv2d(d2, self.params[q + "/w"], self.params[q + "/b"])
        return softmax(logits, axis=0)

    def encode(self, m_f: Tensor, m_s: Tensor) -> Tensor:
        """Fused map M (c, m, m)."""
        s = self.spec
        if m_f.shape != (s.c_f, s.m, s.m) or m_s.shape != (s.c_s, s.m, s.m):
            raise DimensionError(f"encode: M_f {m_f.shape}, M_s {m_s.shape} do not match {s}")
        q = self.prefix
        zeros = Tensor(np.zeros((16, s.m, s.m)))
        bf = relu(conv2d(m_f, self.params[q + "/enc/fine/w"], self.params[q + "/enc/fine/b"], padding=1)) \
            if self.map_type != "semantic" else zeros
        bs = relu(conv2d(m_s, self.params[q + "/enc/sem/w"], self.params[q + "/enc/sem/b"], padding=1)) \
            if self.map_type != "fine" else zeros
        return conv2d(concat([bf, bs], axis=0), self.params[q + "/enc/fuse/w"], self.params[q + "/enc/fuse/b"])


def hallucinate_semantics(m_f: Tensor, params: dict, buffers: dict, spec: MapSpec, **kw) -> Tensor:
    return MapNet(params, buffers, spec, **kw).hallucinate(m_f)


def encode_multigranularity(m_f: Tensor, m_s: Tensor, params: dict, spec: MapSpec, **kw) -> Tensor:
    return MapNet(params, {}, spec, **kw).encode(m_f, m_s)


def semantic_loss(m_s_pred: Tensor, gt_ego: np.ndarray) -> tuple[Tensor, bool]:
    """Mean per-cell cross-entropy over cells with known category; ``(loss, all_unknown)``."""
    if m_s_pred.shape[1:] != gt_ego.shape:
        raise DimensionError(f"semantic_loss: prediction {m_s_pred.shape} vs target {gt_ego.shape}")
    return cross_entropy_per_pixel(m_s_pred, gt_ego), not bool((gt_ego >= 0).any())


def semantic_accuracy(m_s_pred: np.ndarray, gt_ego: np.ndarray) -> tuple[int, int]:
    """(correct, total) argmax agreement over cells with known category."""
    known = gt_ego >= 0
    pred = np.argmax(np.asarray(m_s_pred), axis=0)
    return int((pred[known] == gt_ego[known]).sum()), int(known.sum())


# MGG1 grid dumps

GRID_MAGIC = b"MGG1"


def write_grid(path, grid: np.ndarray) -> None:
    """MGG1 dump of an (H, W) or channel-first (C, H, W) grid, stored H x W x C row-major."""
    a = np.asarray(grid, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    c, h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(a.transpose(1, 2, 0), dtype="<f4").tobytes())


def read_grid(path) -> np.ndarray:
    """Inverse of :func:`write_grid`; returns (C, H, W)."""
    buf = open(path, "rb").read()
    if buf[:4] != GRID_MAGIC or len(buf) < 16:
        raise ValueError(f"{path}: not an MGG1 grid")
    h, w, c = struct.unpack("<III", buf[4:16])
    n = h * w * c * 4
    if len(buf) != 16 + n:
        raise ValueError(f"{path}: expected {n} payload bytes, found {len(buf) - 16}")
    return np.frombuffer(buf[16:], dtype="<f4").reshape(h, w, c).transpose(2, 0, 1).copy()


__all__ = [
    "AllocentricBuffer", "MapNet", "MapSpec", "ego_cell", "ego_offsets", "encode_multigranularity",
    "hallucinate_semantics", "init_mapping_params", "project_observation", "read_grid", "render_egocentric",
    "semantic_accuracy", "semantic_loss", "write_grid",
]
