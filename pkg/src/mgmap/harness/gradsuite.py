"""Finite-difference audit: every op plus an end-to-end pass through a small policy."""
from __future__ import annotations

import numpy as np

from ..mapping import MapSpec, semantic_loss
from ..navigator import Policy, PolicyConfig
from ..supervision import localization_loss, regression_losses, total_loss
from ..tensor import Tensor, precision
from ..tensor.gradcheck import GradResult, check_gradients, run_suite

TINY_SPEC = MapSpec(m=8, cell=0.5, c_f=4, c_s=3, c=6)


def tiny_policy_config(**kw) -> PolicyConfig:
    base = dict(vocab_size=7, spec=TINY_SPEC, n_rays=5, embed=4, lstm=3, gru1=8, gru2=8, enc_hidden=5,
                enc_out=4, pool=4, loc_dim=4)
    base.update(kw)
    return PolicyConfig(**base)


def policy_loss_fn(policy: Policy, rng: np.random.Generator, head_steps: int = 2):
    """Closure computing the mean unit-weighted training loss over ``head_steps`` recurrent head evaluations."""
    cfg = policy.cfg
    spec = cfg.spec
    m = spec.m
    tokens = np.array([1, 3, 5, 2, 0])
    inputs = []
    for _ in range(head_steps):
        P = rng.random((m, m)) + 0.1
        gt = rng.integers(-1, spec.c_s, size=(m, m))
        gt[0, 0] = 0
        inputs.append(dict(m_f=rng.random((spec.c_f, m, m)), r=rng.random((cfg.n_rays, spec.c_f)),
                           d=rng.random(cfg.n_rays) * cfg.max_range, P=P / P.sum(), gt=gt,
                           w=0.3 * rng.standard_normal(2), p=float(rng.random())))

    def fn() -> Tensor:
        instr = policy.encode_instruction(tokens)
        h = Tensor(np.zeros(cfg.gru1))
        h2 = Tensor(np.zeros(cfg.gru2))
        total = None
        for x in inputs:
            out = policy.head_step(x["m_f"], x["r"], x["d"], instr, h, h2)
            h, h2 = out.h, out.h2
            l_s, _ = semantic_loss(out.M_s, x["gt"])
            l_o = localization_loss(out.P_hat, x["P"])
            l_w, l_p = regression_losses(out.w_hat, x["w"], out.p_hat, x["p"])
            L = total_loss(l_s, l_o, l_p, l_w, 1.0, 1.0, 1.0)
            total = L if total is None else total + L
        return total * (1.0 / head_steps)

    return fn


def end_to_end_check(seed: int = 0, max_entries: int = 6, step: float = 1e-6, **cfg_kw) -> GradResult:
    """Gradient check of the loss with respect to every policy parameter (sampled entries).

    Unit loss weights keep the loss O(1) so cancellation error in the
    central differences stays far below the tolerance.
    """
    with precision(np.float64):
        policy = Policy(tiny_policy_config(**cfg_kw), seed=seed)
        rng = np.random.default_rng(seed)
        fn = policy_loss_fn(policy, rng)
        err = check_gradients(fn, policy.params, rng, step=step, max_entries=max_entries)
    return GradResult("policy_end_to_end", seed, err)


def full_suite(n_cases: int = 20, seed: int = 0) -> list[GradResult]:
    return run_suite(n_cases, seed) + [end_to_end_check(seed)]
