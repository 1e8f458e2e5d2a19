"""Shared fixtures: the 1D chain instance and randomized problem generators."""

from __future__ import annotations

import numpy as np
import pytest

from augmi import (
    Action,
    GaussianDensity,
    LinearGaussianModel,
    StateLayout,
)

# Hand Schur-complement oracle for the 1D chain (prior N(0,1), new = x + w
# with unit noise, observation = new + v with unit noise): posterior
# covariance of (x, new) given z is [[2/3, 1/3], [1/3, 2/3]] with det 1/3,
# so MI = 0.5*ln(3) - 0.5*ln(2*pi*e).  Frozen:
CHAIN_MI = -0.8696323888706178

STD_NORMAL_LOGPDF_MODE = -0.9189385332046727  # -0.5*ln(2*pi)
GAUSS_ENTROPY_1D = 1.4189385332046727  # 0.5*ln(2*pi*e)


def make_chain_1d(q: float = 1.0, r: float = 1.0) -> tuple[GaussianDensity, Action]:
    layout = StateLayout.from_dims([("x", 1)])
    prior = GaussianDensity(layout=layout, mean=[0.0], covariance=[[1.0]])
    transition = LinearGaussianModel(
        inputs=("x",), output_dim=1, matrix=[[1.0]], noise_cov=[[q]]
    )
    observation = LinearGaussianModel(
        inputs=("a:x1",), output_dim=1, matrix=[[1.0]], noise_cov=[[r]]
    )
    action = Action(id="a", transitions=(transition,), observations=((1, observation),))
    return prior, action


@pytest.fixture
def chain():
    return make_chain_1d()


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    w = rng.standard_normal((dim, dim + 2))
    return scale * (w @ w.T / (dim + 2) + 0.3 * np.eye(dim))


def random_layout(rng: np.random.Generator, total_dim: int) -> StateLayout:
    dims = []
    remaining = total_dim
    while remaining > 0:
        d = int(rng.integers(1, min(3, remaining) + 1))
        dims.append(d)
        remaining -= d
    return StateLayout.from_dims((f"b{i}", d) for i, d in enumerate(dims))


def random_instance(
    rng: np.random.Generator,
    total_dim: int | None = None,
    involved_dim: int | None = None,
    two_steps: bool | None = None,
):
    """A randomized linear-Gaussian problem with a dense-correlation prior.

    Returns (prior, action, involved block-id set); the involved set is the
    exact footprint by construction (every chosen block appears in some
    model input).
    """
    if total_dim is None:
        total_dim = int(rng.integers(10, 151))
    if involved_dim is None:
        involved_dim = int(rng.integers(2, 7))
    layout = random_layout(rng, total_dim)

    # Dense correlations so discarding uninvolved blocks is a real test.
    cov = random_spd(rng, total_dim)
    prior = GaussianDensity(
        layout=layout, mean=rng.standard_normal(total_dim), covariance=cov
    )

    blocks = list(layout.blocks)
    rng.shuffle(blocks)
    involved = []
    used_dim = 0
    for block in blocks:
        if used_dim >= involved_dim:
            break
        involved.append(block)
        used_dim += block.dim
    involved_ids = [b.id for b in involved]

    if two_steps is None:
        two_steps = bool(rng.integers(0, 2))
    split = max(1, int(rng.integers(1, len(involved_ids) + 1)))
    trans_inputs = tuple(involved_ids[:split])
    obs_extra = tuple(involved_ids[split:])

    def model(input_ids: tuple[str, ...], input_dim: int, out_dim: int):
        return LinearGaussianModel(
            inputs=input_ids,
            output_dim=out_dim,
            matrix=rng.standard_normal((out_dim, input_dim)),
            noise_cov=random_spd(rng, out_dim, scale=float(rng.uniform(0.3, 1.2))),
        )

    def dims_of(ids, extra=0):
        return sum(layout.block(i).dim for i in ids if i in layout) + extra

    new1 = int(rng.integers(1, 3))
    transitions = [model(trans_inputs, dims_of(trans_inputs), new1)]
    new_ids = ["n:x1"]
    new_dims = {"n:x1": new1}
    if two_steps:
        step2_inputs = ("n:x1",) + trans_inputs[:1]
        new2 = int(rng.integers(1, 3))
        transitions.append(model(step2_inputs, new1 + dims_of(trans_inputs[:1]), new2))
        new_ids.append("n:x2")
        new_dims["n:x2"] = new2

    last_new = new_ids[-1]
    obs_inputs = (last_new,) + obs_extra
    obs_dim = int(rng.integers(1, 3))
    observations = [
        (
            len(transitions),
            model(obs_inputs, new_dims[last_new] + dims_of(obs_extra), obs_dim),
        )
    ]
    if rng.integers(0, 2):
        extra_inputs = (new_ids[0],) + trans_inputs[-1:]
        observations.append(
            (
                1,
                model(
                    extra_inputs,
                    new_dims[new_ids[0]] + dims_of(trans_inputs[-1:]),
                    int(rng.integers(1, 3)),
                ),
            )
        )

    action = Action(
        id="n",
        transitions=tuple(transitions),
        observations=tuple(observations),
        new_ids=tuple(new_ids),
    )
    action.validate_against(layout)
    return prior, action, set(involved_ids)


def random_plan_instance(rng: np.random.Generator, horizon: int = 2):
    """Small randomized planning instance: per-step candidate action lists.

    Step t actions all create the block ``x<t>`` (dim 1); transitions chain
    from the previous new block (the prior block 'b0' at step 1) and each
    action observes a different prior block with its own noise level.
    """
    total_dim = int(rng.integers(6, 31))
    layout = random_layout(rng, total_dim)
    prior = GaussianDensity(
        layout=layout,
        mean=rng.standard_normal(total_dim),
        covariance=random_spd(rng, total_dim),
    )
    block_ids = list(layout.ids)
    steps = []
    for t in range(1, horizon + 1):
        n_actions = int(rng.integers(2, 4))
        prev = "b0" if t == 1 else f"x{t-1}"
        prev_dim = layout.block("b0").dim if t == 1 else 1
        actions = []
        for k in range(n_actions):
            target = block_ids[int(rng.integers(0, len(block_ids)))]
            target_dim = layout.block(target).dim
            transition = LinearGaussianModel(
                inputs=(prev,),
                output_dim=1,
                matrix=rng.standard_normal((1, prev_dim)),
                noise_cov=[[float(rng.uniform(0.05, 0.5))]],
            )
            observation = LinearGaussianModel(
                inputs=(f"x{t}", target),
                output_dim=1,
                matrix=rng.standard_normal((1, 1 + target_dim)),
                noise_cov=[[float(rng.uniform(0.05, 1.0))]],
            )
            actions.append(
                Action(
                    id=f"s{t}{chr(97 + k)}",
                    transitions=(transition,),
                    observations=((1, observation),),
                    new_ids=(f"x{t}",),
                )
            )
        steps.append(actions)
    return prior, steps
