"""Finite-difference and golden-trace verification suites behind ``arspo-lab verify``.

Each suite returns a list of check dicts ``{name, error, tolerance, passed, ...}``.
Closed forms are looked up through their modules at call time so a patched
implementation is what gets checked.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import dca, dynamics, envs, group_norm, objectives
from .policy import ParamLayout, PolicyModel
from .rewards import Exponential, Identity, NormalizedExponential

SUITES = ("jacobian", "gradients", "dynamics", "dca-golden")


def _check(name, error, tolerance, **extra) -> dict:
    error = float(error)
    return {"name": name, "error": error, "tolerance": float(tolerance),
            "passed": bool(error <= tolerance), **extra}


# -- jacobian ---------------------------------------------------------------

def fd_jacobian(rewards, h: float = 1e-6) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    G = len(rewards)
    jac = np.empty((G, G))
    for j in range(G):
        up, down = rewards.copy(), rewards.copy()
        up[j] += h
        down[j] -= h
        jac[:, j] = (group_norm.normalize_group(up).advantages
                     - group_norm.normalize_group(down).advantages) / (2 * h)
    return jac


def jacobian_suite(n_groups: int = 50, seed: int = 0) -> list[dict]:
    """Closed-form advantage Jacobian vs central differences.

    Entry error is |J - J_fd| / max(|J_fd|, 1/(G sigma)): relative, with the
    natural entry scale 1/(G sigma) as the floor for entries near zero.
    """
    rng = np.random.default_rng(seed)
    checks = []
    sizes = (2, 4, 8, 16)
    for n in range(n_groups):
        G = sizes[n % len(sizes)]
        rewards = rng.normal(0.0, rng.uniform(0.5, 2.0), size=G) + rng.uniform(-1, 1)
        group = group_norm.normalize_group(rewards)
        jac = group_norm.advantage_jacobian(group)
        fd = fd_jacobian(rewards)
        scale = 1.0 / (G * group.sigma)
        rel = np.abs(jac - fd) / np.maximum(np.abs(fd), scale)
        i, j = np.unravel_index(np.argmax(rel), rel.shape)
        checks.append(_check(f"group {n} (G={G}) finite-difference", rel[i, j], 1e-5,
                             entry=f"J[{i}][{j}]"))
        checks.append(_check(f"group {n} (G={G}) row sums", np.abs(jac.sum(axis=1)).max(), 1e-10))
        checks.append(_check(f"group {n} (G={G}) J.A", np.abs(jac @ rewards).max(),
                             1e-9 * np.linalg.norm(rewards)))
    return checks


# -- objective gradients ----------------------------------------------------

def random_toy_batch(rng: np.random.Generator, group_size: int = 6, shift: float = 0.3):
    """A random multi-task batch whose new and old policies differ, with random rewards."""
    env_list = [
        envs.classification_bandit("cls", classes=3, n_contexts=2, seed=int(rng.integers(1 << 30))),
        envs.span_selection("txt", vocab=5, picks=3, n_contexts=2, seed=int(rng.integers(1 << 30))),
        envs.interval_grid("vid", resolution=6, n_contexts=2, seed=int(rng.integers(1 << 30))),
    ]
    layout = ParamLayout.for_envs(env_list)
    policy = PolicyModel.init(layout, scale=0.5, seed=int(rng.integers(1 << 30)),
                              temperature=float(rng.uniform(0.7, 1.3)))
    policy.old_snapshot = policy.theta + shift * rng.standard_normal(layout.size)
    policy.reference = policy.theta + 0.5 * rng.standard_normal(layout.size)
    groups = []
    for env in env_list:
        for q in range(env.n_contexts):
            g = envs.sample_group(policy, env, q, group_size, rng=int(rng.integers(1 << 30)))
            norm = group_norm.normalize_group(rng.standard_normal(group_size))
            groups.append(dataclasses.replace(g, breakdowns=(), normalized=norm))
    raw = rng.uniform(0.5, 2.0, size=3)
    weights = dict(zip(["cls", "txt", "vid"], raw / raw.sum()))
    return objectives.Batch(groups, weights), policy


def _near_clip_boundary(batch, variant, margin=1e-3) -> bool:
    if variant.family == "sapo":
        return False
    hi, lo = 1 + variant.epsilon, 1 - variant.epsilon
    for g in batch.groups:
        r = g.ratios if variant.family == "grpo" else objectives.gspo_sequence_ratio(g.new_logp, g.old_logp)
        if np.any(np.abs(r - hi) < margin) or np.any(np.abs(r - lo) < margin):
            return True
    return False


def fd_gradient(batch, variant, coefficients, policy, h: float = 1e-5) -> np.ndarray:
    theta = policy.theta
    grad = np.empty_like(theta)
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (objectives.objective_value(batch, variant, coefficients, policy.with_theta(up))
                   - objectives.objective_value(batch, variant, coefficients, policy.with_theta(down))) / (2 * h)
    return grad


def gradient_suite(n_batches: int = 20, seed: int = 1) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []
    families = {
        "grpo": objectives.ObjectiveVariant("grpo", epsilon=0.2),
        "gspo": objectives.ObjectiveVariant("gspo", epsilon=0.2),
        "sapo": objectives.ObjectiveVariant("sapo", tau_pos=1.0, tau_neg=1.05),
    }
    for fam, base in families.items():
        for weighted in (False, True):
            label = f"{fam}{'+arspo' if weighted else ''}"
            for n in range(n_batches):
                while True:
                    batch, policy = random_toy_batch(rng)
                    if not _near_clip_boundary(batch, base):
                        break
                variant = dataclasses.replace(base, kl_beta=0.01 if n % 2 else 0.0)
                coef = ({t: float(rng.uniform(1.0, 4.0)) for t in batch.task_weights}
                        if weighted else None)
                analytic = objectives.objective_gradient(batch, variant, coef, policy)
                fd = fd_gradient(batch, variant, coef, policy)
                err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
                checks.append(_check(f"{label} batch {n}", err, 1e-5, kl_beta=variant.kl_beta))
    return checks


# -- dynamics ---------------------------------------------------------------

def rate_oracle(env, policy, direction, group, i, t, mapping, variant, h: float = 1e-4) -> float:
    """Central difference along v of [central difference along v of f(r_it)] * A_hat_i."""
    v = np.asarray(direction, dtype=float)

    def contribution(theta):
        p = policy.with_theta(theta)
        H, _ = envs.query_capability(p, env, group.query)
        adv = dynamics.focal_advantage(group, i, mapping, H).advantages[i]

        def f_at(th):
            lp = p.token_log_probs(env.name, group.query, group.actions, th)[i, t]
            return objectives.f_value(variant, math.exp(lp - group.old_logp[i, t]), adv)

        return (f_at(theta + h * v) - f_at(theta - h * v)) / (2 * h) * adv

    theta = policy.theta
    return (contribution(theta + h * v) - contribution(theta - h * v)) / (2 * h)


def random_smooth_configuration(rng: np.random.Generator):
    env_list = [
        envs.interval_grid("vid", resolution=8, n_contexts=2, seed=int(rng.integers(1 << 30))),
        envs.span_selection("txt", vocab=5, picks=2, n_contexts=2, seed=int(rng.integers(1 << 30))),
    ]
    layout = ParamLayout.for_envs(env_list)
    policy = PolicyModel.init(layout, scale=0.7, seed=int(rng.integers(1 << 30)),
                              temperature=float(rng.uniform(0.7, 1.3)))
    policy.old_snapshot = policy.theta + 0.3 * rng.standard_normal(layout.size)
    env = env_list[int(rng.integers(2))]
    q = int(rng.integers(env.n_contexts))
    G = int(rng.choice([4, 8]))
    group = envs.sample_group(policy, env, q, G, rng=int(rng.integers(1 << 30)))
    group = dataclasses.replace(group, metrics=rng.uniform(0, 1, size=G))
    mapping = [Exponential(3.0), NormalizedExponential(3.0)][int(rng.integers(2))]
    variant = objectives.ObjectiveVariant("sapo", tau_pos=float(rng.uniform(0.5, 2)),
                                          tau_neg=float(rng.uniform(0.5, 2)))
    v = rng.standard_normal(layout.size)
    v /= np.linalg.norm(v)
    return env, policy, v, group, int(rng.integers(G)), int(rng.integers(env.positions)), mapping, variant


def plateau_pair(resolution: int = 64, suppression: float = 25.0):
    """Easy 2-arm bandit at uniform init plus a 64-cell localization task stuck on a plateau.

    The hard policy pushes almost all start/end mass into the half of the grid
    that never overlaps the target, so its expected tIoU is flat in every direction.
    """
    from .metrics import Interval
    easy = envs.classification_bandit("easy", classes=2, n_contexts=1, labels=[0])
    target = Interval(resolution - 8, resolution - 4)
    hard = envs.interval_grid("hard", resolution=resolution, targets=[target])
    layout = ParamLayout.for_envs([easy, hard])
    theta = np.zeros(layout.size)
    block = theta[layout["hard"].slice].reshape(layout["hard"].shape)
    block[0, :, resolution // 2:] = -suppression
    policy = PolicyModel(layout, theta)
    policy.reference = theta.copy()
    policy.snapshot()
    return easy, hard, policy


def plateau_witness(seed: int = 3) -> dict:
    easy, hard, policy = plateau_pair()
    _, g_easy = envs.expected_capability(policy, easy)
    _, g_hard = envs.expected_capability(policy, hard)
    v = g_easy / np.linalg.norm(g_easy) + g_hard / np.linalg.norm(g_hard)
    v /= np.linalg.norm(v)
    variant = objectives.ObjectiveVariant("sapo")
    mapping = NormalizedExponential(3.0)
    out = {}
    for env, metrics in ((easy, [0, 1, 0, 1, 1, 0, 0, 1]),
                         (hard, [0.0, 0.1, 0.0, 0.25, 0.0, 0.5, 0.0, 0.2])):
        group = envs.sample_group(policy, env, 0, 8, rng=seed)
        group = dataclasses.replace(group, metrics=np.asarray(metrics, dtype=float))
        out[env.name] = dynamics.rate_decomposition(env, policy, v, group, 0, 0, mapping, variant)
    return out


def dynamics_suite(n_configs: int = 20, seed: int = 2) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []
    done = 0
    while done < n_configs:
        config = random_smooth_configuration(rng)
        env, policy, v, group, i, t, mapping, variant = config
        H, _ = envs.query_capability(policy, env, group.query)
        adv = dynamics.focal_advantage(group, i, mapping, H).advantages[i]
        if abs(adv) < 1e-3:  # SAPO temperature switches sign here
            continue
        rd = dynamics.rate_decomposition(*config)
        oracle = rate_oracle(*config)
        tol = max(1e-4, 1e-3 * abs(oracle))
        checks.append(_check(f"rate decomposition config {done}", abs(rd.total - oracle), tol,
                             total=rd.total, oracle=oracle))
        done += 1

    witness = plateau_witness()
    checks.append(_check("plateau: hard-task |term_2| < 1e-6", abs(witness["hard"].term_2), 1e-6))
    easy_t2 = abs(witness["easy"].term_2)
    checks.append({"name": "plateau: easy-task |term_2| > 1e-2", "error": easy_t2,
                   "tolerance": 1e-2, "passed": bool(easy_t2 > 1e-2)})

    # sensitivity profiles
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(0, 1, size=int(rng.choice([4, 8, 16])))
        worst = max(worst, abs(dynamics.sensitivity_profile(x, Identity()).max_to_mean - 1.0))
    checks.append(_check("identity profile max/mean = 1", worst, 0.0))
    misses = 0
    for _ in range(100):
        x = rng.uniform(0, 1, size=int(rng.choice([4, 8, 16])))
        prof = dynamics.sensitivity_profile(x, NormalizedExponential(3.0)).values
        best = int(np.argmax(x))
        others = np.delete(prof, best)
        misses += int(not np.all(prof[best] > others))
    checks.append(_check("convex profile: best response holds strict max", misses, 0))
    return checks


# -- dca golden traces ------------------------------------------------------

WORKED_EXAMPLE = {
    "tau_high": {"cls": 0.10, "loc": 0.50},
    "warmup": {"cls": 0.5, "loc": 0.2},
    "blocks": {"cls": [0.55, 0.55, 0.62], "loc": [0.21, 0.21, 0.19]},
    "expected": [{"cls": 1.0, "loc": 1.1}],
}


def _all_branch_expected():
    b, d = 1.1, 0.9
    img3 = 1.0 * b * b
    img4 = max(img3 * d, 1.0)
    txt4 = 1.0 * b * b
    txt5 = txt4 * b
    return [
        {"cls": 1.0, "img": 1.0 * b, "txt": 1.0},
        {"cls": 1.0, "img": img3, "txt": 1.0},
        {"cls": 1.0, "img": img3, "txt": 1.0 * b},
        {"cls": 1.0, "img": img4, "txt": txt4},
        {"cls": 1.0 * b, "img": max(img4 * d, 1.0), "txt": txt5},
        {"cls": 1.0 * b * b / (1.0 * b), "img": 1.0 * b / (1.0 * b), "txt": txt5 * b / (1.0 * b)},
    ]


ALL_BRANCHES = {
    "tau_high": {"cls": 0.10, "img": 0.50, "txt": 0.60},
    "warmup": {"cls": 0.5, "img": 0.2, "txt": 0.4},
    # 100-step block values after warm-up; block 1 covers steps 801..900
    "blocks": {
        "cls": [0.5, 0.5, 0.6, 0.56, 0.56, 0.56, 0.4, 0.25],
        "img": [0.2, 0.2, 0.2, 0.2, 0.4, 0.31, 0.31, 0.1],
        "txt": [0.4, 0.4, 0.41, 0.41, 0.25, 0.25, 0.25, 0.05],
    },
    "expected": _all_branch_expected(),
    "branches": [
        {"cls": "momentum", "img": "laggard", "txt": "none"},
        {"cls": "decay", "img": "laggard", "txt": "none"},
        {"cls": "decay", "img": "momentum", "txt": "rescue"},
        {"cls": "decay", "img": "decay", "txt": "laggard"},
        {"cls": "rescue", "img": "decay", "txt": "laggard"},
        {"cls": "rescue", "img": "rescue", "txt": "rescue"},
    ],
}


def run_golden(scenario: dict, config: dca.DcaConfig | None = None):
    """Feed the scenario's piecewise-constant streams through the scheduler.

    The worked example's blocks are the two past-window blocks and the current block.
    """
    config = config or dca.DcaConfig(tau_high=scenario["tau_high"])
    sched = dca.DcaScheduler(config)
    tasks = list(scenario["tau_high"])
    T = config.t_window
    n_blocks = len(next(iter(scenario["blocks"].values())))
    first_block_start = config.first_adjustment - 3 * T  # blocks start right after this step
    trajectory, branches = [], []
    for step in range(1, first_block_start + n_blocks * T + 1):
        if step <= first_block_start:
            means = scenario["warmup"]
        else:
            b = (step - first_block_start - 1) // T
            means = {k: scenario["blocks"][k][b] for k in tasks}
        events = sched.step(means)
        if events:
            trajectory.append(sched.coefficients)
            branches.append({e.task: e.branch for e in events})
    return trajectory, branches


def dca_golden_suite() -> list[dict]:
    checks = []
    for name, scenario in (("worked example", WORKED_EXAMPLE), ("all branches", ALL_BRANCHES)):
        trajectory, branches = run_golden(scenario)
        expected = scenario["expected"]
        mismatches = sum(t != e for t, e in zip(trajectory, expected)) + abs(len(trajectory) - len(expected))
        checks.append(_check(f"{name}: coefficient trajectory", mismatches, 0,
                             trajectory=trajectory))
        if "branches" in scenario:
            wrong = sum(b != e for b, e in zip(branches, scenario["branches"]))
            checks.append(_check(f"{name}: branch sequence", wrong, 0, branches=branches))
            fired = {br for step in branches for br in step.values()}
            missing = set(dca.BRANCHES) - fired
            checks.append(_check(f"{name}: every branch fired", len(missing), 0,
                                 missing=sorted(missing)))
    return checks


_SUITE_FUNCS = {
    "jacobian": jacobian_suite,
    "gradients": gradient_suite,
    "dynamics": dynamics_suite,
    "dca-golden": dca_golden_suite,
}


def run_suites(names) -> dict:
    report = {"schema_version": 1, "suites": {}}
    for name in names:
        start = time.perf_counter()
        checks = _SUITE_FUNCS[name]()
        report["suites"][name] = {
            "passed": all(c["passed"] for c in checks),
            "n_checks": len(checks),
            "failures": [c["name"] for c in checks if not c["passed"]],
            "seconds": round(time.perf_counter() - start, 3),
            "checks": checks,
        }
    report["passed"] = all(s["passed"] for s in report["suites"].values())
    return report
