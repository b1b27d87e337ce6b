#!/usr/bin/env python3
"""Directional decomposition of the capability rate on an easy and a plateaued task.

Both tasks are probed along the same parameter direction. On the plateau the
capability slope C_task vanishes and with it term_2, leaving only term_1.
"""

from arspo_lab.envs import expected_capability, uniform_capability
from arspo_lab.verify import plateau_pair, plateau_witness


def main():
    easy, hard, policy = plateau_pair()
    for env in (easy, hard):
        H, g = expected_capability(policy, env)
        print(f"{env.name}: H={H:.4f} (uniform {uniform_capability(env):.4f}) |grad H|={(g @ g) ** 0.5:.3e}")
    for name, rd in plateau_witness().items():
        d = rd.to_dict()
        print(name, " ".join(f"{k}={v:.3e}" for k, v in d.items()))


if __name__ == "__main__":
    main()
