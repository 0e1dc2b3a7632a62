"""Published reference values used as targets and synthetic generators.

Masks are ``(tau_m, v_th, v_rest, r_mem)`` trainability flags. Rewards are
(mean, std) over five seeds on the Brax tasks HalfCheetah, Ant, Hopper and
Walker2d.
"""

from __future__ import annotations

ABLATION_TASKS = ("halfcheetah", "ant", "hopper", "walker2d")

ABLATION = {
    (1, 0, 0, 0): ((3967, 171), (1180, 200), (1796, 9), (2580, 351)),
    (0, 1, 0, 0): ((101, 24), (431, 18), (399, 12), (750, 254)),
    (0, 0, 1, 0): ((3544, 236), (680, 19), (1502, 9), (2286, 549)),
    (0, 0, 0, 1): ((3264, 528), (732, 60), (1654, 29), (2143, 551)),
    (1, 1, 0, 0): ((3110, 749), (1046, 11), (1982, 154), (2866, 402)),
    (1, 0, 1, 0): ((3887, 637), (1160, 215), (2016, 94), (2184, 669)),
    (1, 0, 0, 1): ((3460, 331), (953, 50), (2031, 13), (3140, 216)),
    (0, 1, 1, 0): ((3335, 248), (765, 172), (448, 89), (2880, 174)),
    (0, 1, 0, 1): ((2679, 406), (838, 14), (1771, 12), (2674, 99)),
    (0, 0, 1, 1): ((3587, 193), (457, 413), (1902, 9), (2286, 549)),
    (1, 1, 1, 0): ((3924, 342), (967, 57), (1914, 21), (2431, 19)),
    (1, 1, 0, 1): ((3724, 472), (1119, 85), (1828, 15), (2880, 174)),
    (1, 0, 1, 1): ((3982, 319), (1276, 18), (1943, 34), (2779, 73)),
    (0, 1, 1, 1): ((3214, 204), (978, 21), (1790, 26), (2529, 38)),
    (1, 1, 1, 1): ((4221, 413), (1221, 35), (2142, 27), (2699, 404)),
}


def ablation_values(task: str, empty_value: float = 0.0) -> tuple[dict, dict]:
    """Coalition means and stds for one task, with ``v(empty)`` supplied."""
    j = ABLATION_TASKS.index(task)
    means = {(0, 0, 0, 0): float(empty_value)}
    stds = {}
    for mask, cols in ABLATION.items():
        means[mask] = float(cols[j][0])
        stds[mask] = float(cols[j][1])
    return {tuple(bool(b) for b in m): v for m, v in means.items()}, {
        tuple(bool(b) for b in m): v for m, v in stds.items()
    }


# Membrane time constant fits (ms), location fixed at 0: (shape, scale).
TAU_FITS = {
    "gamma": {
        "halfcheetah": (1.46, 14.6), "ant": (1.85, 11.7), "hopper": (2.20, 10.0),
        "walker2d": (1.85, 11.8), "mouse_v1": (1.64, 13.4), "human_mtg": (3.18, 9.11),
    },
    "lognormal": {
        "halfcheetah": (0.26, 20.6), "ant": (0.28, 20.7), "hopper": (0.30, 20.9),
        "walker2d": (0.28, 20.8), "mouse_v1": (0.27, 21.1), "human_mtg": (0.33, 27.3),
    },
}

# CartPole-v1 BPTT learning-rate search: mean reward by (target, max_steps, lr).
SEARCH_LR = {
    ("weight", 100): {1e-3: 55.7, 1e-2: 84.3, 3e-2: 81.2, 0.1: 90.2, 0.3: 39.9},
    ("weight", 200): {1e-3: 64.7, 1e-2: 124.6, 3e-2: 127.3, 0.1: 146.1, 0.3: 94.6},
    ("weight", 500): {1e-3: 52.3, 1e-2: 161.5, 3e-2: 183.7, 0.1: 201.1, 0.3: 34.6},
    ("weight", 1000): {1e-3: 52.9, 1e-2: 114.8, 3e-2: 190.7, 0.1: 228.3, 0.3: 40.6},
    ("neuron", 100): {1e-3: 46.9, 1e-2: 55.4, 3e-2: 55.3, 0.1: 62.2, 0.3: 50.4},
    ("neuron", 200): {1e-3: 55.42, 1e-2: 63.9, 3e-2: 62.3, 0.1: 63.1, 0.3: 57.6},
    ("neuron", 500): {1e-3: 60.0, 1e-2: 73.4, 3e-2: 63.5, 0.1: 74.4, 0.3: 61.0},
    ("neuron", 1000): {1e-3: 50.4, 1e-2: 73.9, 3e-2: 76.4, 0.1: 80.5, 0.3: 62.9},
}

LR_GRID = (1e-3, 1e-2, 3e-2, 0.1, 0.3)
SURROGATE_ALPHA_GRID = (0.5, 1.0, 2.0, 4.0)
