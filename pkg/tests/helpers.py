"""Shared fixtures-by-function for the test suite."""

import numpy as np

from dexkit.robot import CONTACT_LINKS, FINGER_LINKS, N_DOF, PALM_LINK
from dexkit.world import ContactReport


def fake_contacts(points=((0.0, 0.0, 0.0),), palm=True, fingers=4, functional=True):
    """Contact report with the palm and the first ``fingers`` fingers touching."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    touching = ({PALM_LINK} if palm else set()) | {f[-1] for f in FINGER_LINKS[:fingers]}
    flags = np.array([k in touching for k in CONTACT_LINKS])
    zi = np.zeros(n, dtype=np.int64)
    return ContactReport(flags, flags & functional, pts, np.tile([0, 0, 1.0], (n, 1)), np.zeros(n), np.zeros(n),
                         zi, zi, zi, zi, np.full(n, functional))


def approach_action(state, rng, noise=0.5, grip=None):
    """Move the palm toward the grasp point with noise; random or fixed finger targets."""
    a = np.zeros(N_DOF)
    d = state.grasp_point() - state.palm_pose().translation
    a[:3] = d / max(np.linalg.norm(d), 1e-9) + rng.normal(0, noise, 3)
    a[3:6] = rng.normal(0, 0.2, 3)
    a[6:] = rng.uniform(-1, 1, N_DOF - 6) if grip is None else grip
    return np.clip(a, -1, 1)
