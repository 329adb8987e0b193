"""Small hand-built datasets shared by the unit tests."""
from pptrial.data import LongitudinalDataset

SCHEMA = [{"name": "B", "kind": "binary", "baseline": True}, {"name": "L", "kind": "continuous"}]


def subject_rows(sid, arm, outcomes, treatment=None, competing=None, ltfu_last=False, B=0, L=None):
    """Rows for one subject; ``outcomes`` is the per-visit outcome list."""
    rows = []
    K = len(outcomes)
    for k in range(K):
        rows.append({
            "subject_id": sid, "visit": k, "arm": arm,
            "treatment": arm if treatment is None else treatment[k],
            "outcome": outcomes[k], "competing": 0 if competing is None else competing[k],
            "ltfu": int(ltfu_last and k == K - 1), "B": B, "L": 0.0 if L is None else L[k],
        })
    return rows


def competing_fixture():
    """Hand fixture with a known Aalen-Johansen curve, identical in both arms.

    Per arm: 100 subjects. Visit 0: 5 outcomes, 5 competing events.
    Visit 1: 9 outcomes, 1 competing event among 90 at risk. Visit 2: 3
    outcomes among 80 at risk. Survivors are followed to visit 2.
    CI_Y = 0.05, 0.14, 0.17 and CI_D = 0.05, 0.06, 0.06.
    """
    rows = []
    for arm in (0, 1):
        i = 0

        def add(outcomes, competing):
            nonlocal i
            rows.extend(subject_rows(f"a{arm}s{i:03d}", arm, outcomes, competing=competing))
            i += 1

        for _ in range(5):
            add([1], [0])
        for _ in range(5):
            add([0], [1])
        for _ in range(9):
            add([0, 1], [0, 0])
        add([0, 0], [0, 1])
        for _ in range(3):
            add([0, 0, 1], [0, 0, 0])
        for _ in range(77):
            add([0, 0, 0], [0, 0, 0])
    return LongitudinalDataset.from_records(rows, SCHEMA)


def snmm_fixture(n=4000, K=5, psi=0.3, seed=11):
    """Continuous end-of-follow-up outcome with additive blips.

    ``L`` is autocorrelated and confounds treatment; ``Y = psi * (treated
    visits) + sum(L) / 2 + noise``, so each treated visit shifts the outcome by
    exactly ``psi``.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    arm = rng.integers(0, 2, n)
    L = np.zeros((n, K))
    A = np.zeros((n, K))
    prev = np.zeros(n)
    for k in range(K):
        L[:, k] = 0.5 * prev + rng.normal(size=n)
        A[:, k] = rng.random(n) < 1 / (1 + np.exp(-(-0.3 + 0.8 * arm + 1.0 * L[:, k])))
        prev = L[:, k]
    Y = psi * A.sum(1) + 0.5 * L.sum(1) + 0.5 * rng.normal(size=n)
    schema = [{"name": "L", "kind": "continuous"}, {"name": "Y", "kind": "continuous"}]
    rows = [{"subject_id": f"s{i}", "visit": k, "arm": int(arm[i]), "treatment": int(A[i, k]), "outcome": 0,
             "competing": 0, "ltfu": 0, "L": L[i, k], "Y": Y[i]} for i in range(n) for k in range(K)]
    return LongitudinalDataset.from_records(rows, schema)
