"""Smoke test for the pycutnmix extension module.

Build it first:

    cargo build --release -p cutnmix-py

then run `python3 python/smoke_test.py`. The script loads
target/release/libpycutnmix.so (or the path in PYCUTNMIX_LIB).
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    lib = os.environ.get("PYCUTNMIX_LIB")
    if lib is None:
        for profile in ("release", "debug"):
            for name in ("libpycutnmix.so", "libpycutnmix.dylib", "pycutnmix.dll"):
                cand = os.path.join(ROOT, "target", profile, name)
                if os.path.exists(cand):
                    lib = cand
                    break
            if lib:
                break
    if lib is None:
        sys.exit("pycutnmix not built; run `cargo build --release -p cutnmix-py`")
    tmp = tempfile.mkdtemp()
    ext = ".pyd" if lib.endswith(".dll") else ".so"
    target = os.path.join(tmp, "pycutnmix" + ext)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("pycutnmix", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def log_softmax(z, tau=1.0):
    z = np.asarray(z, dtype=np.float64) / tau
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def check_losses(m, rng):
    n, k = 6, 5
    logits = rng.normal(size=(n, k)) * 2
    teacher = rng.normal(size=(n, k)) * 2
    y = np.eye(k)[rng.integers(0, k, n)]
    y2 = np.eye(k)[rng.integers(0, k, n)]
    lam = 0.3
    targets = lam * y + (1 - lam) * y2

    ce = m.soft_ce(logits.tolist(), targets.tolist())
    ref = -(targets * log_softmax(logits)).sum(axis=1).mean()
    assert math.isclose(ce, ref, rel_tol=1e-10), (ce, ref)

    tau = 3.0
    kl = m.kd_kl(logits.tolist(), teacher.tolist(), tau)
    q = np.exp(log_softmax(teacher, tau))
    ref = tau**2 * (q * (log_softmax(teacher, tau) - log_softmax(logits, tau))).sum(axis=1).mean()
    assert math.isclose(kl, ref, rel_tol=1e-10), (kl, ref)
    assert m.kd_kl(logits.tolist(), logits.tolist(), tau) < 1e-12
    assert math.isclose(m.pt_loss(logits.tolist(), teacher.tolist(), tau), kl, rel_tol=1e-12)

    peers = [rng.normal(size=(n, k)).tolist() for _ in range(3)]
    dml = m.dml_loss(peers, 0, tau)
    ref = np.mean([m.kd_kl(peers[0], peers[j], tau) for j in (1, 2)])
    assert math.isclose(dml, ref, rel_tol=1e-12)

    feats = [rng.normal(size=(n, 4)) for _ in range(3)]
    mmd = m.mmd_loss([f.tolist() for f in feats], 1)
    mu = [f.mean(axis=0) for f in feats]
    ref = sum(((mu[1] - mu[j]) ** 2).sum() for j in (0, 2)) / 2
    assert math.isclose(mmd, ref, rel_tol=1e-10), (mmd, ref)

    assert math.isclose(m.total_loss(1.0, 2.0, 3.0, 4.0, alpha=0.5, beta=0.25, gamma=0.1), 3.15)


def check_mixing(m, rng):
    n, side = 5, 32
    plan = m.MixPlan.sample(n, side, side, 3, 42)
    again = m.MixPlan.sample(n, side, side, 3, 42)
    assert plan.lam == again.lam and plan.perm == again.perm and plan.masks == again.masks
    assert 0.0 <= plan.lam <= 1.0
    assert sorted(plan.perm) == list(range(n))
    assert len(plan.masks) == 3 and all(len(p) == n for p in plan.masks)

    labels = rng.integers(0, 10, n).tolist()
    views = [rng.normal(size=(n, 3, side, side)).astype(np.float32) for _ in range(3)]
    mixed = plan.apply([v.ravel().tolist() for v in views], (n, 3, side, side), labels, 10)
    soft = plan.soft_labels(labels, 10)
    for j, (pixels, lab) in enumerate(mixed):
        assert lab == soft
        px = np.array(pixels, dtype=np.float32).reshape(n, 3, side, side)
        for i, (x0, y0, w, h) in enumerate(plan.masks[j]):
            src = plan.perm[i]
            inside = px[i, :, y0 : y0 + h, x0 : x0 + w]
            assert np.array_equal(inside, views[j][src, :, y0 : y0 + h, x0 : x0 + w])
            assert abs(w * h / side**2 - plan.lam) <= 0.07
    for row in soft:
        assert math.isclose(sum(row), 1.0) and sum(1 for p in row if p > 0) <= 2


def check_models(m):
    s = m.PeerStudent("tiny-cnn", 10, 7)
    assert s.checksum() == m.PeerStudent("tiny-cnn", 10, 7).checksum()
    assert s.checksum() != m.PeerStudent("tiny-cnn", 10, 8).checksum()
    x = np.random.default_rng(0).normal(size=(2, 3, 32, 32)).astype(np.float32)
    feats, logits = s.forward(x.ravel().tolist(), x.shape)
    assert len(feats) == 2 and len(feats[0]) == s.feature_dim
    assert len(logits) == 2 and len(logits[0]) == 10
    assert s.num_parameters > 0
    try:
        m.PeerStudent("resnet-7", 10, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("bad architecture accepted")


def check_data_and_schedule(m):
    tr_px, tr_lab, te_px, te_lab = m.make_synthetic(10, 40, 20, 1)
    assert len(tr_px) == 40 * 3072 and len(tr_lab) == 40
    assert len(te_px) == 20 * 3072 and len(te_lab) == 20
    assert set(tr_lab) == set(range(10))
    assert m.lr_at(0) > 0
    assert math.isclose(m.lr_at(5, lr0=0.1, milestones=[2, 4], decay_factor=0.1, max_epochs=10), 0.001)
    try:
        m.lr_at(10, max_epochs=10)
    except ValueError:
        pass
    else:
        raise AssertionError("epoch past the schedule accepted")
    assert m.run_cli(["frobnicate"]) == 2


def main():
    m = load_module()
    rng = np.random.default_rng(1)
    check_losses(m, rng)
    check_mixing(m, rng)
    check_models(m)
    check_data_and_schedule(m)
    print("pycutnmix smoke test passed")


if __name__ == "__main__":
    main()
