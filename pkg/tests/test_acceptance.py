"""Acceptance suite: one test per shipped criterion, at the stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line
per criterion. The end-to-end suite is fixed-seed and deterministic.
"""

import functools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from diffrecon.acquisition import (
    MaskSpec,
    PhantomSpec,
    make_mask,
    phantom_image,
    simulate_kspace,
    synth_coils,
)
from diffrecon.coils import spectral_smooth, zf_coil_init
from diffrecon.core import CoilSet, KSpaceData, RealImage, Rng, SamplingMask
from diffrecon.diffusion import ExpSchedule, GaussianMixtureScore, GaussianScore, SigmaSchedule
from diffrecon.evaluation import nullspace_residual, psnr, zf_reconstruct
from diffrecon.forward_model import adjoint_lin, data_fidelity, forward, grad_coils, grad_image
from diffrecon.presets import FULL_SCALE_TABLE, desk_recon_config
from diffrecon.sampler import CropGeometry, ReconConfig, crop_center, reconstruct, sample_prior

ARTIFACTS = Path(__file__).resolve().parents[1] / "trainer" / "artifacts"


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
        return wrapper
    return deco


@criterion("adjoint identity")
def test_adjoint_identity():
    start = time.perf_counter()
    g = np.random.default_rng(0)
    worst = 0.0
    for trial in range(20):
        ncoils = (1, 2, 4)[trial % 3]
        shape = (32, 24)
        x = RealImage(g.standard_normal(shape))
        stack = g.standard_normal((ncoils, *shape)) + 1j * g.standard_normal((ncoils, *shape))
        stack += 0.5 * np.sign(stack.real) + 0.5j * np.sign(stack.imag)
        coils = CoilSet(stack)
        sel = g.random(shape) < 0.5
        sel[16, 12] = True
        mask = SamplingMask(sel)
        r_chan = np.where(sel, g.standard_normal((ncoils, *shape))
                          + 1j * g.standard_normal((ncoils, *shape)), 0)
        r = KSpaceData(r_chan, mask)
        ax = forward(x, coils, mask)
        lhs = np.sum(ax.channels * np.conj(r.channels)).real
        rhs = np.sum(x.data * adjoint_lin(r, coils).data)
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x.data) * np.linalg.norm(r.channels)))
    elapsed = time.perf_counter() - start
    assert worst < 1e-10, f"worst normalized adjoint mismatch {worst}"
    assert elapsed < 1.0, f"adjoint check took {elapsed:.2f} s"


@criterion("gradient oracles")
def test_gradient_oracles():
    start = time.perf_counter()
    g = np.random.default_rng(1)
    shape = (8, 6)
    ncoils = 3
    x = RealImage(g.standard_normal(shape))
    stack = g.standard_normal((ncoils, *shape)) + 1j * g.standard_normal((ncoils, *shape))
    stack += 0.5 * np.sign(stack.real) + 0.5j * np.sign(stack.imag)
    coils = CoilSet(stack)
    sel = g.random(shape) < 0.6
    sel[4, 3] = True
    mask = SamplingMask(sel)
    noise = np.where(sel, g.standard_normal((ncoils, *shape)) + 1j * g.standard_normal((ncoils, *shape)), 0)
    y = KSpaceData(forward(x, coils, mask).channels + noise, mask)
    h = 1e-6

    gi = grad_image(x, coils, y).data
    for _ in range(50):
        i, j = g.integers(0, shape[0]), g.integers(0, shape[1])
        xp, xm = x.data.copy(), x.data.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (data_fidelity(RealImage(xp), coils, y) - data_fidelity(RealImage(xm), coils, y)) / (2 * h)
        assert abs(fd - gi[i, j]) < 1e-6 * max(1.0, abs(fd))

    gc = grad_coils(x, coils, y).stack
    for _ in range(50):
        c = g.integers(0, ncoils)
        i, j = g.integers(0, shape[0]), g.integers(0, shape[1])
        part = g.integers(0, 2)
        delta = h if part == 0 else 1j * h
        sp, sm = coils.stack.copy(), coils.stack.copy()
        sp[c, i, j] += delta
        sm[c, i, j] -= delta
        fd = (data_fidelity(x, CoilSet(sp), y) - data_fidelity(x, CoilSet(sm), y)) / (2 * h)
        analytic = gc[c, i, j].real if part == 0 else gc[c, i, j].imag
        assert abs(fd - analytic) < 1e-5 * max(1.0, abs(fd))
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"gradient oracles took {elapsed:.2f} s"


@criterion("prox oracle")
def test_prox_oracle():
    def lap1d(n):
        L = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        L[0, 0] = L[-1, -1] = 1.0
        return L

    g = np.random.default_rng(2)
    for shape in [(8, 8), (16, 12), (32, 32)]:
        L = np.kron(lap1d(shape[0]), np.eye(shape[1])) + np.kron(np.eye(shape[0]), lap1d(shape[1]))
        u = g.standard_normal(shape)
        for mu in (1e-6, 1.0, 25.0):
            expect = np.linalg.solve(np.eye(L.shape[0]) + L / mu, u.ravel()).reshape(shape)
            got = spectral_smooth(u, mu)
            err = np.abs(got - expect).max()
            assert err < 1e-8, f"{shape}, mu={mu}: max abs error {err}"


@criterion("scale invariance")
def test_scale_invariance():
    g = np.random.default_rng(3)
    shape = (16, 12)
    x = RealImage(g.standard_normal(shape))
    stack = g.standard_normal((3, *shape)) + 1j * g.standard_normal((3, *shape))
    stack += 0.5 * np.sign(stack.real) + 0.5j * np.sign(stack.imag)
    coils = CoilSet(stack)
    sel = g.random(shape) < 0.5
    sel[8, 6] = True
    mask = SamplingMask(sel)
    base = forward(x, coils, mask).channels
    scale = max(1.0, np.abs(base).max())
    for gamma in (0.1, 2.0, 100.0):
        scaled = forward(x, CoilSet(gamma * coils.stack), mask).channels
        assert np.abs(scaled - base).max() < 1e-12 * scale


@criterion("analytic-prior sampling")
def test_analytic_prior_sampling():
    start = time.perf_counter()
    g = np.random.default_rng(0)
    m = g.random((8, 8))
    v = 0.04
    score = GaussianScore(m, np.full((8, 8), v))
    cfg = ReconConfig(n_steps=500, corrector_steps=1, snr=0.0075, sigma_min=0.01,
                      sigma_max=5.0, lambda_endpoints=(0.0, 0.0),
                      crop=CropGeometry(8, 8, 8, 8), seed=1)
    samples = sample_prior(score, cfg, Rng(31), batch=10_000)
    elapsed = time.perf_counter() - start

    mean = samples.mean(axis=0)
    var = samples.var(axis=0)
    se = np.sqrt(var / 10_000)
    target = v + cfg.sigma_min**2
    assert np.all(np.abs(mean - m) < 3 * se), \
        f"mean off by up to {float((np.abs(mean - m) / se).max()):.2f} SE"
    assert np.all(np.abs(var - target) < 0.10 * target), \
        f"variance off by up to {float(np.abs(var - target).max() / target):.3f} rel"
    assert elapsed < 300.0, f"prior sampling took {elapsed:.1f} s"


@criterion("schedule exactness")
def test_schedule_exactness():
    sig = SigmaSchedule(0.01, 378.0, 1000)
    assert sig.at_time(0.0) == 0.01
    assert abs(sig.at_time(1.0) - 378.0) < 1e-12 * 378.0
    for kind, (lam_n, lam_1, mu_n, mu_1) in FULL_SCALE_TABLE.items():
        lam = ExpSchedule(lam_n, lam_1, 1000)
        assert lam.at_index(1000) == lam_n and lam.at_index(1) == lam_1
        mu = ExpSchedule(mu_n, mu_1, 1000)
        assert mu.at_index(1000) == mu_n and mu.at_index(1) == mu_1
    # the quoted Cartesian PD endpoints, explicitly
    cart = ExpSchedule(0.56, 0.07, 1000)
    assert cart.at_index(1000) == 0.56 and cart.at_index(1) == 0.07


@criterion("null-space residual soundness")
def test_nullspace_soundness():
    shape = (24, 24)
    x = phantom_image(PhantomSpec(height=24, width=24, num_ellipses=8, seed=5))
    coils = synth_coils(shape, 3, seed=5)
    mask = SamplingMask(np.ones(shape))
    y_full = simulate_kspace(x, coils, mask, 0.0, Rng(5))
    _, res_true = nullspace_residual(y_full, coils)
    assert res_true < 1e-10, f"true-map residual {res_true}"
    g = np.random.default_rng(6)
    perturbed = CoilSet(coils.stack + 0.1 * (g.standard_normal(coils.stack.shape)
                                             + 1j * g.standard_normal(coils.stack.shape)))
    _, res_pert = nullspace_residual(y_full, perturbed)
    assert res_pert > 1e-3, f"perturbed-map residual {res_pert}"


# ------------------------------------------------------- end-to-end suite


def build_suite():
    H, W = 128, 96
    geom = CropGeometry(H, W, 64, 64)
    templates = [phantom_image(PhantomSpec(height=H, width=W, num_ellipses=10,
                                           seed=100 + k)).data for k in range(5)]
    v = 1e-4
    means = np.stack([crop_center(t, geom) for t in templates])
    score = GaussianMixtureScore(means, var=v)
    coils = synth_coils((H, W), 4, seed=11)
    masks = {
        "cartesian": make_mask((H, W), MaskSpec(kind="cartesian", acceleration=4, acs_fraction=0.08)),
        "gaussian": make_mask((H, W), MaskSpec(kind="gaussian", acceleration=4, seed=5)),
        "radial": make_mask((H, W), MaskSpec(kind="radial", spokes=45)),
    }
    return geom, templates, v, score, coils, masks


@criterion("end-to-end phantom property")
def test_end_to_end_phantom_suite():
    start = time.perf_counter()
    H, W = 128, 96
    geom, templates, v, score, coils, masks = build_suite()
    full = SamplingMask(np.ones((H, W)))
    failures = []
    for k in range(5):
        x_true = templates[k] + np.sqrt(v) * Rng(7 + k).normal((H, W))
        y_full = simulate_kspace(RealImage(x_true), coils, full, 0.0, Rng(80 + k))
        gt_crop = RealImage(crop_center(x_true, geom))
        for kind, mask in masks.items():
            y = simulate_kspace(RealImage(x_true), coils, mask, 0.0, Rng(90 + k))
            zf_val = psnr(RealImage(crop_center(zf_reconstruct(y).data, geom)), gt_crop)
            _, res_zf = nullspace_residual(y_full, zf_coil_init(y))
            cfg = desk_recon_config(kind)
            xr, cr = reconstruct(y, cfg, score)
            val = psnr(RealImage(crop_center(xr.data, geom)), gt_crop)
            _, res_est = nullspace_residual(y_full, cr)
            line = (f"case{k}/{kind}: psnr {val:.2f} (zf {zf_val:.2f}), "
                    f"nullspace {res_est:.3f} (zf-init {res_zf:.3f})")
            print("  " + line)
            if not (val >= zf_val + 3.0 and res_est <= res_zf):
                failures.append(line)
    elapsed = time.perf_counter() - start
    assert not failures, "failing cases:\n" + "\n".join(failures)
    assert elapsed < 900.0, f"suite took {elapsed:.0f} s"


@criterion("runtime scaling")
def test_runtime_scaling():
    H, W = 128, 96
    geom, templates, v, score, coils, masks = build_suite()
    x_true = templates[0] + np.sqrt(v) * Rng(7).normal((H, W))
    y = simulate_kspace(RealImage(x_true), coils, masks["gaussian"], 0.0, Rng(90))

    def run(n_steps):
        cfg = desk_recon_config("gaussian")
        cfg = ReconConfig(**{**cfg.__dict__, "n_steps": n_steps})
        t0 = time.perf_counter()
        reconstruct(y, cfg, score)
        return time.perf_counter() - t0

    run(50)  # warm caches before timing
    t_slow = run(1000)
    t_fast = run(200)
    ratio = t_fast / t_slow
    assert 0.2 * 0.7 <= ratio <= 0.2 * 1.3, \
        f"N=200/N=1000 runtime ratio {ratio:.3f} outside 0.2 +/- 30%"


@criterion("determinism")
def test_reconstruction_determinism(tmp_path):
    import hashlib
    from diffrecon.cli import main
    from diffrecon.core import write_array

    spec = {"phantom": {"height": 48, "width": 48, "num_coils": 2, "num_ellipses": 6, "seed": 3},
            "mask": {"kind": "cartesian", "acceleration": 4, "acs_fraction": 0.1},
            "noise_std": 0.0, "crop": [16, 16]}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    case = tmp_path / "case"
    assert main(["simulate", "--spec", str(spec_path), "--out", str(case)]) == 0

    from diffrecon.core import read_array
    gt = read_array(case / "phantom.tnsr")
    means = gt[16:32, 16:32][None]
    write_array(tmp_path / "means.tnsr", means)
    cfg = {"n_steps": 120, "sigma_max": 10.0, "lambda": [0.5, 0.05], "mu": [1e-3, 1.0],
           "crop": [16, 16], "seed": 5,
           "score": {"kind": "mixture", "means": str(tmp_path / "means.tnsr"), "var": 1e-3}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    digests = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                     "--config", str(cfg_path), "--out", str(out)]) == 0
        h = hashlib.sha256()
        h.update((out / "recon.tnsr").read_bytes())
        h.update((out / "coils_est.tnsr").read_bytes())
        digests.append(h.hexdigest())
    assert digests[0] == digests[1]


# -------------------------------------------------- secondary component


needs_trainer = pytest.mark.skipif(
    not (ARTIFACTS / "training_log.json").exists(),
    reason="trainer artifacts not built yet",
)


@needs_trainer
@criterion("trainer loss baseline")
def test_trainer_loss_baseline():
    log = json.loads((ARTIFACTS / "training_log.json").read_text())
    npix = log["crop_height"] * log["crop_width"]
    baseline = log["zero_net_baseline"]["mean_loss"]
    se = log["zero_net_baseline"]["standard_error"]
    assert abs(baseline - npix / 2) < 3 * se, \
        f"zero-net baseline {baseline} vs {npix / 2} (3 SE = {3 * se})"
    assert log["steps_run"] == 2000
    assert log["final_loss"] <= 0.8 * (npix / 2), \
        f"final loss {log['final_loss']} above 80% of {npix / 2}"


@needs_trainer
@criterion("cross-boundary oracle")
def test_cross_boundary_oracle():
    from diffrecon.core import read_array
    from diffrecon.scorenet import DeskScoreNet, load_weights, save_weights

    vec = json.loads((ARTIFACTS / "testvec" / "testvec.json").read_text())
    weights = load_weights(ARTIFACTS / vec["weights"])
    x = read_array(ARTIFACTS / "testvec" / vec["input"])
    expect = read_array(ARTIFACTS / "testvec" / vec["output"])
    got = DeskScoreNet(weights).evaluate(x, float(vec["sigma"]))
    rel = np.abs(got - expect).max() / max(np.abs(expect).max(), 1e-12)
    assert rel < 1e-4, f"cross-implementation relative error {rel}"

    # engine-side round trip of the trainer's file is bit exact per tensor
    back = Path(ARTIFACTS / "roundtrip.sdw1")
    save_weights(back, weights)
    again = load_weights(back)
    for name, arr in weights.tensors.items():
        assert again.tensors[name].tobytes() == arr.tobytes()
    back.unlink()
