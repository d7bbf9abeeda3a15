import json
import hashlib
import numpy as np
import pytest

from diffrecon.cli import main
from diffrecon.core import read_array


def write_spec(path, **overrides):
    spec = {
        "phantom": {"height": 32, "width": 32, "num_coils": 2, "num_ellipses": 6, "seed": 4},
        "mask": {"kind": "cartesian", "acceleration": 4, "acs_fraction": 0.1},
        "noise_std": 0.0,
        "crop": [16, 16],
    }
    for key, val in overrides.items():
        if isinstance(val, dict):
            spec[key].update(val)
        else:
            spec[key] = val
    path.write_text(json.dumps(spec))
    return spec


def sha_dir(d, names):
    h = hashlib.sha256()
    for n in names:
        h.update((d / n).read_bytes())
    return h.hexdigest()


def mixture_config(tmp_path, dataset):
    # a one-component analytic score built from the dataset's own phantom
    from diffrecon.core import write_array

    gt = read_array(dataset / "phantom.tnsr")
    means = gt[8:24, 8:24][None]
    mpath = tmp_path / "means.tnsr"
    write_array(mpath, means)
    cfg = {
        "n_steps": 60,
        "sigma_max": 10.0,
        "lambda": [0.5, 0.05],
        "mu": [1e-3, 1.0],
        "crop": [16, 16],
        "seed": 5,
        "score": {"kind": "mixture", "means": str(mpath), "var": 1e-3},
    }
    cpath = tmp_path / "recon_config.json"
    cpath.write_text(json.dumps(cfg))
    return cpath


def test_simulate_writes_dataset(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    out = tmp_path / "case"
    assert main(["simulate", "--spec", str(spec_path), "--out", str(out)]) == 0
    names = ["phantom.tnsr", "coils.tnsr", "mask.tnsr", "kspace_full.tnsr", "kspace_sub.tnsr"]
    for name in names + ["manifest.json"]:
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["spec"]["phantom"]["seed"] == 4


def test_simulate_deterministic_and_manifest_rerun(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    names = ["phantom.tnsr", "coils.tnsr", "mask.tnsr", "kspace_full.tnsr", "kspace_sub.tnsr"]
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--spec", str(spec_path), "--out", str(a)]) == 0
    assert main(["simulate", "--spec", str(spec_path), "--out", str(b)]) == 0
    assert sha_dir(a, names) == sha_dir(b, names)
    # rerun from the manifest reproduces the outputs byte-exactly
    assert main(["simulate", "--spec", str(a / "manifest.json"), "--out", str(c)]) == 0
    assert sha_dir(a, names) == sha_dir(c, names)


def test_simulate_rejects_invalid_spec(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path, phantom={"num_coils": 0})
    assert main(["simulate", "--spec", str(spec_path), "--out", str(tmp_path / "x")]) == 1


def test_simulate_train_stack(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    out = tmp_path / "train"
    assert main(["simulate", "--spec", str(spec_path), "--train-stack", "5",
                 "--out", str(out)]) == 0
    stack = read_array(out / "train_phantoms.tnsr")
    assert stack.shape == (5, 16, 16)
    assert stack.min() >= 0 and stack.max() <= 1


def test_reconstruct_zf_matches_library(tmp_path):
    from diffrecon.core import KSpaceData, SamplingMask
    from diffrecon.evaluation import zf_reconstruct

    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    out = tmp_path / "zf"
    assert main(["reconstruct", "--dataset", str(case), "--method", "zf",
                 "--out", str(out)]) == 0
    mask = SamplingMask(read_array(case / "mask.tnsr"))
    y = KSpaceData(read_array(case / "kspace_sub.tnsr"), mask)
    expect = zf_reconstruct(y)
    got = read_array(out / "recon.tnsr")
    assert np.array_equal(got, expect.data)


def test_reconstruct_diffusion_and_determinism(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    cfg = mixture_config(tmp_path, case)
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                 "--config", str(cfg), "--out", str(r1)]) == 0
    assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                 "--config", str(cfg), "--out", str(r2)]) == 0
    assert (r1 / "recon.tnsr").read_bytes() == (r2 / "recon.tnsr").read_bytes()
    assert (r1 / "coils_est.tnsr").read_bytes() == (r2 / "coils_est.tnsr").read_bytes()
    assert np.all(np.isfinite(read_array(r1 / "recon.tnsr")))
    # different seed changes the output
    r3 = tmp_path / "r3"
    assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                 "--config", str(cfg), "--seed", "9", "--out", str(r3)]) == 0
    assert (r1 / "recon.tnsr").read_bytes() != (r3 / "recon.tnsr").read_bytes()


def test_reconstruct_diffusion_requires_score(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                 "--out", str(tmp_path / "r")]) == 1


def test_reconstruct_missing_weights_is_io_error(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    assert main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                 "--weights", str(tmp_path / "missing.sdw1"),
                 "--out", str(tmp_path / "r")]) == 2


def test_reconstruct_tv_runs(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    cfg = tmp_path / "tv.json"
    cfg.write_text(json.dumps({"outer_iters": 10}))
    out = tmp_path / "tv"
    assert main(["reconstruct", "--dataset", str(case), "--method", "tv",
                 "--config", str(cfg), "--out", str(out)]) == 0
    assert np.all(np.isfinite(read_array(out / "recon.tnsr")))


def test_evaluate_metrics_schema_and_ranking(tmp_path):
    import jsonschema
    from pathlib import Path

    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    zf_out, diff_out = tmp_path / "zf", tmp_path / "diff"
    main(["reconstruct", "--dataset", str(case), "--method", "zf", "--out", str(zf_out)])
    cfg = mixture_config(tmp_path, case)
    main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
          "--config", str(cfg), "--out", str(diff_out)])
    metrics_path = tmp_path / "metrics.json"
    assert main(["evaluate", "--dataset", str(case), "--recon", str(zf_out), str(diff_out),
                 "--correct-intensity", "--out", str(metrics_path)]) == 0
    metrics = json.loads(metrics_path.read_text())

    schema = json.loads(
        (Path(__file__).resolve().parents[1] / "src" / "diffrecon" / "schemas"
         / "metrics.schema.json").read_text())
    jsonschema.validate(metrics, schema)
    by_method = {r["method"]: r for r in metrics["records"]}
    assert by_method["diffusion"]["psnr_db"] > by_method["zf"]["psnr_db"]


def test_evaluate_ground_truth_psnr_sentinel(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    # fake a "perfect" reconstruction: copy the phantom
    perfect = tmp_path / "perfect"
    perfect.mkdir()
    (perfect / "recon.tnsr").write_bytes((case / "phantom.tnsr").read_bytes())
    (perfect / "coils_est.tnsr").write_bytes((case / "coils.tnsr").read_bytes())
    (perfect / "manifest.json").write_text(json.dumps({"method": "diffusion"}))
    metrics_path = tmp_path / "m.json"
    assert main(["evaluate", "--dataset", str(case), "--recon", str(perfect),
                 "--out", str(metrics_path)]) == 0
    metrics = json.loads(metrics_path.read_text())
    assert metrics["records"][0]["psnr_db"] == "inf"


def test_evaluate_missing_files_io_error(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    assert main(["evaluate", "--dataset", str(case),
                 "--recon", str(tmp_path / "nope")]) == 2


def test_reconstruct_nan_is_numerical_error(tmp_path):
    # weights large enough to overflow the forward pass -> non-finite
    # iterate -> exit code 3
    import numpy as np
    from diffrecon.scorenet import ScoreNetWeights, expected_tensor_shapes, save_weights

    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    case = tmp_path / "case"
    main(["simulate", "--spec", str(spec_path), "--out", str(case)])
    huge = ScoreNetWeights({n: np.full(s, 1e30, np.float32)
                            for n, s in expected_tensor_shapes().items()})
    wpath = tmp_path / "huge.sdw1"
    save_weights(wpath, huge)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_steps": 5, "crop": [16, 16],
                               "score": {"kind": "net", "weights": str(wpath)}}))
    with np.errstate(all="ignore"):
        code = main(["reconstruct", "--dataset", str(case), "--method", "diffusion",
                     "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert code == 3


def test_masks_command(tmp_path):
    out = tmp_path / "mask.tnsr"
    assert main(["masks", "--kind", "radial", "--height", "32", "--width", "32",
                 "--spokes", "8", "--out", str(out)]) == 0
    mask = read_array(out)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    sidecar = json.loads((tmp_path / "mask.tnsr.json").read_text())
    assert sidecar["spec"]["kind"] == "radial"
    assert sidecar["acceleration"] == mask.size / mask.sum()


def test_reconstruct_multiple_datasets_with_jobs(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    cases = []
    for i in range(2):
        spec_path_i = tmp_path / f"spec{i}.json"
        write_spec(spec_path_i, phantom={"seed": 10 + i})
        case = tmp_path / f"case{i}"
        main(["simulate", "--spec", str(spec_path_i), "--out", str(case)])
        cases.append(str(case))
    out = tmp_path / "fan"
    assert main(["reconstruct", "--dataset", *cases, "--method", "zf",
                 "--jobs", "2", "--out", str(out)]) == 0
    for i in range(2):
        assert (out / f"case{i}" / "recon.tnsr").exists()
