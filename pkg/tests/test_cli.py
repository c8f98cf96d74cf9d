import json
import subprocess
import sys

import numpy as np
import pytest

from ugrid.cli import main
from ugrid.data import save_problem
from ugrid.grid import full_interior_mask, write_field
from ugrid.multigrid import dense_solve
from ugrid.net import init_params, save_checkpoint, zero_params
from ugrid.stencils import helmholtz

from conftest import random_problem


def test_gen_data_count(tmp_path):
    assert main(["gen-data", "--n", "17", "--count", "10", "--out-dir", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["samples"]) == 10
    assert len(list(tmp_path.glob("*.ugf"))) == 10 * 3


def test_gen_data_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["gen-data", "--n", "17", "--count", "3", "--seed", "5", "--family", "cdr",
              "--out-dir", str(tmp_path / d)])
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_data_helmholtz_has_k2(tmp_path):
    main(["gen-data", "--n", "17", "--count", "4", "--family", "helmholtz",
          "--out-dir", str(tmp_path)])
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for rec in manifest["samples"]:
        assert (tmp_path / rec["files"]["k2"]).is_file()


def test_solve_exact_warm_start(tmp_path, rng, capsys):
    p = random_problem("poisson", 17, rng)
    save_problem(tmp_path / "prob", p)
    write_field(tmp_path / "u0.ugf", dense_solve(p))
    save_checkpoint(tmp_path / "c.ugck", init_params(2, 2))
    code = main(["solve", "--checkpoint", str(tmp_path / "c.ugck"),
                 "--problem-dir", str(tmp_path / "prob"), "--u0", str(tmp_path / "u0.ugf"),
                 "--trace-out", str(tmp_path / "t.csv")])
    assert code == 0
    assert "after 1 iterations" in capsys.readouterr().out
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 2


def test_solve_zero_checkpoint_max_iters(tmp_path):
    save_checkpoint(tmp_path / "z.ugck", zero_params(4, 2))
    code = main(["solve", "--checkpoint", str(tmp_path / "z.ugck"), "--testcase", "square",
                 "--n", "65", "--out-dir", str(tmp_path)])
    assert code == 2


def test_solve_diverged_exit(tmp_path):
    z = np.zeros((9, 9))
    b = np.where(full_interior_mask(9) != 0, 0.0, 1.0)
    save_problem(tmp_path / "p", helmholtz(z, b, full_interior_mask(9), np.full((9, 9), 2.0)))
    assert main(["solve", "--solver", "jacobi", "--problem-dir", str(tmp_path / "p")]) == 3


def test_solve_baselines_and_solution(tmp_path):
    out = tmp_path / "u.ugf"
    assert main(["solve", "--solver", "classical-mg", "--testcase", "l_shape", "--n", "33",
                 "--solution-out", str(out)]) == 0
    assert out.stat().st_size == 8 + 8 * 33 * 33


def test_spectral_prints_cos(capsys):
    assert main(["spectral", "--family", "poisson", "--testcase", "square", "--n", "9"]) == 0
    assert "rho = 0.9238" in capsys.readouterr().out


def test_missing_checkpoint_usage(tmp_path):
    assert main(["solve", "--testcase", "square", "--n", "17"]) == 64
    assert main(["solve", "--checkpoint", str(tmp_path / "nope.ugck"), "--n", "17"]) == 64


def test_bad_flags_usage():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--solver", "sor"])
    assert exc.value.code == 64
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 64
    assert main(["solve", "--solver", "jacobi", "--n", "6"]) == 64


def test_train_and_bench(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("grid_n = 17\ndataset_size = 8\nepochs = 1\ndepth = 2\nchannels = 2\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--batch-size", "4", "--out-dir", str(run)]) == 0
    assert (run / "checkpoint.ugck").is_file() and (run / "metrics.csv").is_file()
    code = main(["bench", "--checkpoint", str(run / "checkpoint.ugck"), "--n", "17",
                 "--testcases", "square,star", "--repeats", "1", "--max-iters", "4",
                 "--out-dir", str(tmp_path / "bench")])
    assert code == 0
    assert len((tmp_path / "bench" / "bench.csv").read_text().splitlines()) == 1 + 2 * 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ugrid", "spectral", "--n", "9"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "rho = 0.92" in res.stdout
