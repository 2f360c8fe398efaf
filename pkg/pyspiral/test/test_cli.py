# pylint: disable=missing-function-docstring
# pylint: disable=missing-module-docstring
# pylint: disable=redefined-outer-name

import numpy as np

from pyspiral import primitives
from pyspiral.checkpoint import load_checkpoint
from pyspiral.features import read_descriptors, save_labels
from pyspiral.mesh import save_mesh

from .conftest import File, string_block, write_text


def test_param_count(pyspiral):
    assert pyspiral("param-count") == "2675706\n"
    assert pyspiral("param-count", "--net", "fcs", "--seq_len", "20") == "2763356\n"
    assert pyspiral("param-count", "--input_dim", "3", "--classes", "4", "--breakdown") == string_block(
        """
        fc_in 64
        lstm1 100200
        lstm2 280800
        lstm3 451000
        fc_hidden 64256
        fc_out 1028
        897348

        """
    )


def test_param_count_fcs_needs_length(pyspiral):
    code, err = pyspiral.fails("param-count", "--net", "fcs")
    assert code == 4
    assert err == "pyspiral: error: fcs networks need a positive sequence length\n"


def test_validate_mesh(pyspiral):
    assert pyspiral("validate-mesh", File("data_tetrahedron.obj").path()) == (
        "vertices=4 faces=4 edges=6 euler=2\n"
    )


def test_validate_non_manifold(tmp_path, pyspiral):
    save_mesh(primitives.bowtie(), tmp_path / "bowtie.obj")
    code, err = pyspiral.fails("validate-mesh", tmp_path / "bowtie.obj")
    assert code == 4
    assert err.endswith("1 manifold violations\n")


def test_spiral_dump_rings(pyspiral):
    out = pyspiral("spiral-dump", File("data_tetrahedron.obj").path(), "--k", "1", "--seed", "1")
    lines = str(out).splitlines()
    assert len(lines) == 4
    for v, line in enumerate(lines):
        fields = line.split(" ")
        assert fields[0] == f"{v}:"
        assert int(fields[1]) == v
        assert sorted(int(f) for f in fields[1:]) == [0, 1, 2, 3]


def test_spiral_dump_fixed_length(tmp_path, pyspiral):
    path = tmp_path / "spirals.csv"
    pyspiral(
        "spiral-dump", File("data_tetrahedron.obj").path(), "--n", "6", "--seed", "3",
        "--out", path, "--output_format", "csv",
    )
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert all(line.endswith(",-1,-1") for line in lines)
    again = pyspiral("spiral-dump", File("data_tetrahedron.obj").path(), "--n", "6", "--seed", "3",
                     "--output_format", "csv", "--threads", "2")
    assert str(again).splitlines() == lines


def test_spiral_dump_errors(pyspiral):
    mesh = File("data_tetrahedron.obj").path()
    code, err = pyspiral.fails("spiral-dump", mesh, "--k", "1")
    assert (code, err) == (2, "pyspiral: error: spiral-dump needs --seed\n")
    code, err = pyspiral.fails("spiral-dump", mesh, "--seed", "1")
    assert (code, err) == (2, "pyspiral: error: pass exactly one of --n or --k\n")
    code, err = pyspiral.fails("spiral-dump", mesh, "--n", "x", "--seed", "1")
    assert (code, err) == (2, "pyspiral: error: --n expects an integer, got 'x'\n")


def test_missing_input_file(tmp_path, pyspiral):
    missing = tmp_path / "missing.obj"
    code, err = pyspiral.fails("spiral-dump", missing, "--k", "1", "--seed", "1")
    assert code == 3
    assert err == f"pyspiral: error: no such file: {missing}\n"


def test_bad_mesh_file(tmp_path, pyspiral):
    code, err = pyspiral.fails("validate-mesh", File("data_quad.obj").path())
    assert code == 3
    assert "non-triangle face" in err


def test_features_raw_and_convert(tmp_path, pyspiral):
    mesh = File("data_tetrahedron.obj").path()
    pyspiral("features", "raw", mesh, tmp_path / "raw.vfeat", "--kind", "normal")
    assert read_descriptors(tmp_path / "raw.vfeat").name == "normal"
    pyspiral("features", "raw", mesh, tmp_path / "raw2.vfeat", "--kind", "normal", "--threads", "2")
    assert (tmp_path / "raw2.vfeat").read_bytes() == (tmp_path / "raw.vfeat").read_bytes()
    table = write_text(tmp_path / "table.txt", "1 2\n3 4\n5 6\n7 8\n")
    pyspiral("features", "convert", table, tmp_path / "t.vfeat", "--name", "toy", "--mesh", mesh)
    matrix = read_descriptors(tmp_path / "t.vfeat")
    assert matrix.name == "toy"
    np.testing.assert_array_equal(matrix.values, [[1, 2], [3, 4], [5, 6], [7, 8]])
    short = write_text(tmp_path / "short.txt", "1 2\n")
    code, err = pyspiral.fails("features", "convert", short, tmp_path / "s.vfeat", "--mesh", mesh)
    assert code == 4
    assert "1 rows but" in err


def test_eval_perfect_prediction(tmp_path, pyspiral):
    save_labels(np.array([3, 2, 1, 0]), tmp_path / "gt.txt")
    out = pyspiral(
        "eval", "--pred", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt",
        "--mesh", File("data_tetrahedron.obj").path(), "--radii", "0,0.1,0.2",
        "--errors_out", tmp_path / "errors.csv",
    )
    assert out == "radius,fraction\n0.0,1.0\n0.1,1.0\n0.2,1.0\n# auc=0.2\n"
    assert (tmp_path / "errors.csv").read_text() == "vertex,error\n0,0.0\n1,0.0\n2,0.0\n3,0.0\n"


def test_eval_remeshed_source(tmp_path, pyspiral):
    template = File("data_icosahedron.ply").path()
    save_labels(np.array([0, 1, 2, 3, 4, 5, 6, 7, 8]), tmp_path / "pred.txt")
    save_labels(np.array([0, 1, 2, 3, 4, 5, 6, 7, 8]), tmp_path / "gt.txt")
    out = pyspiral(
        "eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "gt.txt",
        "--mesh", template, "--radii", "0,0.1",
    )
    assert out == "radius,fraction\n0.0,1.0\n0.1,1.0\n# auc=0.1\n"
    save_labels(np.array([11, 10, 9, 3, 4, 5, 6, 7, 8]), tmp_path / "pred.txt")
    single = pyspiral(
        "eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "gt.txt",
        "--mesh", template, "--errors_out", tmp_path / "one.csv",
    )
    threaded = pyspiral(
        "eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "gt.txt",
        "--mesh", template, "--errors_out", tmp_path / "many.csv", "--threads", "3",
    )
    assert str(threaded) == str(single)
    assert (tmp_path / "many.csv").read_text() == (tmp_path / "one.csv").read_text()
    assert len((tmp_path / "one.csv").read_text().splitlines()) == 10


def test_eval_count_mismatch(tmp_path, pyspiral):
    save_labels(np.arange(9), tmp_path / "pred.txt")
    save_labels(np.arange(8), tmp_path / "gt.txt")
    code, err = pyspiral.fails(
        "eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "gt.txt",
        "--mesh", File("data_icosahedron.ply").path(),
    )
    assert code == 4
    assert err == f"pyspiral: error: {tmp_path / 'gt.txt'}: no correspondence for vertex 8\n"
    code, err = pyspiral.fails(
        "eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "pred.txt",
        "--mesh", File("data_icosahedron.ply").path(), "--threads", "0",
    )
    assert (code, err) == (2, "pyspiral: error: --threads must be at least 1, got 0\n")


def test_eval_usage(pyspiral):
    code, err = pyspiral.fails("eval", "--pred", "p.txt")
    assert (code, err) == (2, "pyspiral: error: eval needs --pred, --gt and --mesh\n")


def test_grad_check(pyspiral):
    out = pyspiral("grad-check", "--net", "fcs", "--seed", "0", "--max_entries", "3")
    lines = str(out).splitlines()
    assert lines[0].startswith("fc_in.W\t")
    assert lines[-1].startswith("max\t") and lines[-1].endswith("\tok")


def test_grad_check_needs_seed(pyspiral):
    code, err = pyspiral.fails("grad-check")
    assert (code, err) == (2, "pyspiral: error: grad-check needs --seed\n")


def test_train_infer_eval(tmp_path, pyspiral):
    mesh = primitives.grid(3, 4)
    save_mesh(mesh, tmp_path / "grid.obj")
    save_labels(np.arange(12), tmp_path / "grid.txt")
    write_text(tmp_path / "data.manifest", "grid.obj raw:position grid.txt\n")
    config = write_text(
        tmp_path / "run.cfg",
        string_block(
            """
            epochs=3
            N=4
            widths=4,4,4,4,4
            dataset=data.manifest
            train_count=1
            val_count=0
            """
        ),
    )
    code, err = pyspiral.fails("train", "--config", config, "--out", tmp_path / "m.ckpt")
    assert (code, err) == (2, "pyspiral: error: train needs --seed\n")

    out = pyspiral("train", "--config", config, "--out", tmp_path / "m.ckpt", "--seed", "4")
    assert str(out).startswith("epoch=")
    checkpoint = load_checkpoint(tmp_path / "m.ckpt")
    assert checkpoint.meta["seed"] == 4
    assert checkpoint.spec.classes == 12

    pyspiral("infer", tmp_path / "grid.obj", "--checkpoint", tmp_path / "m.ckpt",
             "--seed", "2", "--out", tmp_path / "pred.txt")
    lines = (tmp_path / "pred.txt").read_text().splitlines()
    assert [line.split(" ")[0] for line in lines] == [str(v) for v in range(12)]
    printed = pyspiral("infer", tmp_path / "grid.obj", "--checkpoint", tmp_path / "m.ckpt",
                       "--seed", "2")
    assert str(printed).splitlines() == lines

    curve = pyspiral("eval", "--pred", tmp_path / "pred.txt", "--gt", tmp_path / "grid.txt",
                     "--mesh", tmp_path / "grid.obj")
    assert str(curve).startswith("radius,fraction\n0.0,")
    assert len(str(curve).splitlines()) == 103

    pyspiral("sweep", tmp_path / "grid.obj", "--checkpoint", tmp_path / "m.ckpt",
             "--gt", tmp_path / "grid.txt", "--runs", "2", "--seed", "1",
             "--radii", "0,0.5", "--out", tmp_path / "sweep.csv")
    assert (tmp_path / "sweep.csv").read_text().startswith("radius,mean,min,max\n0.0,")

    save_mesh(primitives.grid(3, 3), tmp_path / "small.obj")
    save_labels(np.arange(9), tmp_path / "small.txt")
    remeshed = ("sweep", tmp_path / "small.obj", "--checkpoint", tmp_path / "m.ckpt",
                "--gt", tmp_path / "small.txt", "--runs", "2", "--seed", "1", "--radii", "0,0.5")
    code, err = pyspiral.fails(*remeshed)
    assert code == 4
    assert "pass the template as the target mesh" in err
    out = pyspiral(*remeshed, "--target_mesh", tmp_path / "grid.obj")
    assert str(out).startswith("radius,mean,min,max\n0.0,")


def test_unknown_subcommand(pyspiral):
    code, _ = pyspiral.fails("frobnicate")
    assert code == 2


def test_module_entry_point(pyspiral):
    proc = pyspiral.popen("param-count", "--input_dim", "3", "--classes", "4")
    assert proc.returncode == 0
    assert proc.stdout == "897348\n"
    proc = pyspiral.popen("grad-check")
    assert proc.returncode == 2
    assert proc.stderr == "pyspiral: error: grad-check needs --seed\n"
