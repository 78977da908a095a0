import json
import shlex

import numpy as np
import pytest

from zvl.baselines import Predictor, StarCalibration
from zvl.cli import main
from zvl.core import FactorModel
from zvl.io import (
    DatasetDescriptor,
    load_ballots,
    load_model,
    load_predictor,
    load_ratings,
    read_id_map,
    save_model,
    save_predictor,
    sha256,
    write_id_map,
    write_ratings,
    write_tally,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestRatingsIO:
    def test_movielens_line(self, tmp_path):
        p = write(tmp_path / "r.tsv", "196\t242\t3\t881250949\n186\t302\t3\t891717742\n196\t302\t5\t1\n")
        desc = DatasetDescriptor(p)
        m = load_ratings(desc)
        assert (m.n_users, m.n_items, len(m)) == (2, 2, 3)
        assert desc.user_ids == ["186", "196"] and desc.item_ids == ["242", "302"]
        assert sorted(m.entries()) == [(0, 1, 3), (1, 0, 3), (1, 1, 5)]

    def test_numeric_id_order(self, tmp_path):
        desc = DatasetDescriptor(write(tmp_path / "r.tsv", "10\t1\t2\n9\t1\t3\n"))
        load_ratings(desc)
        assert desc.user_ids == ["9", "10"]

    def test_csv(self, tmp_path):
        p = write(tmp_path / "r.csv", "user,item,rating\na,x,2\nb,x,4\n")
        m = load_ratings(DatasetDescriptor(p, "csv", scale=5))
        assert m.entries() == [(0, 0, 2), (1, 0, 4)] and m.scale == 5

    def test_csv_header_required(self, tmp_path):
        with pytest.raises(ValueError, match="header"):
            load_ratings(DatasetDescriptor(write(tmp_path / "r.csv", "1,2,3\n"), "csv"))

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError, match="no ratings"):
            load_ratings(DatasetDescriptor(write(tmp_path / "r.tsv", "\n")))

    @pytest.mark.parametrize("text,line,msg", [
        ("1\t1\t3\n1\t1\t4\n", 2, "duplicate rating for \\(user=1, item=1\\)"),
        ("1\t1\t3\n2\t1\n", 2, "expected at least 3 fields"),
        ("1\t1\t3\n2\t1\t3.5\n3\t1\t2\n", 2, "not an integer"),
        ("1\t1\t0\n", 1, "outside the star scale"),
    ])
    def test_line_numbered_errors(self, tmp_path, text, line, msg):
        p = write(tmp_path / "r.tsv", text)
        with pytest.raises(ValueError, match=f":{line}: .*{msg}"):
            load_ratings(DatasetDescriptor(p))

    def test_above_scale(self, tmp_path):
        with pytest.raises(ValueError, match="outside"):
            load_ratings(DatasetDescriptor(write(tmp_path / "r.tsv", "1\t1\t6\n"), scale=5))

    def test_unknown_id_with_preset_map(self, tmp_path):
        desc = DatasetDescriptor(write(tmp_path / "r.tsv", "1\t1\t3\n7\t1\t3\n"), user_ids=["1"], item_ids=["1"])
        with pytest.raises(ValueError, match="'7'"):
            load_ratings(desc)

    @pytest.mark.parametrize("fmt", ["movielens-tab", "csv"])
    def test_write_load_identity(self, tmp_path, fmt):
        p = write(tmp_path / "r", "u,i,rating\n" if fmt == "csv" else "")
        raw = [("30", "b", 4), ("4", "a", 1), ("30", "a", 5), ("12", "c", 2)]
        sep = "," if fmt == "csv" else "\t"
        p.write_text(p.read_text() + "".join(f"{u}{sep}{i}{sep}{s}\n" for u, i, s in raw))
        if fmt == "csv":
            p.write_text(p.read_text().replace("u,i,", "user,item,"))
        desc = DatasetDescriptor(p, fmt)
        m = load_ratings(desc)
        out = tmp_path / "copy"
        write_ratings(m, out, fmt, desc)
        desc2 = DatasetDescriptor(out, fmt)
        m2 = load_ratings(desc2)
        assert m2.entries() == m.entries() and desc2.user_ids == desc.user_ids

    def test_id_map_round_trip(self, tmp_path):
        desc = DatasetDescriptor(tmp_path / "x", user_ids=["a", "b"], item_ids=["7"])
        write_id_map(desc, tmp_path / "m.json")
        assert read_id_map(tmp_path / "m.json") == (["a", "b"], ["7"])


class TestBallotsAndTally:
    def test_load_ballots(self, tmp_path):
        p = write(tmp_path / "b.csv", "voter,r1,r2,r3\n0,2,0,1\n1,1\n")
        ballots, n = load_ballots(p)
        assert n == 3 and ballots[0].ranking == (2, 0, 1) and ballots[1].ranking == (1,)

    @pytest.mark.parametrize("text", ["v,1\n0,1\n", "voter\n", "voter,r1\nx,1\n"])
    def test_bad_ballots(self, tmp_path, text):
        with pytest.raises(ValueError):
            load_ballots(write(tmp_path / "b.csv", text))

    def test_write_tally(self, tmp_path):
        write_tally(np.array([1.0, 3.0, 3.0]), tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines() == [
            "candidate,score,rank", "0,1.0,3", "1,3.0,1", "2,3.0,2"]


class TestModelIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        model = FactorModel(rng.normal(size=(100, 8)), rng.normal(size=(100, 8)) * 1e-7)
        save_model(model, tmp_path / "a.model")
        back = load_model(tmp_path / "a.model")
        assert back.U.tobytes() == model.U.tobytes() and back.V.tobytes() == model.V.tobytes()
        save_model(back, tmp_path / "b.model")
        assert sha256(tmp_path / "a.model") == sha256(tmp_path / "b.model")

    def test_truncated(self, tmp_path):
        save_model(FactorModel(np.ones((3, 2)), np.ones((4, 2))), tmp_path / "m")
        lines = (tmp_path / "m").read_text().splitlines()
        (tmp_path / "m").write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(ValueError, match="shape mismatch"):
            load_model(tmp_path / "m")

    def test_wrong_width(self, tmp_path):
        save_model(FactorModel(np.ones((1, 2)), np.ones((1, 2))), tmp_path / "m")
        (tmp_path / "m").write_text((tmp_path / "m").read_text().replace("dim 2", "dim 3"))
        with pytest.raises(ValueError, match="shape mismatch"):
            load_model(tmp_path / "m")

    def test_not_a_model(self, tmp_path):
        with pytest.raises(ValueError):
            load_model(write(tmp_path / "m", "hello\n"))

    @pytest.mark.parametrize("pred", [
        Predictor.factor(FactorModel(np.eye(2), np.eye(2) * 0.3), 5, StarCalibration((0.1, 0.2, 0.25, 0.9))),
        Predictor.factor(FactorModel(np.eye(2), np.eye(2)), 7),
        Predictor("item-mean", np.array([1.5, 2.0 / 3.0]), 5),
        Predictor("global-mean", 3.25, 5),
        Predictor.uniform_random(42, 10),
    ])
    def test_predictor_round_trip(self, tmp_path, pred):
        save_predictor(pred, tmp_path / "p")
        back = load_predictor(tmp_path / "p")
        assert back.kind == pred.kind and back.scale == pred.scale and back.calibration == pred.calibration
        users, items = np.array([0, 1, 1]), np.array([0, 0, 1])
        np.testing.assert_array_equal(back.predict_many(users, items), pred.predict_many(users, items))


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def synth(tmp_path):
    path = tmp_path / "ratings.tsv"
    assert run("generate", "--users", 60, "--items", 30, "--seed", 3, "-o", path) == 0
    return path


class TestCLI:
    def test_generate_is_stable(self, tmp_path, synth):
        other = tmp_path / "again.tsv"
        run("generate", "--users", 60, "--items", 30, "--seed", 3, "-o", other)
        assert sha256(other) == sha256(synth)
        assert (tmp_path / "ratings.tsv.manifest.json").exists()

    @pytest.mark.parametrize("algo", ["zeromat", "ppr", "skellam", "mf", "itemmean", "random"])
    def test_train_twice_identical(self, tmp_path, synth, algo):
        a, b = tmp_path / "a.model", tmp_path / "b.model"
        extra = ["--epochs", 2]
        assert run("train", "--algo", algo, "--ratings", synth, *extra, "-o", a) == 0
        assert run("train", "--algo", algo, "--ratings", synth, *extra, "-o", b) == 0
        assert sha256(a) == sha256(b)
        assert (tmp_path / "a.ids.json").exists()

    def test_split_train_evaluate(self, tmp_path, synth, capsys):
        tr, te = tmp_path / "train.tsv", tmp_path / "test.tsv"
        assert run("split", synth, "--seed", 1, "--train-out", tr, "--test-out", te) == 0
        model = tmp_path / "m.model"
        assert run("train", "--algo", "mf", "--ratings", tr, "--epochs", 5, "--trace", tmp_path / "t.csv",
                   "-o", model) == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 6
        csv_out = tmp_path / "all.csv"
        for _ in range(2):
            assert run("evaluate", "--model", model, "--test", te, "--train", tr, "--csv", csv_out,
                       "-o", tmp_path / "r.json") == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["n_test"] == len(te.read_text().splitlines())
        assert 0 <= report["mae"] <= 4 and 0 <= report["fairness"] <= 1
        assert len(csv_out.read_text().splitlines()) == 3

    def test_audit_passes_for_zeromat(self, tmp_path, synth, capsys):
        assert run("train", "--algo", "zeromat", "--ratings", synth, "--epochs", 2, "--audit",
                   "-o", tmp_path / "z.model") == 0
        assert "unchanged" in capsys.readouterr().out

    def test_audit_rejected_for_other_algos(self, tmp_path, synth, capsys):
        assert run("train", "--algo", "mf", "--ratings", synth, "--audit", "-o", tmp_path / "m") == 1
        assert "zvl: error" in capsys.readouterr().err

    def test_claim_experiment(self, tmp_path, capsys):
        out = tmp_path / "claim.json"
        assert run("claim-experiment", "--users", 200, "--items", 40, "--permutations", 100,
                   "--zeromat-epochs", 2, "-o", out) == 0
        d = json.loads(out.read_text())
        assert d["passed"] and d["tau_zeromat"] is not None
        assert (tmp_path / "claim.csv").exists()
        assert "PASS" in capsys.readouterr().out

    def test_borda(self, tmp_path, capsys):
        b = write(tmp_path / "b.csv", "voter,r1,r2,r3\n0,0,1,2\n1,2,0,1\n2,1,0,2\n")
        assert run("borda", "tally", b, "-o", tmp_path / "t.csv") == 0
        assert "winner 0" in capsys.readouterr().out
        assert (tmp_path / "t.csv").read_text().splitlines()[1] == "0,7.0,1"

    def test_range(self, tmp_path, capsys):
        r = write(tmp_path / "r.tsv", "u1\tA\t2\nu2\tA\t2\nu1\tB\t5\n")
        assert run("range", "tally", r, "-o", tmp_path / "t.csv") == 0
        assert "winner B" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        assert run("frobnicate") != 0

    def test_missing_file(self, tmp_path, capsys):
        assert run("range", "tally", tmp_path / "nope.tsv", "-o", tmp_path / "t.csv") == 1

    def test_manifest_replays(self, tmp_path, synth):
        model = tmp_path / "z.model"
        run("train", "--algo", "zeromat", "--ratings", synth, "--epochs", 2, "-o", model)
        manifest = json.loads((tmp_path / "z.model.manifest.json").read_text())
        assert manifest["inputs"][str(synth)] == sha256(synth)
        first = sha256(model)
        model.unlink()
        assert main(manifest["command"][1:]) == 0
        assert sha256(model) == first
        assert shlex.join(manifest["command"]).startswith("zvl train")
