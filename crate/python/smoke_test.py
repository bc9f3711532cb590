"""Smoke test for the vdt_adapter extension module.

Build first with `maturin develop -m crates/py/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math
import os
import tempfile

import vdt_adapter as vdt


def check_bank_and_zero_shot():
    bank = vdt.SentenceBank(
        {"heron": [[1.0, 0.0, 0.0], [0.9, 0.1, 0.0]], "jay": [[0.0, 1.0, 0.0], [0.0, 0.8, 0.2]]},
        texts={"heron": ["long neck", "wading bird"]},
    )
    assert bank.class_names == ["heron", "jay"] and bank.dim == 3 and len(bank) == 2
    assert bank.texts("heron") == ["long neck", "wading bird"]
    protos = vdt.mean_prototype(bank)
    assert all(abs(math.hypot(*p) - 1.0) < 1e-6 for p in protos)
    feats, labels = [[1.0, 0.05, 0.0], [0.1, 1.0, 0.0]], [0, 1]
    assert vdt.zero_shot_accuracy(feats, labels, protos) == 1.0
    assert vdt.score_ensemble_accuracy(feats, labels, bank) == 1.0

    adapter = vdt.Adapter(3, heads=1, seed=1, beta=0.5)
    assert adapter.prototypes(bank, beta=0.0) == protos
    attn = adapter.attention(bank, "heron")
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in attn)


def check_training_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = vdt.synthetic_dataset(tmp, seed=3, classes=6, test_per_class=10)
        ds = vdt.load_dataset(manifest)
        bank, (feats, labels) = ds["bank"], ds["train"]
        adapter, report = vdt.train_adapter(bank, feats, labels, epochs=10, learning_rate=1e-2, seed=3)
        assert len(report["loss_history"]) == 10
        assert 0.0 <= report["train_accuracy"] <= 1.0

        path = os.path.join(tmp, "adapter.vdta")
        adapter.save(path, seed=3)
        back = vdt.Adapter.load(path)
        assert back.beta == adapter.beta and back.dim == bank.dim

        split = ds["split"]
        base, new = bank.subset(split["base_classes"]), bank.subset(split["new_classes"])
        tf, tl = ds["test"]

        def restrict(names):
            idx = [bank.class_names.index(n) for n in names]
            rows = [(f, idx.index(l)) for f, l in zip(tf, tl) if l in idx]
            return [r[0] for r in rows], [r[1] for r in rows]

        bf, bl = restrict(split["base_classes"])
        nf, nl = restrict(split["new_classes"])
        res = back.evaluate_base_to_new(base, new, bf, bl, nf, nl)
        assert abs(res["harmonic"] - vdt.harmonic_mean(res["base_acc"], res["new_acc"])) < 1e-12


def check_parser_and_errors():
    parsed = dict(vdt.parse_vdt_response('noise {"A340-200": ["It has four engines."]} tail'))
    assert parsed == {"A340-200": ["It has four engines."]}
    try:
        vdt.parse_vdt_response("no braces here")
    except vdt.VdtError:
        pass
    else:
        raise AssertionError("expected VdtError")
    try:
        vdt.train_adapter(vdt.SentenceBank({"a": [[1.0, 0.0]]}), [[1.0, 0.0]], [0], epoch=1)
    except vdt.VdtError as e:
        assert "InvalidInput" in str(e)
    else:
        raise AssertionError("expected VdtError")


def check_gradients():
    report = vdt.gradcheck(seed=7)
    assert report["pass"] and report["max_rel_err"] < 1e-4


if __name__ == "__main__":
    check_bank_and_zero_shot()
    check_training_round_trip()
    check_parser_and_errors()
    check_gradients()
    print("smoke test ok")
