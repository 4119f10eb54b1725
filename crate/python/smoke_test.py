"""End-to-end smoke test of the Python extension.

Build and run:
    cargo build -p hierclass-py --features extension-module
    cp target/debug/libhierclass.so python/hierclass.so
    python3 python/smoke_test.py
(or `maturin develop -m crates/py/Cargo.toml` and drop the copy)
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import hierclass as hc  # noqa: E402


def main():
    tax = hc.Taxonomy.uniform(["warm", "cool"], 3)
    assert tax.item_to_type == [0, 0, 0, 1, 1, 1]

    data = hc.Dataset.synthetic(tax, per_item=10, image_size=16, seed=1)
    assert len(data) == 60
    assert data.counts() == {"train": 48, "validation": 6, "test": 6}

    batch = data.batch(data.indices("test")[:4])
    assert batch.shape == [4, 3, 16, 16]

    cfg = hc.TrainConfig(epochs_per_stage=2, batch_size=12, max_iterations=2, seed=3)
    assert cfg.learning_rate == 0.001 and cfg.lr_decay_factor == 0.03
    try:
        hc.TrainConfig(learning_rat=0.1)
    except hc.ConfigError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    model, stage = hc.train_flat(data, cfg)
    assert stage["epochs_run"] == 2 and len(stage["val_loss"]) == 2
    logits = model.logits(batch)
    assert logits.shape == [4, 6]

    out = hc.run_hierarchical(data, cfg)
    report = out["report"]
    assert 1 <= len(report["iterations"]) <= 2
    assert all(it["backbone_continuity"] for it in report["iterations"])

    flat = hc.evaluate(model, data, "test", "item")
    hier = hc.evaluate_hierarchy(out["final_model"], out["type_model"], data, "test")
    assert 0.0 <= flat["accuracy"] <= 1.0
    assert hier["type_accuracy_source"] == "type_model"
    table, diff = hc.compare(flat, hier)
    assert "Hierarchical classification" in table
    assert abs(diff - 100 * (hier["accuracy"] - flat["accuracy"])) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "final.ckpt")
        out["final_model"].save(path)
        again = hc.Model.load(path)
        assert again.logits(batch).tolist() == out["final_model"].logits(batch).tolist()
        assert again.metadata["stage"] == "item"

    moved = model.transfer_core(2, seed=5)
    assert moved.class_count == 2
    assert moved.embed(batch).tolist() == model.embed(batch).tolist()

    fixture_flat = dict(flat, accuracy=0.8532)
    fixture_hier = dict(flat, accuracy=0.8850)
    _, gap = hc.compare(fixture_flat, fixture_hier)
    assert abs(gap - 3.18) < 1e-9

    print("python smoke test passed:", model, "|", table.splitlines()[-3].strip())


if __name__ == "__main__":
    main()
