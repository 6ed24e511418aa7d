import numpy as np
import pytest

from lesionforge import udls
from lesionforge.cli import main
from lesionforge.config import RunConfig, load_config, parse_config_text
from lesionforge.data import ManifestError, load_mask, read_manifest, save_image, write_manifest, ManifestRow
from lesionforge.features import N_FEATURES
from lesionforge.metrics import balanced_accuracy
from lesionforge.pipeline import (
    FeatureSources,
    PipelineError,
    load_network,
    run_classify,
    run_evaluate,
    run_train,
    segment_image,
)
from lesionforge.synthetic import blob_image, write_blob_dataset

WIDTH = 4


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    for seed in (0, 1, 2):
        assert main(["weights", "init-random", "--seed", str(seed), "--base-width", str(WIDTH),
                     "--out", str(root / f"net{seed}.udls")]) == 0
    train = write_blob_dataset(root / "train", 6, seed=10, size=(120, 140))
    test = write_blob_dataset(root / "test", 3, seed=11, size=(120, 140))
    return root, train, test


@pytest.fixture(scope="module")
def cfg():
    return RunConfig(base_width=WIDTH)


def read_kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_dark_disk_goes_to_gmm(work, cfg):
    root, _, _ = work
    unet = load_network(root / "net0.udls", WIDTH)
    img, truth = blob_image(np.random.default_rng(3), "MEL", (224, 224))
    _, mask, tag, area = segment_image(img, unet, cfg)
    assert tag == "gmm" and area == 0
    inter = np.logical_and(mask, truth).sum()
    assert inter / np.logical_or(mask, truth).sum() >= 0.8


def test_segment_cli_writes_binary_masks(work, tmp_path, capsys):
    root, _, test = work
    out = tmp_path / "seg"
    code = main(["segment", "--manifest", str(test), "--unet-weights", str(root / "net0.udls"),
                 "--base-width", str(WIDTH), "--out", str(out)])
    assert code == 0
    masks = sorted((out / "masks").glob("*_mask.png"))
    assert len(masks) == 9
    from PIL import Image
    for p in masks:
        raw = np.asarray(Image.open(p))
        assert raw.shape == (120, 140)
        assert set(np.unique(raw)) <= {0, 255}
    kv = read_kv(out / "segment_report.kv")
    assert int(kv["n_gmm"]) == 9 and float(kv["mean_jaccard"]) > 0.9
    assert "mean jaccard" in capsys.readouterr().out


def test_empty_manifest_succeeds(work, tmp_path):
    root, _, _ = work
    (tmp_path / "m.csv").write_text("image,mask,label\n")
    assert main(["segment", "--manifest", str(tmp_path / "m.csv"), "--unet-weights", str(root / "net0.udls"),
                 "--base-width", str(WIDTH), "--out", str(tmp_path / "o")]) == 0


def test_missing_weights_is_fatal(work, tmp_path, capsys):
    _, _, test = work
    code = main(["segment", "--manifest", str(test), "--unet-weights", str(tmp_path / "nope.udls"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "nope.udls" in capsys.readouterr().err


def test_wrong_width_weights_name_a_layer(work, tmp_path, capsys):
    root, _, test = work
    code = main(["segment", "--manifest", str(test), "--unet-weights", str(root / "net0.udls"),
                 "--base-width", "8", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "enc1.conv1" in capsys.readouterr().err


def test_every_image_failing_exits_2(work, tmp_path):
    root, _, _ = work
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    write_manifest(tmp_path / "m.csv", [ManifestRow(bad)])
    assert main(["segment", "--manifest", str(tmp_path / "m.csv"), "--unet-weights", str(root / "net0.udls"),
                 "--base-width", str(WIDTH), "--out", str(tmp_path / "o")]) == 2


def test_bad_label_names_row(tmp_path):
    img = tmp_path / "a.png"
    save_image(img, np.zeros((3, 4, 4), np.float32))
    (tmp_path / "m.csv").write_text("image,mask,label\na.png,,MEL\na.png,,XYZ\n")
    with pytest.raises(ManifestError, match=r"m\.csv:3.*XYZ"):
        read_manifest(tmp_path / "m.csv")


def test_manifest_roundtrip(work):
    _, train, _ = work
    rows = read_manifest(train)
    assert len(rows) == 18 and {r.label for r in rows} == {"MEL", "NV", "BCC"}
    assert all(r.image.exists() and r.mask.exists() for r in rows)


@pytest.fixture(scope="module")
def trained(work, cfg):
    root, train, _ = work
    sources = FeatureSources(load_network(root / "net0.udls", WIDTH),
                             [load_network(root / "net1.udls", WIDTH), load_network(root / "net2.udls", WIDTH)])
    model, items = run_train(read_manifest(train), sources, cfg, root / "train_out")
    return model, items, sources


def test_two_cnns_give_hybrid_layout(trained):
    model, items, _ = trained
    emb = 8 * WIDTH
    assert model.layout == (emb, emb, N_FEATURES)
    assert items["layout"] == f"{emb} {emb} 200"
    assert len(model.machines) == 3


def test_report_accuracy_matches_confusion(trained):
    _, items, _ = trained
    cm = np.array([[int(v) for v in items[f"resubstitution.confusion.{c}"].split()]
                   for c in ("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC")])
    assert items["resubstitution.balanced_accuracy"] == pytest.approx(balanced_accuracy(cm))


def test_layout_mismatch_is_fatal(trained, work, cfg, tmp_path):
    model, _, sources = trained
    _, _, test = work
    fewer = FeatureSources(sources.unet, sources.cnns[:1])
    with pytest.raises(PipelineError, match="layout mismatch"):
        run_classify(read_manifest(test), model, fewer, cfg, tmp_path)


def test_empty_prediction_set(trained, cfg, tmp_path):
    model, _, sources = trained
    with pytest.raises(PipelineError, match="empty"):
        run_classify([], model, sources, cfg, tmp_path)


def test_classify_writes_predictions(trained, work, cfg, tmp_path):
    model, _, sources = trained
    _, _, test = work
    out = run_classify(read_manifest(test), model, sources, cfg, tmp_path)
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "image,label" and len(lines) == 1 + len(out) == 10
    assert all(line.split(",")[1] in model.classes for line in lines[1:])


def test_untrained_truth_classes_warn(work, cfg, tmp_path, caplog):
    root, _, _ = work
    two = write_blob_dataset(tmp_path / "two", 3, seed=20, classes=("MEL", "NV"), size=(120, 140))
    seven = write_blob_dataset(tmp_path / "seven", 1, seed=21,
                               classes=("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"), size=(120, 140))
    sources = FeatureSources(load_network(root / "net0.udls", WIDTH))
    model, _ = run_train(read_manifest(two), sources, cfg.with_overrides(cnn_features=False))
    items = run_evaluate(read_manifest(seven), model, sources, cfg.with_overrides(cnn_features=False), tmp_path)
    assert "never saw" in caplog.text
    assert items["untrained_classes"] == "BCC AKIEC BKL DF VASC"
    assert 0.0 <= items["balanced_accuracy"] <= 1.0


def test_features_list(capsys):
    assert main(["features", "list"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 200
    assert lines[0].split("\t")[0] == "0"


def test_config_file_and_overrides(tmp_path, capsys):
    (tmp_path / "run.cfg").write_text("# comment\nsvm_c = 4\narea_threshold=1000\n")
    assert main(["config", "--config", str(tmp_path / "run.cfg"), "--set", "gmm_components=2", "--seed", "7"]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert out["svm_c"] == "4.0" and out["area_threshold"] == "1000.0"
    assert out["gmm_components"] == "2" and out["gmm_seed"] == "7" and out["svm_seed"] == "7"


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="bogus"):
        parse_config_text("bogus=1")
    with pytest.raises(ValueError):
        load_config(None, cnn_features="maybe")


def test_embeddings_container(work, cfg, tmp_path):
    root, train, _ = work
    rows = read_manifest(train)
    r = np.random.default_rng(0)
    emb = {row.name: r.random(16).astype(np.float32) for row in rows}
    udls.save(tmp_path / "emb.udls", emb)
    from lesionforge.pipeline import load_embeddings
    sources = FeatureSources(load_network(root / "net0.udls", WIDTH), [], load_embeddings(tmp_path / "emb.udls"))
    assert sources.layout() == (16, 200)
    model, _ = run_train(rows, sources, cfg)
    assert model.layout == (16, 200)


def test_saved_mask_is_strictly_binary(tmp_path):
    from lesionforge.data import save_mask
    save_mask(tmp_path / "m.png", np.array([[0, 1], [1, 0]], np.uint8))
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), [[0, 1], [1, 0]])
