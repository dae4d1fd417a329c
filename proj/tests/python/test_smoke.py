import json

import numpy as np
import pytest

import partex

TINY = """
atlas.l = 16
tvae.k = 16
tvae.d = 8
tvae.channels = 8
tvae.iterations = 20
gvae.part_iterations = 20
gvae.shape_iterations = 20
prior.hidden = 8
prior.blocks = 1
prior.fc_hidden = 16
prior.top_iterations = 10
prior.bottom_iterations = 5
"""


def test_config_round_trip():
    cfg = partex.RunConfig.parse(TINY)
    assert cfg.get("atlas.l") == "16"
    again = partex.RunConfig.parse(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert "prior.seed_conditioning" in partex.RunConfig.keys()
    with pytest.raises(partex.PartexError):
        cfg.set("no.such.key", "1")


def test_stage_list():
    names = [s["number"] for s in partex.stages()]
    assert names == list(range(1, 8))
    assert "7. train non-seed priors" in partex.dry_run(partex.RunConfig.paper())


def test_ssim_identity():
    rng = np.random.default_rng(0)
    a = rng.random((32, 32, 3), dtype=np.float32)
    assert partex.ssim(a, a) == pytest.approx(1.0)
    assert partex.ssim(a, 1 - a) < 0.2


def test_tiny_pipeline(tmp_path):
    cfg = partex.RunConfig.parse(TINY)
    manifests = partex.write_toy_dataset(tmp_path / "toys", count=8, seed=1)
    for m in manifests:
        partex.bake(m, tmp_path / "data", m.parent.name, cfg)
    with pytest.raises(partex.PartexError, match="stage"):
        partex.train(cfg, tmp_path / "data", tmp_path / "run", [6])
    partex.train(cfg, tmp_path / "data", tmp_path / "run")
    run_manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert sorted(run_manifest["stages"]) == [str(i) for i in range(1, 8)]

    out = partex.texture(tmp_path / "run", manifests[0], tmp_path / "tex", num_samples=2, seed=3)
    assert len(out) == 2
    again = partex.texture(tmp_path / "run", manifests[0], tmp_path / "tex2", num_samples=1, seed=3)
    seat = partex.read_png(out[0].parent / "seat.png")
    assert seat.shape == (48, 64, 4)
    assert np.array_equal(seat, partex.read_png(again[0].parent / "seat.png"))
    assert partex.seam_consistency(seat) >= 0.0

    views = partex.render(out[0], tmp_path / "views", views=2, size=32)
    assert len(views) == 2 and views[0].shape == (32, 32, 3)
    report = partex.evaluate(out[0], manifests[0], views=2, size=48)
    assert 0.0 < report["multiview_ssim"] <= 1.0

    gen = partex.generate(tmp_path / "run", tmp_path / "gen", seed=5)
    assert gen.exists()
