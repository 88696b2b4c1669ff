"""Built-in scorers and the external wire-protocol client."""

import sys
from pathlib import Path

import numpy as np
import pytest

from selokit import pipeline as pl
from selokit import scorers as sc
from selokit.errors import (
    HandshakeError,
    ProtocolError,
    ScorerTimeoutError,
    ScorerUnavailableError,
)

STUB = Path(__file__).parent / "stub_scorer.py"


def stub_cmd(*extra):
    return [sys.executable, str(STUB), *extra]


def tiles_on(h, w, scales=(16,), offsets=(0.0,)):
    return pl.plan_tiles(h, w, pl.PipelineConfig(
        scales=scales, offsets=offsets, median_kernel=3))


IMAGE = pl.RasterRef(None, 64, 64)


class TestSpecParsing:
    def test_constant(self):
        spec = sc.parse_scorer_spec("constant:0.5")
        assert spec.kind == "constant" and spec.value == 0.5

    def test_constant_requires_value(self):
        with pytest.raises(ValueError):
            sc.parse_scorer_spec("constant")

    def test_seeded_random_default_seed(self):
        assert sc.parse_scorer_spec("seeded-random").seed is None
        assert sc.parse_scorer_spec("seeded-random:42").seed == 42

    def test_gaussian_variants(self):
        assert sc.parse_scorer_spec("gaussian-target").sigma is None
        assert sc.parse_scorer_spec("gaussian-target:64").sigma == 64.0
        assert sc.parse_scorer_spec("gaussian-target:10,20,5").target == (
            10.0, 20.0, 5.0)

    def test_external_command(self):
        spec = sc.parse_scorer_spec("external:prog --flag value")
        assert spec.command == ("prog", "--flag", "value")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sc.parse_scorer_spec("magic:1")


class TestConstantScorer:
    def test_seven_tiles(self):
        tiles = tiles_on(64, 64)[:7]
        out = sc.score_tiles(sc.ConstantScorer(0.3), "q", tiles, IMAGE)
        assert np.array_equal(out, np.full(7, 0.3))


class TestSeededRandomScorer:
    def test_deterministic_across_calls(self):
        tiles = tiles_on(64, 64)
        s = sc.SeededRandomScorer(42)
        a = s.score_tiles("query", tiles, IMAGE)
        b = s.score_tiles("query", tiles, IMAGE)
        assert np.array_equal(a, b)

    def test_tile_identity_not_position(self):
        tiles = tiles_on(64, 64)
        s = sc.SeededRandomScorer(42)
        fwd = s.score_tiles("q", tiles, IMAGE)
        rev = s.score_tiles("q", tiles[::-1], IMAGE)
        assert np.array_equal(fwd, rev[::-1])

    def test_seed_and_query_sensitivity(self):
        tiles = tiles_on(64, 64)
        a = sc.SeededRandomScorer(1).score_tiles("q", tiles, IMAGE)
        b = sc.SeededRandomScorer(2).score_tiles("q", tiles, IMAGE)
        c = sc.SeededRandomScorer(1).score_tiles("other", tiles, IMAGE)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert ((a >= 0) & (a < 1)).all()


class TestGtOracleScorer:
    def setup_method(self):
        self.mask = np.zeros((64, 64), bool)
        self.mask[16:48, 16:48] = True
        self.scorer = sc.GtOracleScorer(self.mask)

    def test_inside_outside_half(self):
        inside = pl.Tile(24, 24, 16, 0, 0)
        outside = pl.Tile(0, 0, 16, 0, 0)
        half = pl.Tile(8, 16, 16, 0, 0)  # left half out, right half in
        out = self.scorer.score_tiles("q", [inside, outside, half], IMAGE)
        assert out[0] == 1.0
        assert out[1] == 0.0
        assert out[2] == 0.5

    def test_monotone_in_overlap(self):
        tiles = [pl.Tile(x, 24, 16, 0, 0) for x in range(0, 33, 4)]
        out = self.scorer.score_tiles("q", tiles, IMAGE)
        overlaps = [
            self.mask[24:40, t.x0:t.x0 + 16].sum() for t in tiles
        ]
        order = np.argsort(overlaps)
        assert (np.diff(out[order]) >= 0).all()


class TestGaussianTargetScorer:
    def test_known_distances(self):
        scorer = sc.GaussianTargetScorer([(32.0, 32.0, 8.0)])
        centered = pl.Tile(24, 24, 16, 0, 0)   # center exactly on target
        shifted = pl.Tile(32, 24, 16, 0, 0)    # center 8 px off
        out = scorer.score_tiles("q", [centered, shifted], IMAGE)
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(np.exp(-0.5))

    def test_max_over_targets(self):
        scorer = sc.GaussianTargetScorer([(0.0, 0.0, 4.0), (32.0, 32.0, 4.0)])
        tile = pl.Tile(24, 24, 16, 0, 0)
        out = scorer.score_tiles("q", [tile], IMAGE)
        assert out[0] == pytest.approx(1.0)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            sc.GaussianTargetScorer([(0.0, 0.0, 0.0)])


class TestScoreTilesContract:
    def test_wrong_count_raises(self):
        class Broken:
            def score_tiles(self, query, tiles, image):
                return np.zeros(len(tiles) + 1)

        with pytest.raises(ProtocolError, match="scores"):
            sc.score_tiles(Broken(), "q", tiles_on(64, 64), IMAGE)

    def test_nonfinite_raises(self):
        class Broken:
            def score_tiles(self, query, tiles, image):
                return np.full(len(tiles), np.nan)

        with pytest.raises(ProtocolError, match="finite"):
            sc.score_tiles(Broken(), "q", tiles_on(64, 64), IMAGE)


class TestExternalScorer:
    def test_handshake_and_constant_scores(self):
        with sc.spawn_external_scorer(stub_cmd("--value", "0.25")) as session:
            assert session.name == "test-stub"
            out = session.score_tiles("q", tiles_on(64, 64), IMAGE)
        assert np.array_equal(out, np.full(16, 0.25))

    def test_missing_command(self):
        with pytest.raises(ScorerUnavailableError):
            sc.spawn_external_scorer(["/nonexistent/scorer-binary"])

    def test_bad_protocol_version(self):
        with pytest.raises(HandshakeError):
            sc.spawn_external_scorer(stub_cmd("--bad-proto"))

    def test_handshake_timeout(self):
        with pytest.raises((ScorerTimeoutError, ProtocolError)):
            sc.spawn_external_scorer(stub_cmd("--no-handshake"), timeout=1.0)

    def test_out_of_order_responses_matched(self):
        tiles = tiles_on(64, 64)
        with sc.spawn_external_scorer(stub_cmd("--shuffle", "8")) as session:
            out = session.score_tiles("q", tiles, IMAGE)
        assert np.array_equal(out, np.full(len(tiles), 0.5))

    def test_error_record_raises(self):
        with sc.spawn_external_scorer(stub_cmd("--error-id", "3")) as session:
            with pytest.raises(ProtocolError, match="synthetic failure"):
                session.score_tiles("q", tiles_on(64, 64), IMAGE)

    def test_death_mid_batch_is_protocol_error(self):
        with sc.spawn_external_scorer(
            stub_cmd("--die-after", "5"), timeout=5.0
        ) as session:
            with pytest.raises((ProtocolError, ScorerTimeoutError)):
                session.score_tiles("q", tiles_on(64, 64), IMAGE)

    def test_pipeline_equals_in_process_constant(self, tmp_path):
        from PIL import Image

        img_path = tmp_path / "img.png"
        Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(img_path)
        config = pl.PipelineConfig(scales=(16, 32), offsets=(0.0, 0.5),
                                   median_kernel=3)
        in_proc, _ = pl.generate_selo_map(
            img_path, "q", sc.ConstantScorer(0.5), config)
        with sc.spawn_external_scorer(stub_cmd("--value", "0.5")) as session:
            external, _ = pl.generate_selo_map(img_path, "q", session, config)
        assert in_proc.values.tobytes() == external.values.tobytes()

    def test_payload_mode_ships_pixels(self, tmp_path):
        from PIL import Image

        img_path = tmp_path / "img.png"
        Image.fromarray(
            np.arange(64 * 64 * 3, dtype=np.uint8).reshape(64, 64, 3)
        ).save(img_path)
        image = pl.RasterRef.from_file(img_path)
        with sc.spawn_external_scorer(
            stub_cmd("--need-payload"), payload_mode=True
        ) as session:
            out = session.score_tiles("q", tiles_on(64, 64)[:3], image)
        assert np.array_equal(out, np.full(3, 0.5))

    def test_request_ids_unique_across_batches(self):
        with sc.spawn_external_scorer(stub_cmd()) as session:
            session.score_tiles("q", tiles_on(64, 64)[:4], IMAGE)
            session.score_tiles("q", tiles_on(64, 64)[:4], IMAGE)
            assert session._next_id == 8
