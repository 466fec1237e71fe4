"""Romizer tests: stats, image determinism, round trips, reports."""

import json

import pytest

from jrom import classfile as cf
from jrom import lifecycle as lc
from jrom import romizer as rz
from jrom.errors import (BadImageMagic, Corrupt, IncompleteClosure, NotLinked,
                         StageNotReached, VersionMismatch)
from jrom.pipeline import Pipeline

from .corpus import build_corpus, corpus_names


@pytest.fixture(scope="module")
def image(linked_pipeline):
    return linked_pipeline.emit_image()


class TestSnapshotStats:
    def test_unloaded_delegates_to_parser_stats(self, linked_pipeline):
        for name, (data, _) in build_corpus().items():
            cls = linked_pipeline.registry.get(name)
            raw = cf.parse_class(data)
            stats = rz.snapshot_stats(cls, "unloaded")
            assert stats.entries == cf.pool_entry_count(raw)
            assert stats.pool_bytes == cf.raw_pool_byte_size(raw)
            assert stats.class_bytes == len(data)

    def test_monotone_across_stages(self, linked_pipeline):
        for cls in linked_pipeline.registry.loadable():
            u = rz.snapshot_stats(cls, "unloaded")
            lo = rz.snapshot_stats(cls, lc.LOADED)
            ln = rz.snapshot_stats(cls, lc.LINKED)
            assert ln.entries <= lo.entries <= u.entries, cls.name
            assert ln.pool_bytes <= lo.pool_bytes, cls.name

    def test_stage_not_reached(self):
        cls = lc.ClassRep("ghost")
        with pytest.raises(StageNotReached):
            rz.snapshot_stats(cls, "unloaded")
        with pytest.raises(StageNotReached):
            rz.snapshot_stats(cls, lc.LINKED)

    def test_introspection_costs_bytes_at_linked(self, linked_pipeline,
                                                 nointro_pipeline):
        with_intro = rz.snapshot_stats(
            linked_pipeline.registry.get("corpus/Arith"), lc.LINKED)
        without = rz.snapshot_stats(
            nointro_pipeline.registry.get("corpus/Arith"), lc.LINKED)
        assert without.pool_bytes < with_intro.pool_bytes


class TestEmit:
    def test_emit_twice_identical(self, linked_pipeline, image):
        assert linked_pipeline.emit_image() == image

    def test_input_order_does_not_matter(self, linked_pipeline):
        classes = linked_pipeline.linked_classes()
        a = rz.emit_image(classes, linked_pipeline.ctx)
        b = rz.emit_image(list(reversed(classes)), linked_pipeline.ctx)
        assert a == b

    def test_incomplete_closure_names_missing(self, linked_pipeline):
        classes = [c for c in linked_pipeline.linked_classes()
                   if c.name != "corpus/shapes/Shape"]
        with pytest.raises(IncompleteClosure) as err:
            rz.emit_image(classes, linked_pipeline.ctx)
        assert "corpus/shapes/Shape" in err.value.missing

    def test_not_linked_rejected(self, corpus_dir):
        pipe = Pipeline([corpus_dir])
        pipe.load_targets(["corpus/Empty"], closure=True)
        with pytest.raises(NotLinked):
            rz.emit_image(pipe.registry.loadable(), pipe.ctx)


class TestLoadImage:
    def test_round_trip_emit_is_identical(self, linked_pipeline, image):
        reg2 = rz.load_image(image)
        classes = sorted(reg2.loadable(), key=lambda c: c.name)
        assert rz.emit_image(classes, linked_pipeline.ctx) == image

    def test_reloaded_classes_are_linked_and_ready(self, image):
        reg2 = rz.load_image(image)
        for cls in reg2.loadable():
            assert cls.state == lc.LINKED
            assert cls.ready

    def test_reloaded_stats_match_originals(self, linked_pipeline, image):
        reg2 = rz.load_image(image)
        for cls in linked_pipeline.registry.loadable():
            redone = reg2.get(cls.name)
            a = rz.snapshot_stats(cls, lc.LINKED)
            b = rz.snapshot_stats(redone, lc.LINKED)
            assert (a.entries, a.pool_bytes, a.class_bytes) == \
                (b.entries, b.pool_bytes, b.class_bytes)
            u1 = rz.snapshot_stats(cls, "unloaded")
            u2 = rz.snapshot_stats(redone, "unloaded")
            assert (u1.entries, u1.pool_bytes) == (u2.entries, u2.pool_bytes)

    def test_reloaded_dispatch_tables_equal(self, linked_pipeline, image):
        reg2 = rz.load_image(image)
        for cls in linked_pipeline.registry.loadable():
            redone = reg2.get(cls.name)
            assert [(m.owner.name, m.name, m.descriptor)
                    for m in cls.dispatch_table] == \
                [(m.owner.name, m.name, m.descriptor)
                 for m in redone.dispatch_table]

    def test_reloaded_zones_equal(self, linked_pipeline, image):
        reg2 = rz.load_image(image)
        for cls in linked_pipeline.registry.loadable():
            redone = reg2.get(cls.name)
            assert cls.a_static_zone == redone.a_static_zone
            assert cls.v_static_zone == redone.v_static_zone

    def test_truncated_image_reports_offset(self, image):
        with pytest.raises(Corrupt) as err:
            rz.load_image(image[:len(image) // 2])
        assert err.value.offset <= len(image) // 2

    def test_version_flip(self, image):
        data = bytearray(image)
        data[4] ^= 0xFF
        with pytest.raises(VersionMismatch):
            rz.load_image(bytes(data))

    def test_bad_magic(self, image):
        with pytest.raises(BadImageMagic):
            rz.load_image(b"NOPE" + image[4:])

    def test_trailing_bytes_rejected(self, image):
        with pytest.raises(Corrupt):
            rz.load_image(image + b"\x00")


class TestImageFuzz:
    def test_random_flips_fail_cleanly(self, image):
        import random
        from jrom.errors import JromError
        rng = random.Random(0xA5)
        for _ in range(400):
            data = bytearray(image)
            for _ in range(rng.randint(1, 4)):
                data[rng.randrange(len(data))] = rng.randrange(256)
            try:
                rz.load_image(bytes(data))
            except JromError:
                pass

    def test_every_truncation_fails_cleanly(self, image):
        from jrom.errors import JromError
        for cut in range(0, len(image), 61):
            with pytest.raises(JromError):
                rz.load_image(image[:cut])


class TestCArray:
    def test_renders_every_byte(self):
        text = rz.emit_c_array(bytes([1, 2, 3]), "blob")
        assert "0x01, 0x02, 0x03" in text
        assert "blob[3]" in text
        assert "blob_len = 3UL" in text

    def test_reparsing_literals_recovers_bytes(self, image):
        text = rz.emit_c_array(image[:64], "rom")
        inside = text[text.index("{") + 1:text.index("}")]
        parsed = bytes(int(tok, 16) for tok in inside.replace(",", " ").split())
        assert parsed == image[:64]


class TestReport:
    def test_percentages_recompute_from_counts(self, linked_pipeline):
        report = linked_pipeline.build_report()
        table = report.to_table()
        base = report.aggregate("unloaded")
        linked = report.aggregate(lc.LINKED)
        want = "%7.2f%%" % (100.0 * linked.entries / base.entries)
        assert want.strip() in table

    def test_aggregate_is_sum_of_classes(self, linked_pipeline):
        report = linked_pipeline.build_report()
        agg = report.aggregate(lc.LINKED)
        total = sum(c.stages[lc.LINKED].entries for c in report.classes
                    if c.stages[lc.LINKED])
        assert agg.entries == total

    def test_records_are_json_lines(self, linked_pipeline):
        report = linked_pipeline.build_report()
        lines = [json.loads(line) for line in
                 report.to_records().strip().splitlines()]
        classes = {r["class"] for r in lines if "class" in r}
        assert set(corpus_names()) <= classes
        aggregates = [r for r in lines if "aggregate" in r]
        assert {a["aggregate"] for a in aggregates} == \
            {"unloaded", lc.LOADED, lc.LINKED}

    def test_table_documents_model_and_flags(self, linked_pipeline):
        table = linked_pipeline.build_report().to_table()
        assert "model:" in table
        assert "introspection=on" in table
