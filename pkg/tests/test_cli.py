import re
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from obbtable.annot import (
    Detection,
    Instance,
    emit_detection_line,
    parse_dota_text,
    reorder_start,
    write_dota_file,
)
from obbtable.cli import main
from obbtable.geometry import Quad
from obbtable.raster import Raster, write_image

from conftest import EQ5, EQ6

ICDAR_DOC = '<?xml version="1.0" encoding="UTF-8"?>\n<document filename="{name}.jpg">{tables}</document>\n'


def write_xml(path, *point_strings):
    tables = "".join(f"<table><Coords points=\"{s}\"/></table>" for s in point_strings)
    path.write_text(ICDAR_DOC.format(name=path.stem, tables=tables), encoding="utf-8")


def gen_args(img, ann, out, *extra):
    return ["generate", "--src-img", str(img), "--src-ann", str(ann), "--out", str(out), *extra]


class TestConvert:
    def test_three_files(self, tmp_path, capsys):
        xml_dir = tmp_path / "xml"
        xml_dir.mkdir()
        write_xml(xml_dir / "10497.xml", "63,119 666,119 666,1006 63,1006")
        write_xml(xml_dir / "10001.xml", "0,0 10,0 10,10 0,10", "20,20 30,20 30,30 20,30")
        write_xml(xml_dir / "10002.xml")
        assert main(["convert", "--xml-dir", str(xml_dir), "--out-dir", str(tmp_path / "txt")]) == 0
        assert "3 files, 3 instances" in capsys.readouterr().out
        txts = sorted(p.name for p in (tmp_path / "txt").iterdir())
        assert txts == ["10001.txt", "10002.txt", "10497.txt"]
        assert (tmp_path / "txt" / "10497.txt").read_text() == "63 119 666 119 666 1006 63 1006 table 0\n"

    def test_hbb_flag(self, tmp_path):
        xml_dir = tmp_path / "xml"
        xml_dir.mkdir()
        write_xml(xml_dir / "a.xml", "63,1006 63,119 666,119 666,1006")
        assert main(["convert", "--xml-dir", str(xml_dir), "--out-dir", str(tmp_path / "t"), "--hbb"]) == 0
        assert parse_dota_text((tmp_path / "t" / "a.txt").read_text())[0].quad == EQ5

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "xml").mkdir()
        assert main(["convert", "--xml-dir", str(tmp_path / "xml"), "--out-dir", str(tmp_path / "t")]) == 0
        assert "0 files, 0 instances" in capsys.readouterr().out

    def test_partial(self, tmp_path, capsys):
        xml_dir = tmp_path / "xml"
        xml_dir.mkdir()
        write_xml(xml_dir / "a.xml", "0,0 1,0 1,1 0,1")
        write_xml(xml_dir / "b.xml", "0,0 1,0 1,1 0,1")
        (xml_dir / "c.xml").write_text("<document><table>")
        assert main(["convert", "--xml-dir", str(xml_dir), "--out-dir", str(tmp_path / "t")]) == 2
        assert len(list((tmp_path / "t").iterdir())) == 2
        assert "c.xml" in capsys.readouterr().err

    def test_missing_dir(self, tmp_path):
        assert main(["convert", "--xml-dir", str(tmp_path / "nope"), "--out-dir", str(tmp_path / "t")]) == 1


class TestValidate:
    def test_clean(self, tmp_path):
        write_dota_file(tmp_path / "a.txt", [Instance(EQ5), Instance(EQ6)])
        assert main(["validate", "--ann-dir", str(tmp_path)]) == 0

    def test_counterclockwise(self, tmp_path, capsys):
        write_dota_file(tmp_path / "a.txt", [Instance(Quad.from_flat([0, 0, 0, 1, 1, 1, 1, 0]))])
        assert main(["validate", "--ann-dir", str(tmp_path)]) == 2
        assert "counterclockwise" in capsys.readouterr().out

    def test_start_point_fixture(self, tmp_path, capsys):
        # counterclockwise box shifted so that A sits bottom-left with A->B pointing along +x
        ccw_box = Quad(EQ5.a, EQ5.d, EQ5.c, EQ5.b)
        write_dota_file(tmp_path / "a.txt", [Instance(reorder_start(ccw_box, 1))])
        assert main(["validate", "--ann-dir", str(tmp_path)]) == 2
        assert "start-point-suspect" in capsys.readouterr().out

    def test_parse_error(self, tmp_path, capsys):
        (tmp_path / "a.txt").write_text("1 2 3 table 0\n")
        assert main(["validate", "--ann-dir", str(tmp_path)]) == 2
        assert "line 1" in capsys.readouterr().out

    def test_bounds_with_images(self, tmp_path, capsys):
        ann, img = tmp_path / "ann", tmp_path / "img"
        ann.mkdir()
        img.mkdir()
        write_dota_file(ann / "p.txt", [Instance(EQ6)])
        write_image(img / "p.png", Raster.blank(100, 100))
        assert main(["validate", "--ann-dir", str(ann), "--img-dir", str(img)]) == 2
        assert "out-of-bounds" in capsys.readouterr().out


class TestGenerate:
    def test_deterministic_and_jobs(self, tmp_path, split_dir, capsys):
        img, ann, _ = split_dir
        assert main(gen_args(img, ann, tmp_path / "a", "--seed", "11")) == 0
        assert main(gen_args(img, ann, tmp_path / "b", "--seed", "11", "--jobs", "3")) == 0
        digests = re.findall(r"digest: sha256:(\w+)", capsys.readouterr().out)
        assert len(digests) == 2 and digests[0] == digests[1]

    def test_global_flags_before_subcommand(self, tmp_path, split_dir, capsys):
        img, ann, _ = split_dir
        assert main(["--seed", "11", "--quiet"] + gen_args(img, ann, tmp_path / "a")) == 0
        assert capsys.readouterr().out == ""
        assert "seed: 11" in (tmp_path / "a" / "manifest_train.txt").read_text()

    def test_jobs_env(self, tmp_path, split_dir, monkeypatch):
        img, ann, _ = split_dir
        monkeypatch.setenv("OBBTABLE_JOBS", "2")
        assert main(gen_args(img, ann, tmp_path / "a")) == 0
        monkeypatch.setenv("OBBTABLE_JOBS", "zero")
        assert main(gen_args(img, ann, tmp_path / "b")) == 1

    def test_zero_range_is_identity(self, tmp_path, split_dir):
        img, ann, pages = split_dir
        out = tmp_path / "o"
        assert main(gen_args(img, ann, out, "--angle-range", "0,0", "--emit", "obb")) == 0
        for image_id, (_, insts) in pages.items():
            assert parse_dota_text((out / "ann_train_obbox" / f"{image_id}.txt").read_text()) == insts
            assert (out / "ann_train_obbox" / f"{image_id}.txt").read_text() == (ann / f"{image_id}.txt").read_text()
        assert not (out / "ann_train_hbb").exists()

    def test_skips_give_exit_2(self, tmp_path, split_dir):
        img, ann, _ = split_dir
        (ann / "ghost.txt").write_text("")
        assert main(gen_args(img, ann, tmp_path / "o")) == 2

    @pytest.mark.parametrize("extra", [["--emit", "xyz"], ["--angle-range", "5"], ["--angle-range", "10,0"],
                                       ["--jobs", "0"], ["--fill", "a,b"]])
    def test_bad_flags(self, tmp_path, split_dir, extra):
        img, ann, _ = split_dir
        assert main(gen_args(img, ann, tmp_path / "o", *extra)) == 1
        assert not (tmp_path / "o").exists()


def make_dets_from_gt(gt_dir, det_dir, score=1.0):
    det_dir.mkdir(parents=True, exist_ok=True)
    for p in gt_dir.glob("*.txt"):
        lines = []
        for inst in parse_dota_text(p.read_text()):
            lines.append(emit_detection_line(Detection(inst.quad, inst.category, score)))
        (det_dir / p.name).write_text("".join(line + "\n" for line in lines))


class TestEvaluate:
    def scenario_dirs(self, tmp_path):
        gt, det = tmp_path / "gt", tmp_path / "det"
        gt.mkdir()
        det.mkdir()
        (gt / "img1.txt").write_text("0 0 1 0 1 1 0 1 table 0\n")
        (gt / "img2.txt").write_text("10 10 11 10 11 11 10 11 table 0\n")
        (det / "img1.txt").write_text("0 0 1 0 1 1 0 1 table 0.9\n0 0 1 0 1 1 0 1 table 0.8\n")
        (det / "img2.txt").write_text("11 11 10 11 10 10 11 10 table 0.7\n")
        return gt, det

    def test_scenario(self, tmp_path, capsys):
        gt, det = self.scenario_dirs(tmp_path)
        assert main(["evaluate", "--det-dir", str(det), "--gt-dir", str(gt)]) == 0
        out = capsys.readouterr().out
        assert "ap50_t90=0.5455" in out and "ap75_t40=0.5455" in out
        report = (tmp_path / "det.eval.txt").read_text()
        assert "ap50_t90=0.5455\n" in report

    def test_self_match(self, tmp_path, capsys):
        gt = tmp_path / "gt"
        gt.mkdir()
        write_dota_file(gt / "a.txt", [Instance(EQ6), Instance(EQ5)])
        write_dota_file(gt / "b.txt", [Instance(Quad.from_flat([5, 5, 50, 9, 46, 60, 1, 56]))])
        make_dets_from_gt(gt, tmp_path / "det")
        assert main(["evaluate", "--det-dir", str(tmp_path / "det"), "--gt-dir", str(gt)]) == 0
        out = capsys.readouterr().out
        assert "ap50_t90=1.0000" in out and "ap75_t40=1.0000" in out

    def test_empty_det_dir(self, tmp_path, capsys):
        gt, _ = self.scenario_dirs(tmp_path)
        (tmp_path / "empty").mkdir()
        code = main(["evaluate", "--det-dir", str(tmp_path / "empty"), "--gt-dir", str(gt)])
        captured = capsys.readouterr()
        assert "ap50_t90=0.0000" in captured.out and "ap75_t40=0.0000" in captured.out
        assert code == 2 and "missing detections for img1" in captured.err

    def test_custom_config_and_report_path(self, tmp_path, capsys):
        gt, det = self.scenario_dirs(tmp_path)
        report = tmp_path / "r.txt"
        assert main(["evaluate", "--det-dir", str(det), "--gt-dir", str(gt),
                     "--t-iou", "0.5", "--t-theta", "180", "--report", str(report)]) == 0
        text = report.read_text()
        assert "custom=0.5455" in text and "custom.t_theta=180" in text

    def test_all_points(self, tmp_path, capsys):
        gt, det = self.scenario_dirs(tmp_path)
        assert main(["evaluate", "--det-dir", str(det), "--gt-dir", str(gt), "--all-points"]) == 0
        assert "ap50_t90=0.5000" in capsys.readouterr().out

    def test_bad_threshold(self, tmp_path):
        gt, det = self.scenario_dirs(tmp_path)
        assert main(["evaluate", "--det-dir", str(det), "--gt-dir", str(gt), "--t-theta", "181"]) == 1


class TestRender:
    def test_eq6_polygon(self, tmp_path):
        write_image(tmp_path / "p.png", Raster.blank(744, 1126))
        write_dota_file(tmp_path / "p.txt", [Instance(EQ6)])
        out = tmp_path / "svg" / "p.svg"
        assert main(["render", "--img", str(tmp_path / "p.png"), "--ann", str(tmp_path / "p.txt"),
                     "--out", str(out)]) == 0
        root = ET.parse(out).getroot()
        ns = {"s": "http://www.w3.org/2000/svg"}
        polys = root.findall(".//s:polygon", ns)
        assert [p.get("points") for p in polys] == ["63,1006 63,119 666,119 666,1006"]
        assert root.find("s:image", ns).get("href") == "../p.png"
        assert root.find(".//s:circle", ns).get("cx") == "63"
        edge = root.find(".//s:line", ns)
        assert (edge.get("x1"), edge.get("y1"), edge.get("x2"), edge.get("y2")) == ("63", "1006", "63", "119")

    def test_zero_and_three_instances(self, tmp_path):
        write_image(tmp_path / "p.png", Raster.blank(50, 50))
        (tmp_path / "empty.txt").write_text("")
        assert main(["render", "--img", str(tmp_path / "p.png"), "--ann", str(tmp_path / "empty.txt"),
                     "--out", str(tmp_path / "e.svg")]) == 0
        ns = {"s": "http://www.w3.org/2000/svg"}
        root = ET.parse(tmp_path / "e.svg").getroot()
        assert root.findall(".//s:polygon", ns) == [] and root.find("s:image", ns) is not None

        quads = [Quad.from_flat([i, i, i + 5, i, i + 5, i + 5, i, i + 5]) for i in (1, 10, 20)]
        write_dota_file(tmp_path / "three.txt", [Instance(q) for q in quads])
        assert main(["render", "--img", str(tmp_path / "p.png"), "--ann", str(tmp_path / "three.txt"),
                     "--out", str(tmp_path / "t.svg")]) == 0
        polys = ET.parse(tmp_path / "t.svg").getroot().findall(".//s:polygon", ns)
        assert [p.get("points").split()[0] for p in polys] == ["1,1", "10,10", "20,20"]

    def test_missing_input(self, tmp_path):
        assert main(["render", "--img", str(tmp_path / "x.png"), "--ann", str(tmp_path / "x.txt"),
                     "--out", str(tmp_path / "o.svg")]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "obbtable", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "evaluate" in proc.stdout


def test_bad_invocation():
    assert main(["nonsense"]) == 1
