"""Rewrite a new-style OpenCV Haar cascade XML in the legacy layout.

OpenCV wheels only ship the "opencv-cascade-classifier" layout, while
lbphface reads the older "opencv-haar-classifier" layout.  The numbers are
copied verbatim (as text), so the converted file describes the same model.

    python tools/convert_cascade.py haarcascade_frontalface_default.xml out.xml
"""

from __future__ import annotations

import argparse
import re
import xml.etree.ElementTree as ET
from pathlib import Path


def _floats(text: str) -> list[str]:
    return text.split()


def convert(source: str, root_name: str) -> str:
    head = re.match(r"\s*<\?xml[^>]*\?>\s*(<!--.*?-->)?", source, re.S)
    comment = head.group(1) if head and head.group(1) else ""

    root = ET.fromstring(source)
    cascade = root.find("cascade")
    if cascade is None or cascade.findtext("featureType", "").strip() != "HAAR":
        raise ValueError("not a new-style HAAR cascade")
    width = cascade.findtext("width").strip()
    height = cascade.findtext("height").strip()

    features = []
    for feat in cascade.find("features"):
        rects = [" ".join(r.text.split()) for r in feat.find("rects")]
        tilted = (feat.findtext("tilted") or "0").strip()
        features.append((rects, tilted))

    out = ['<?xml version="1.0"?>']
    if comment:
        out.append(comment)
    out.append("<opencv_storage>")
    out.append(f'<{root_name} type_id="opencv-haar-classifier">')
    out.append(f"  <size>{width} {height}</size>")
    out.append("  <stages>")
    for si, stage in enumerate(cascade.find("stages")):
        out.append("    <_>")
        out.append(f"      <!-- stage {si} -->")
        out.append("      <trees>")
        for ti, weak in enumerate(stage.find("weakClassifiers")):
            nodes = _floats(weak.findtext("internalNodes"))
            leaves = _floats(weak.findtext("leafValues"))
            out.append("        <_>")
            out.append(f"          <!-- tree {ti} -->")
            for ni in range(len(nodes) // 4):
                left, right, fidx, thr = nodes[4 * ni : 4 * ni + 4]
                rects, tilted = features[int(fidx)]
                out.append("          <_>")
                out.append("            <feature>")
                out.append("              <rects>")
                for r in rects:
                    out.append(f"                <_>{r}</_>")
                out.append("              </rects>")
                out.append(f"              <tilted>{tilted}</tilted></feature>")
                out.append(f"            <threshold>{thr}</threshold>")
                for side, child in (("left", int(left)), ("right", int(right))):
                    if child > 0:
                        out.append(f"            <{side}_node>{child}</{side}_node>")
                    else:
                        out.append(f"            <{side}_val>{leaves[-child]}</{side}_val>")
                out.append("          </_>")
            out.append("        </_>")
        out.append("      </trees>")
        out.append(f"      <stage_threshold>{stage.findtext('stageThreshold').strip()}</stage_threshold>")
        out.append(f"      <parent>{si - 1}</parent>")
        out.append("      <next>-1</next>")
        out.append("    </_>")
    out.append("  </stages>")
    out.append(f"</{root_name}>")
    out.append("</opencv_storage>")
    return "\n".join(out) + "\n"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path)
    ap.add_argument("dest", type=Path)
    ap.add_argument("--root-name", default=None, help="root element name (default: dest stem)")
    args = ap.parse_args()
    name = args.root_name or args.dest.stem.replace("-", "_")
    args.dest.write_text(convert(args.source.read_text(), name))


if __name__ == "__main__":
    main()
