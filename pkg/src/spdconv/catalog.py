"""Graph files shipped with the package, and lookup by name or path.

Regenerate the files after changing a builder with ``python -m spdconv.catalog``.
"""
from __future__ import annotations

import sys
from pathlib import Path

from .builders import (
    build_resnet18,
    build_resnet18_spd,
    build_resnet50,
    build_resnet50_spd,
    build_yolov5_skeleton,
)
from .graph import Graph, format_graph, load_graph

GRAPH_DIR = Path(__file__).parent / "graphs"

BUNDLED = {
    "resnet18": (build_resnet18, "ResNet18, 10 classes, 3x32x32 input"),
    "resnet18-spd": (build_resnet18_spd, "ResNet18 with SPD downsampling, 10 classes, 3x32x32 input"),
    "resnet50": (build_resnet50, "ResNet50, 10 classes, 3x32x32 input"),
    "resnet50-spd": (build_resnet50_spd, "ResNet50 with SPD downsampling, 10 classes, 3x32x32 input"),
    **{
        f"yolov5-skeleton-{v}": (lambda v=v: build_yolov5_skeleton(v), f"YOLOv5-{v} backbone and neck, 3x640x640 input")
        for v in "nsml"
    },
}


def render(name: str) -> str:
    build, desc = BUNDLED[name]
    return f"# {name}: {desc}\n# generated by spdconv.catalog from the builder of the same name\n" + format_graph(build())


def resolve_graph(ref: str) -> Graph:
    """Load ``ref`` as a file path, or else as the name of a bundled graph."""
    path = Path(ref)
    if path.is_file():
        return load_graph(path)
    name = path.name[:-6] if path.name.endswith(".graph") else path.name
    bundled = GRAPH_DIR / f"{name}.graph"
    if bundled.is_file():
        return load_graph(bundled)
    raise FileNotFoundError(f"no graph file {ref!r} and no bundled graph named {name!r} (have: {', '.join(BUNDLED)})")


def generate(directory: Path = GRAPH_DIR) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in BUNDLED:
        p = directory / f"{name}.graph"
        p.write_text(render(name), encoding="utf-8")
        written.append(p)
    return written


if __name__ == "__main__":
    for p in generate(Path(sys.argv[1]) if len(sys.argv) > 1 else GRAPH_DIR):
        print(p)
