"""JSON scene files and JSON-lines episode files, versioned by a ``format`` field."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from ..geometry import Pose
from .episodes import Episode
from .scene import Footprint, Scene, SceneObject

FORMAT = "v1"


class DataFormatError(ValueError):
    pass


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": FORMAT,
        "id": scene.id,
        "bounds": list(scene.bounds),
        "walls": [list(w) for w in scene.walls],
        "objects": [{"center": list(o.center),
                     "footprint": {"kind": o.footprint.kind, "size": list(o.footprint.size)},
                     "category_id": o.category_id,
                     "attributes": list(o.attributes)} for o in scene.objects],
        "grid_cell": scene.grid_cell,
        "inflation": scene.inflation,
        "n_categories": scene.n_categories,
        "n_features": scene.n_features,
    }


def _check_format(d: dict, where: str) -> None:
    if not isinstance(d, dict):
        raise DataFormatError(f"{where}: expected a JSON object")
    fmt = d.get("format")
    if fmt != FORMAT:
        raise DataFormatError(f"{where}: unsupported format {fmt!r} (expected {FORMAT!r})")


def scene_from_dict(d: dict, where: str = "scene") -> Scene:
    _check_format(d, where)
    try:
        objects = tuple(SceneObject((float(o["center"][0]), float(o["center"][1])),
                                    Footprint(o["footprint"]["kind"], tuple(float(v) for v in o["footprint"]["size"])),
                                    int(o["category_id"]), tuple(float(v) for v in o["attributes"]))
                        for o in d["objects"])
        scene = Scene(str(d["id"]), tuple(float(v) for v in d["bounds"]),
                      tuple(tuple(float(v) for v in w) for w in d["walls"]), objects,
                      float(d.get("grid_cell", 0.06)), float(d.get("inflation", 0.15)),
                      int(d.get("n_categories", 8)), int(d.get("n_features", 8)))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataFormatError(f"{where}: malformed scene record ({exc!r})") from None
    for o in scene.objects:
        if o.footprint.kind not in ("disc", "rect") or not 0 <= o.category_id < scene.n_categories \
                or len(o.attributes) != scene.n_features:
            raise DataFormatError(f"{where}: invalid object {o}")
    return scene


def write_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n")


def read_scene(path) -> Scene:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return scene_from_dict(d, str(path))


def episode_to_dict(ep: Episode) -> dict:
    return {
        "format": FORMAT,
        "episode_id": ep.episode_id,
        "scene_id": ep.scene_id,
        "start": {"x": ep.start.x, "y": ep.start.y, "theta": ep.start.theta},
        "goal": list(ep.goal),
        "path": [list(p) for p in ep.path],
        "instruction_tokens": list(ep.instruction_tokens),
        "instruction_text": ep.instruction_text,
        "landmarks": list(ep.landmarks),
    }


def episode_from_dict(d: dict, where: str = "episode") -> Episode:
    _check_format(d, where)
    try:
        ep = Episode(
            episode_id=str(d["episode_id"]),
            scene_id=str(d["scene_id"]),
            start=Pose(float(d["start"]["x"]), float(d["start"]["y"]), float(d["start"]["theta"])),
            goal=(float(d["goal"][0]), float(d["goal"][1])),
            path=tuple((float(p[0]), float(p[1])) for p in d["path"]),
            instruction_tokens=tuple(int(t) for t in d["instruction_tokens"]),
            instruction_text=str(d["instruction_text"]),
            landmarks=tuple(int(i) for i in d.get("landmarks", ())),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataFormatError(f"{where}: malformed episode record ({exc!r})") from None
    if not ep.path:
        raise DataFormatError(f"{where}: empty path")
    return ep


def write_episodes(path, episodes: Iterable[Episode]) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep)) + "\n")


def read_episodes(path) -> list[Episode]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{where}: {exc.msg}") from None
            out.append(episode_from_dict(d, where))
    return out
