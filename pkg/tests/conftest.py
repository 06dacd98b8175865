from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roadtopo.errors import TemplateOverflow  # noqa: E402
from roadtopo.synth import SceneSpec, Template, generate_scene  # noqa: E402


def scene_specs(seeds, lanes=(1, 2, 3), templates=tuple(Template), **kw):
    for seed in seeds:
        for t in templates:
            for n in lanes:
                yield SceneSpec(seed=seed, template=t, lanes_per_direction=n, **kw)


def scenes(seeds, lanes=(1, 2, 3), templates=tuple(Template), **kw):
    """(spec, graph) for every combination that fits on the grid."""
    for spec in scene_specs(seeds, lanes, templates, **kw):
        try:
            g, _ = generate_scene(spec)
        except TemplateOverflow:
            continue
        yield spec, g


@pytest.fixture(scope="session")
def corpus():
    return list(scenes(range(4)))
