#!/usr/bin/env python3
"""Regenerate the checked-in test fixtures under tests/data/.

Writes the demo lexicon + seed list, the bundled 48x48 image, the golden
CVIS saliency map (verified against the brute-force transcription before
freezing), and the three annotated fixture photos used by the optional
real-backend integration test.

Run from the repository root:  python3 scripts/make_golden_fixtures.py
"""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, ImageDraw

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "tests" / "data"
sys.path.insert(0, str(ROOT / "tests"))

from convis.encoder import Image, MockHashBackend
from convis.lexdb import filter_hierarchy, load_lexicon, load_seed_list
from convis.saliency import PatchEmbeddingCache, SaliencyConfig, compute_saliency
from convis.simcore import build_definition_matrix

from oracles import saliency_ref

LEXICON = [
    ("entity.n.01", ["entity"], [],
     "that which is perceived or known or inferred to have its own distinct existence"),
    ("physical_entity.n.01", ["physical entity"], ["entity.n.01"],
     "an entity that has physical existence"),
    ("object.n.01", ["object", "physical object"], ["physical_entity.n.01"],
     "a tangible and visible entity; an entity that can cast a shadow"),
    ("living_thing.n.01", ["living thing", "animate thing"], ["object.n.01"],
     "a living (or once living) entity"),
    ("organism.n.01", ["organism", "being"], ["living_thing.n.01"],
     "a living thing that has (or can develop) the ability to act or function independently"),
    ("animal.n.01", ["animal", "animate being", "beast", "creature"], ["organism.n.01"],
     "a living organism characterized by voluntary movement"),
    ("dog.n.01", ["dog", "domestic dog"], ["animal.n.01"],
     "a member of the genus Canis that has been domesticated by man since prehistoric times"),
    ("cat.n.01", ["cat", "true cat"], ["animal.n.01"],
     "feline mammal usually having thick soft fur and no ability to roar"),
    ("plant.n.02", ["plant", "flora", "plant life"], ["organism.n.01"],
     "a living organism lacking the power of locomotion"),
    ("grass.n.01", ["grass"], ["plant.n.02"],
     "narrow-leaved green herbage grown as lawns and used as pasture for grazing animals"),
    ("natural_object.n.01", ["natural object"], ["object.n.01"],
     "an object occurring naturally; not made by man"),
    ("sky.n.01", ["sky"], ["natural_object.n.01"],
     "the atmosphere and outer space as viewed from the earth"),
    ("plant_part.n.01", ["plant part", "plant structure"], ["natural_object.n.01"],
     "any part of a plant or fungus"),
    ("fruit.n.01", ["fruit"], ["plant_part.n.01"],
     "the ripened reproductive body of a seed plant"),
    ("edible_fruit.n.01", ["edible fruit"], ["fruit.n.01"],
     "edible reproductive body of a seed plant especially one having sweet flesh"),
    ("banana.n.02", ["banana"], ["edible_fruit.n.01"],
     "elongated crescent-shaped yellow fruit with soft sweet flesh"),
    ("artifact.n.01", ["artifact", "artefact"], ["object.n.01"],
     "a man-made object taken as a whole"),
    ("instrumentality.n.03", ["instrumentality", "instrumentation"], ["artifact.n.01"],
     "an artifact (or system of artifacts) that is instrumental in accomplishing some end"),
    ("wheeled_vehicle.n.01", ["wheeled vehicle"], ["instrumentality.n.03"],
     "a vehicle that moves on wheels and usually has a container for transporting things or people"),
    ("motor_vehicle.n.01", ["motor vehicle", "automotive vehicle"], ["wheeled_vehicle.n.01"],
     "a self-propelled wheeled vehicle that does not run on rails"),
    ("car.n.01", ["car", "auto", "automobile", "machine", "motorcar"], ["motor_vehicle.n.01"],
     "a motor vehicle with four wheels; usually propelled by an internal combustion engine"),
    ("game_equipment.n.01", ["game equipment"], ["instrumentality.n.03"],
     "equipment or apparatus used in playing a game"),
    ("ball.n.01", ["ball"], ["game_equipment.n.01"],
     "round object that is hit or thrown or kicked in games"),
    ("road.n.01", ["road", "route"], ["artifact.n.01"],
     "an open way (generally public) for travel or transportation"),
]

SEEDS = [
    "dog.n.01", "cat.n.01", "grass.n.01", "sky.n.01",
    "banana.n.02", "car.n.01", "ball.n.01", "road.n.01",
]

GOLDEN_CONCEPT = "animal.n.01"
GOLDEN_CONFIG = SaliencyConfig(delta_s=8, delta_l=16, omega=16)
GOLDEN_DIMENSION = 32


def write_lexicon_and_seeds():
    lines = [
        json.dumps({"id": sid, "lemmas": lemmas, "definition": definition,
                    "hypernyms": parents})
        for sid, lemmas, parents, definition in LEXICON
    ]
    (DATA / "lexicon.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (DATA / "seeds.txt").write_text(
        "# demo seed list: leaves of the bundled lexicon\n" + "\n".join(SEEDS) + "\n",
        encoding="utf-8",
    )


def make_golden_image() -> Image:
    rng = np.random.Generator(np.random.PCG64(2024))
    base = rng.integers(0, 60, size=(48, 48, 3), dtype=np.uint8).astype(np.int32)
    yy, xx = np.mgrid[0:48, 0:48]
    base[:, :, 0] += (xx * 3).astype(np.int32)
    base[:, :, 1] += (yy * 2).astype(np.int32)
    base[10:30, 18:40, 2] += 120
    base[32:44, 4:20, 0] += 100
    return Image(np.clip(base, 0, 255).astype(np.uint8))


def write_golden():
    img = make_golden_image()
    img.save(DATA / "image48.png")
    reloaded = Image.load(DATA / "image48.png")
    assert reloaded == img, "PNG round trip must be lossless"

    lexicon = load_lexicon(DATA / "lexicon.jsonl")
    hier = filter_hierarchy(lexicon, load_seed_list(DATA / "seeds.txt"))
    backend = MockHashBackend(dimension=GOLDEN_DIMENSION)
    defmat = build_definition_matrix(hier, backend)
    smap = compute_saliency(
        reloaded, GOLDEN_CONCEPT, GOLDEN_CONFIG, backend, defmat, hier,
        cache=PatchEmbeddingCache(),
    )

    parent_map = {sid: hier.synset(sid).hypernym_ids for sid in hier.ids()}
    definitions = {sid: hier.synset(sid).definition for sid in hier.ids()}
    expected = saliency_ref(
        reloaded, GOLDEN_CONCEPT, backend, parent_map, definitions,
        GOLDEN_CONFIG.delta_s, GOLDEN_CONFIG.delta_l, GOLDEN_CONFIG.omega,
        GOLDEN_CONFIG.window_mode, GOLDEN_CONFIG.boundary_policy,
    )
    error = float(np.max(np.abs(smap.values - expected)))
    assert error < 1e-9, f"golden map disagrees with transcription by {error}"

    smap.save_cvis(DATA / "golden.cvis")
    print(f"golden map: {smap.width}x{smap.height}, "
          f"min {smap.values.min():.6f}, max {smap.values.max():.6f}, "
          f"oracle max abs err {error:.2e}")


def draw_photos():
    photos = DATA / "photos"
    photos.mkdir(exist_ok=True)
    annotations = []

    # 1. Blue sky above a green field; concept: sky.
    pil = PILImage.new("RGB", (224, 224))
    draw = ImageDraw.Draw(pil)
    for y in range(134):
        t = y / 134
        draw.line([(0, y), (224, y)],
                  fill=(int(110 + 40 * t), int(175 + 20 * t), int(230 + 15 * t)))
    draw.ellipse([158, 18, 200, 60], fill=(255, 250, 215))
    for y in range(134, 224):
        t = (y - 134) / 90
        draw.line([(0, y), (224, y)], fill=(int(56 - 20 * t), int(150 - 35 * t), 40))
    pil.save(photos / "sky_field.png")
    annotations.append({
        "file": "sky_field.png",
        "concept": "sky.n.01",
        "unrelated": "car.n.01",
        "region": [0, 0, 224, 134],
    })

    # 2. Yellow banana crescent on a pale table; concept: banana.
    pil = PILImage.new("RGB", (224, 224), (242, 236, 226))
    draw = ImageDraw.Draw(pil)
    for k in range(18):
        draw.arc([36 - k, 70 - k, 196 + k, 210 + k], start=205, end=335,
                 fill=(238, 201, 52), width=3)
    draw.arc([36, 70, 196, 210], start=205, end=335, fill=(196, 158, 30), width=4)
    draw.ellipse([42, 98, 58, 114], fill=(112, 84, 40))
    draw.ellipse([176, 96, 192, 112], fill=(112, 84, 40))
    pil.save(photos / "banana.png")
    annotations.append({
        "file": "banana.png",
        "concept": "banana.n.02",
        "unrelated": "sky.n.01",
        "region": [30, 60, 200, 150],
    })

    # 3. Red ball on a gray floor; concept: ball.
    pil = PILImage.new("RGB", (224, 224), (208, 206, 200))
    draw = ImageDraw.Draw(pil)
    draw.rectangle([0, 150, 224, 224], fill=(130, 128, 124))
    draw.ellipse([70, 60, 170, 160], fill=(188, 34, 30))
    draw.ellipse([88, 76, 118, 106], fill=(226, 96, 88))
    draw.ellipse([74, 152, 166, 172], fill=(104, 102, 99))
    pil.save(photos / "ball.png")
    annotations.append({
        "file": "ball.png",
        "concept": "ball.n.01",
        "unrelated": "grass.n.01",
        "region": [70, 60, 170, 160],
    })

    (photos / "annotations.json").write_text(
        json.dumps(annotations, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(annotations)} fixture photos")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    write_lexicon_and_seeds()
    write_golden()
    draw_photos()


if __name__ == "__main__":
    main()
