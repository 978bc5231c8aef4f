"""Write the synthetic model directory, a few rendered scenes and their annotations.

    python scripts/make_fixture.py out/fixture
    alpr run out/fixture/images --model-dir out/fixture/models --out out/run
    alpr eval --results out/run/results.jsonl --annotations out/fixture/images/annotations.txt
"""

import argparse
from pathlib import Path

from alpr.evaluation import save_annotations
from alpr.inference import save_image
from alpr.synthetic import SceneVehicle, render_scene, scene_annotation, write_fixture

SCENES = {
    "single_car.png": [SceneVehicle(1)],
    "car_and_moto.png": [SceneVehicle(0, "QRS5678"), SceneVehicle(2, "XYZ9876", motorcycle=True)],
    "four_cars.png": [SceneVehicle(c, t) for c, t in enumerate(["ABC1234", "DEF5678", "GHJ9012", "KLM3456"])],
    "empty_road.png": [],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    args = ap.parse_args()
    write_fixture(args.out / "models")
    images = args.out / "images"
    images.mkdir(parents=True, exist_ok=True)
    records = []
    for name, vehicles in SCENES.items():
        save_image(images / name, render_scene(vehicles))
        records.append(scene_annotation(vehicles, name))
    save_annotations(images / "annotations.txt", records)
    print(f"models in {args.out / 'models'}, {len(SCENES)} scenes in {images}")


if __name__ == "__main__":
    main()
