import argparse

from ..services.heatmap import top_k_boxes, write_heatmap
from ..services.imaging import composite_preview, write_ppm
from ..services.topnet import PlacementRegressor, predict_heatmap, regression_forward
from .common import common_parent, emit, input_parent, load_model, load_pair, object_aspect, output_dir


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(
        "predict",
        parents=[common_parent(), input_parent()],
        help="score every placement for one background/object pair",
    )
    parser.add_argument("--k", type=int, default=5, help="number of boxes to report")
    parser.add_argument("--out", help="directory for the heatmap and preview images")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    model, cfg = load_model(args)
    bg, obj, scene = load_pair(args)
    aspect = object_aspect(obj, scene)
    out = output_dir(args.out, "predict")

    if isinstance(model, PlacementRegressor):
        box = regression_forward(model, bg, obj, aspect)
        boxes = [(box, 1.0)]
    else:
        heatmap = predict_heatmap(model, bg, obj, cfg.grid)
        write_heatmap(out / "heatmap.toph", heatmap)
        boxes = top_k_boxes(heatmap, max(1, args.k), aspect)

    previews = []
    for rank, (box, _) in enumerate(boxes):
        path = out / f"preview_{rank}.ppm"
        write_ppm(path, composite_preview(bg, obj, box))
        previews.append(str(path))

    payload = {
        "boxes": [{"box": box.as_list(), "score": score} for box, score in boxes],
        "previews": previews,
        "heatmap": None if isinstance(model, PlacementRegressor) else str(out / "heatmap.toph"),
        "forward_calls": model.forward_calls,
    }
    if scene is not None:
        payload["gt"] = scene.gt.box.as_list()
    lines = [f"{rank}: box={[round(v, 2) for v in box.as_list()]} score={score:.4f}" for rank, (box, score) in enumerate(boxes)]
    return emit(args, payload, "\n".join(lines) + "\n")
