"""Command-line interface; thin wrappers over the core package."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import httpx
import numpy as np

from . import adapter, bench, curation
from .clients import HashEmbedder, HttpEmbeddingClient
from .config import load_config
from .encoding import EncodingMode, LayoutSpec, assign_positions
from .errors import AstraError
from .index import FlatIndex, build_index, entries_from_records, read_ingest_jsonl
from .pose import RasterStyle, encode_png, load_pose_map, match_and_score, rasterize
from .retrieval import GateConfig, UserPrompt, retrieve
from .service import build_clients
from .store import PoseStore


@click.group()
@click.option("--log-level", default="WARNING", show_default=True)
def cli(log_level: str) -> None:
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _embedder(embed_url: str | None, timeout: float = 2.0):
    return HttpEmbeddingClient(embed_url, timeout) if embed_url else HashEmbedder()


@cli.command("build-index")
@click.argument("input_jsonl", type=click.Path())
@click.option("--output", "-o", required=True, type=click.Path())
@click.option("--pose-store", type=click.Path(), default=None,
              help="Verify that every pose_ref resolves in this store.")
@click.option("--embed-url", default=None, help="Embedding endpoint for records without vectors.")
def build_index_cmd(input_jsonl, output, pose_store, embed_url) -> None:
    """Ingest JSON-lines records {id, prompt, pose_ref, vector?} into an index file."""
    if not Path(input_jsonl).is_file():
        _fail(f"input file {input_jsonl!r} does not exist")
    try:
        records = read_ingest_jsonl(input_jsonl)
        entries = entries_from_records(records, embedder=_embedder(embed_url))
        if pose_store is not None:
            store = PoseStore(pose_store)
            missing = [e.pose_ref for e in entries if not store.contains(e.pose_ref)]
            if missing:
                _fail(f"unresolvable pose refs: {missing[:5]}")
        index = build_index(entries)
        index.save(output)
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(entries)} entries to {output}")


@cli.command("index-info")
@click.argument("index_path", type=click.Path())
def index_info_cmd(index_path) -> None:
    """Entry count and dimension of an index file."""
    try:
        index = FlatIndex.load(index_path)
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(json.dumps({"entries": len(index), "dim": index.dim, "path": str(index_path)}))


@cli.command("retrieve")
@click.option("--prompt", required=True)
@click.option("--index", "index_path", type=click.Path(), default=None)
@click.option("--alpha-u", type=float, default=None)
@click.option("--embed-url", default=None)
@click.option("--normalize-url", default=None)
@click.option("--passthrough", is_flag=True, help="Skip prompt normalization.")
@click.option("--server", default=None, help="Call a running service instead of local execution.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def retrieve_cmd(prompt, index_path, alpha_u, embed_url, normalize_url, passthrough, server, config_path) -> None:
    """One-shot retrieval; prints the outcome as JSON."""
    if server:
        try:
            resp = httpx.post(f"{server}/retrieve", json={"prompt": prompt}, timeout=10.0)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            _fail(f"service call failed: {exc}")
        click.echo(json.dumps(resp.json(), indent=2))
        return
    try:
        config = load_config(
            path=config_path,
            index_path=index_path,
            alpha_u=alpha_u,
            embed_url=embed_url,
            normalize_url=None if passthrough else normalize_url,
        )
        if not config.index_path:
            _fail("no index configured; pass --index or set ASTRA_INDEX_PATH")
        index = FlatIndex.load(config.index_path)
        clients = build_clients(config)
        outcome = retrieve(UserPrompt(prompt), index, clients, GateConfig(config.alpha_u))
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    doc = {
        "kind": outcome.kind,
        "canonical_query": outcome.canonical_query.text,
        "source": outcome.canonical_query.source,
    }
    if outcome.is_hit:
        doc.update(pose_ref=outcome.pose_ref, score=outcome.score, entry_id=outcome.entry_id)
    elif outcome.best_score is not None:
        doc["best_score"] = outcome.best_score
    click.echo(json.dumps(doc, indent=2))


@cli.command("rasterize")
@click.argument("pose_json", type=click.Path())
@click.argument("output_png", type=click.Path())
@click.option("--joint-radius", type=int, default=4, show_default=True)
@click.option("--limb-thickness", type=int, default=4, show_default=True)
def rasterize_cmd(pose_json, output_png, joint_radius, limb_thickness) -> None:
    """Render a pose-map JSON document to a PNG skeleton image."""
    try:
        pose_map = load_pose_map(pose_json)
        style = RasterStyle(joint_radius=joint_radius, limb_thickness=limb_thickness)
        Path(output_png).write_bytes(encode_png(rasterize(pose_map, style)))
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {output_png}")


@cli.command("oks")
@click.argument("predicted_json", type=click.Path())
@click.argument("truth_json", type=click.Path())
def oks_cmd(predicted_json, truth_json) -> None:
    """Mean keypoint similarity between two pose-map files."""
    try:
        pred = load_pose_map(predicted_json)
        gt = load_pose_map(truth_json)
        score = match_and_score(list(pred.people), list(gt.people))
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"{score}")


@cli.command("calibrate")
@click.option("--weights-csv", required=True, type=click.Path(),
              help="CSV id,s1,s2,s3,target with preference targets in [0,1].")
@click.option("--threshold-csv", required=True, type=click.Path(),
              help="CSV id,s1,s2,s3,target with 0/1 acceptance labels.")
@click.option("--output", "-o", required=True, type=click.Path())
def calibrate_cmd(weights_csv, threshold_csv, output) -> None:
    """Calibrate aggregation weights and acceptance threshold; write parameter JSON."""
    try:
        pref_rows = curation.read_samples_csv(weights_csv, target="pref")
        weights = curation.calibrate_weights([s for _, s in pref_rows])
        label_rows = curation.read_samples_csv(threshold_csv, target="label")
        scored = [
            (curation.aggregate_score(s.scores, weights), bool(s.accept_label))
            for _, s in label_rows
        ]
        threshold = curation.calibrate_threshold(scored)
        curation.save_params(output, weights, threshold)
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(
        json.dumps(
            {"w1": weights.w1, "w2": weights.w2, "w3": weights.w3, "theta": threshold.theta}
        )
    )


@cli.command("bench-build")
@click.option("--annotations", required=True, type=click.Path())
@click.option("--images-root", type=click.Path(), default=None)
@click.option("--captions", type=click.Path(), default=None)
@click.option("--limit", type=int, default=None)
@click.option("--max-subjects", type=int, default=3, show_default=True)
@click.option("--output", "-o", "out_dir", required=True, type=click.Path())
def bench_build_cmd(annotations, images_root, captions, limit, max_subjects, out_dir) -> None:
    """Build benchmark items from COCO annotations into a directory."""
    try:
        items = bench.build_benchmark(
            Path(annotations).read_text(encoding="utf-8"),
            images_root=images_root,
            limit=limit,
            max_subjects=max_subjects,
            captions=Path(captions).read_text(encoding="utf-8") if captions else None,
        )
        out = Path(out_dir)
        (out / "pose").mkdir(parents=True, exist_ok=True)
        (out / "crops").mkdir(exist_ok=True)
        manifest = []
        for item in items:
            pose_path = out / "pose" / f"{item.image_id}.json"
            pose_path.write_text(json.dumps(item.gt_pose_map.to_dict()), encoding="utf-8")
            crop_paths = []
            for n, crop in enumerate(item.identity_crops):
                crop_path = out / "crops" / f"{item.image_id}_{n}.png"
                crop_path.write_bytes(encode_png(crop))
                crop_paths.append(str(crop_path))
            manifest.append(
                {
                    "image_id": item.image_id,
                    "prompt": item.prompt,
                    "subject_count": item.subject_count,
                    "pose_map": str(pose_path),
                    "crops": crop_paths,
                }
            )
        (out / "items.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"built {len(items)} benchmark items in {out_dir}")


@cli.command("bench-eval")
@click.option("--bench", "bench_dir", required=True, type=click.Path())
@click.option("--candidates", required=True, type=click.Path())
@click.option("--output", "-o", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--method", default="candidate", show_default=True)
@click.option("--plugin-url", "plugin_urls", multiple=True,
              help="name=url of an external metric endpoint; repeatable.")
def bench_eval_cmd(bench_dir, candidates, output, fmt, method, plugin_urls) -> None:
    """Evaluate candidate pose maps against a built benchmark."""
    try:
        root = Path(bench_dir)
        manifest = json.loads((root / "items.json").read_text(encoding="utf-8"))
        items = []
        for entry in manifest:
            pose_map = load_pose_map(entry["pose_map"])
            items.append(
                bench.BenchmarkItem(
                    image_id=int(entry["image_id"]),
                    prompt=entry["prompt"],
                    gt_pose_map=pose_map,
                    subject_count=int(entry["subject_count"]),
                    crop_paths=tuple(entry.get("crops", ())),
                )
            )
        candidate_maps = bench.load_candidates(candidates)
        plugins = []
        for spec in plugin_urls:
            name, _, url = spec.partition("=")
            if not url:
                _fail(f"--plugin-url must be name=url, got {spec!r}")
            plugins.append(bench.HttpMetricPlugin(name, url))
        candidate_paths = None
        if plugins:
            cand_dir = Path(output).parent / "candidates"
            cand_dir.mkdir(parents=True, exist_ok=True)
            candidate_paths = {}
            for image_id, pose_map in candidate_maps.items():
                p = cand_dir / f"{image_id}.json"
                p.write_text(json.dumps(pose_map.to_dict()), encoding="utf-8")
                candidate_paths[image_id] = str(p)
        report = bench.evaluate(items, candidate_maps, plugins, candidate_paths, method=method)
        bench.emit_report(report, output, fmt)
    except (AstraError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"mean oks: {report.aggregates['oks']}")


def _parse_grid(value: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"expected WxH, got {value!r}") from None


@cli.command("kernel-demo")
@click.option("--latent", default="4x4", show_default=True)
@click.option("--ref", "refs", multiple=True, help="Reference grid WxH; repeatable.")
@click.option("--pose", default=None, help="Pose grid WxH.")
@click.option("--text-len", type=int, default=0, show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in EncodingMode]),
              default=EncodingMode.ASYMMETRIC.value, show_default=True)
@click.option("--grad-check", "run_grad_check", is_flag=True,
              help="Run the adapter gradient check instead of printing positions.")
@click.option("--seed", type=int, default=0, show_default=True)
def kernel_demo_cmd(latent, refs, pose, text_len, mode, run_grad_check, seed) -> None:
    """Print the position table for a layout, or run the adapter gradient check."""
    if run_grad_check:
        rng = np.random.default_rng(seed)
        head = adapter.init_head(rng, d_text=8, d_visual=5, d_attn=6, zero_output=False)
        text_emb = rng.normal(size=(3, 8))
        visual = rng.normal(size=(4, 5))
        err = adapter.grad_check("dsm_forward", (text_emb, visual), head)
        click.echo(f"max relative gradient error: {err:.3e}")
        return
    try:
        layout = LayoutSpec(
            latent=_parse_grid(latent),
            refs=tuple(_parse_grid(r) for r in refs),
            pose=_parse_grid(pose) if pose else None,
            text_len=text_len,
        )
        table = assign_positions(layout, EncodingMode(mode))
    except AstraError as exc:
        _fail(str(exc))
    for role, positions in (
        ("text", table.text),
        *((f"ref{k}", ref) for k, ref in enumerate(table.refs)),
        ("pose", table.pose),
        ("latent", table.latent),
    ):
        click.echo(f"{role}: {' '.join(f'({p.i},{p.j})' for p in positions)}")


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--index", "index_path", type=click.Path(), default=None)
@click.option("--pose-store", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(config_path, index_path, pose_store, host, port) -> None:
    """Run the retrieval service."""
    from .service import serve

    try:
        config = load_config(path=config_path, index_path=index_path, pose_store_path=pose_store)
        if not config.index_path:
            _fail("no index configured; pass --index or set ASTRA_INDEX_PATH")
        serve(config, host=host, port=port)
    except (AstraError, OSError) as exc:
        _fail(str(exc))


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
