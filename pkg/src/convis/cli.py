"""Command-line entry points.

Exit codes: 0 success, 1 usage error (bad or missing flags), 2 runtime
failure (missing files, backend errors, bad config). All outputs go to
explicitly declared paths only.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ServiceConfig, build_backend, load_config, parse_backend_spec
from .encoder import Image
from .errors import ConfigError, ConvisError
from .evalkit import (
    load_ood_spec,
    load_wsol_manifest,
    run_ood_experiment,
    run_wsol_experiment,
)
from .lexdb import filter_hierarchy, full_hierarchy, load_lexicon, load_seed_list
from .saliency import PatchEmbeddingCache, SaliencyConfig
from .simcore import build_definition_matrix


def _backend_spec_option(value: str) -> str:
    try:
        parse_backend_spec(value)
    except ConfigError as exc:
        raise click.BadParameter(str(exc))
    return value


_CONFIG_OPTS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="Key-value config file; flags override it."),
    click.option("--lexicon", "lexicon_path", type=click.Path(), default=None,
                 help="Lexicon JSONL file."),
    click.option("--seeds", "seed_path", type=click.Path(), default=None,
                 help="Seed synset list (one id per line)."),
    click.option("--backend", "backend_spec", default=None, callback=lambda c, p, v: v and _backend_spec_option(v),
                 help="Backend spec: mock[:dim] | fixture:FILE | remote:URL | runtime:DIR."),
    click.option("--cache-dir", default=None, type=click.Path(),
                 help="Cache directory (CONVIS_CACHE_DIR overrides)."),
]


def _with_config_opts(fn):
    for opt in reversed(_CONFIG_OPTS):
        fn = opt(fn)
    return fn


def _service_config(config_path, lexicon_path, seed_path, backend_spec, cache_dir) -> ServiceConfig:
    cfg = load_config(config_path) if config_path else ServiceConfig()
    if lexicon_path:
        cfg.lexicon_path = lexicon_path
    if seed_path:
        cfg.seed_path = seed_path
    if cache_dir:
        cfg.cache_dir = cache_dir
    if backend_spec:
        kind, arg = parse_backend_spec(backend_spec)
        cfg.backend = kind
        if kind == "mock" and arg:
            cfg.mock_dimension = int(arg)
        elif kind == "fixture":
            cfg.fixture_path = arg
        elif kind == "remote":
            cfg.service_url = arg
        elif kind == "runtime":
            cfg.model_path = arg
    return cfg


def _load_pipeline(cfg: ServiceConfig):
    if not cfg.lexicon_path:
        raise ConfigError("a lexicon is required (--lexicon or config lexicon_path)")
    lexicon = load_lexicon(cfg.lexicon_path)
    if cfg.seed_path:
        hier = filter_hierarchy(lexicon, load_seed_list(cfg.seed_path))
    else:
        hier = full_hierarchy(lexicon)
    backend = build_backend(cfg.backend_spec())
    defmat = build_definition_matrix(hier, backend, cache_dir=cfg.cache_dir or None)
    return hier, backend, defmat


@click.group(name="convis")
def cli():
    """Concept saliency maps over a joint image-text embedding space."""


@cli.command(name="saliency")
@click.option("--image", "image_path", type=click.Path(), required=True, help="Input PNG/JPEG.")
@click.option("--concept", required=True, help="Synset id to explain.")
@click.option("--out", "out_prefix", type=click.Path(), required=True,
              help="Output prefix; writes <out>.png and <out>.cvis.")
@click.option("--delta-s", type=int, default=None)
@click.option("--delta-l", type=int, default=None)
@click.option("--omega", type=int, default=None)
@click.option("--window-mode", type=click.Choice(["containment", "symmetric"]), default=None)
@click.option("--boundary-policy", type=click.Choice(["fit-only", "clamp"]), default=None)
@_with_config_opts
def saliency_cmd(image_path, concept, out_prefix, delta_s, delta_l, omega,
                 window_mode, boundary_policy, **cfg_flags):
    """Compute one saliency map and write PNG + CVIS files."""
    from .saliency import compute_saliency

    cfg = _service_config(**cfg_flags)
    if delta_s is not None:
        cfg.delta_s = delta_s
    if delta_l is not None:
        cfg.delta_l = delta_l
    if omega is not None:
        cfg.omega = omega
    if window_mode is not None:
        cfg.window_mode = window_mode
    if boundary_policy is not None:
        cfg.boundary_policy = boundary_policy
    hier, backend, defmat = _load_pipeline(cfg)
    image = Image.load(image_path)
    smap = compute_saliency(image, concept, cfg.saliency_config(), backend, defmat, hier,
                            cache=PatchEmbeddingCache(directory=cfg.cache_dir or None))
    out = Path(out_prefix)
    out.parent.mkdir(parents=True, exist_ok=True)
    png_path = out.with_name(out.name + ".png")
    cvis_path = out.with_name(out.name + ".cvis")
    smap.save_png(png_path)
    smap.save_cvis(cvis_path)
    click.echo(f"wrote {png_path} and {cvis_path} "
               f"(min {smap.values.min():.4f}, max {smap.values.max():.4f})")


@cli.command(name="precompute-defs")
@_with_config_opts
def precompute_defs_cmd(**cfg_flags):
    """Build (or refresh) the definition-embedding matrix cache."""
    from .simcore import resolve_cache_dir

    cfg = _service_config(**cfg_flags)
    if resolve_cache_dir(cfg.cache_dir or None) is None:
        raise ConfigError(
            "precompute-defs needs a cache directory "
            "(--cache-dir, config cache_dir, or CONVIS_CACHE_DIR)"
        )
    hier, _backend, defmat = _load_pipeline(cfg)
    click.echo(f"definition matrix ready: {len(defmat)} synsets x {defmat.dimension} dims "
               f"(hierarchy {len(hier)} nodes)")


@cli.command(name="wsol-eval")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True,
              help="JSON manifest: [{path, box, concept}].")
@click.option("--concept", "concept_override", default=None,
              help="Force one concept for every sample.")
@click.option("--out-report", type=click.Path(), required=True)
@click.option("--delta-hat", type=float, default=0.5, show_default=True)
@_with_config_opts
def wsol_eval_cmd(manifest_path, concept_override, out_report, delta_hat, **cfg_flags):
    """Evaluate box-localization accuracy over a manifest."""
    cfg = _service_config(**cfg_flags)
    hier, backend, defmat = _load_pipeline(cfg)
    samples = load_wsol_manifest(manifest_path)
    report = run_wsol_experiment(
        samples, cfg.saliency_config(), backend, defmat, hier,
        delta_hat=delta_hat, concept_override=concept_override,
        base_dir=Path(manifest_path).parent,
        cache=PatchEmbeddingCache(directory=cfg.cache_dir or None),
    )
    Path(out_report).write_text(json.dumps(report, indent=2), encoding="utf-8")
    click.echo(f"MaxBoxAcc {report['max_box_acc']:.4f} at tau {report['best_tau']:.2f} "
               f"-> {out_report}")


@cli.command(name="ood-eval")
@click.option("--spec", "spec_path", type=click.Path(), required=True,
              help="OOD spec JSON file.")
@click.option("--out-report", type=click.Path(), required=True)
@click.option("--methods", default="max_rank,rank,img_img", show_default=True,
              help="Comma-separated subset of max_rank,rank,img_img.")
@_with_config_opts
def ood_eval_cmd(spec_path, out_report, methods, **cfg_flags):
    """Run the OOD-detection protocol over an image spec."""
    cfg = _service_config(**cfg_flags)
    hier, backend, defmat = _load_pipeline(cfg)
    spec = load_ood_spec(spec_path)
    report = run_ood_experiment(spec, backend, hier, defmat,
                                methods=[m.strip() for m in methods.split(",") if m.strip()])
    Path(out_report).write_text(json.dumps(report, indent=2), encoding="utf-8")
    aurocs = ", ".join(f"{k}={v:.4f}" for k, v in report["auroc"].items())
    click.echo(f"AUROC {aurocs} -> {out_report}")


@cli.command(name="serve")
@click.option("--config", "config_path", type=click.Path(), required=True)
def serve_cmd(config_path):
    """Run the HTTP service until interrupted."""
    import uvicorn

    from .server import build_state, create_app

    cfg = load_config(config_path)
    state = build_state(cfg)
    app = create_app(state)
    click.echo(f"serving on {cfg.host}:{cfg.port} "
               f"(hierarchy {len(state.hierarchy)} nodes, backend {state.backend.model_id})")
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")


@cli.group(name="hierarchy")
def hierarchy_group():
    """Inspect the concept hierarchy."""


@hierarchy_group.command(name="search")
@click.argument("query")
@click.option("--limit", type=int, default=10, show_default=True)
@_with_config_opts
def hierarchy_search_cmd(query, limit, **cfg_flags):
    """Search synsets by id or lemma substring."""
    cfg = _service_config(**cfg_flags)
    if not cfg.lexicon_path:
        raise ConfigError("a lexicon is required (--lexicon or config lexicon_path)")
    lexicon = load_lexicon(cfg.lexicon_path)
    hier = (filter_hierarchy(lexicon, load_seed_list(cfg.seed_path))
            if cfg.seed_path else full_hierarchy(lexicon))
    for sid in hier.search(query, limit=limit):
        syn = hier.synset(sid)
        click.echo(f"{sid}\t{', '.join(syn.lemmas)}\t{syn.definition}")


@hierarchy_group.command(name="show")
@click.argument("synset_id")
@_with_config_opts
def hierarchy_show_cmd(synset_id, **cfg_flags):
    """Show one synset: definition, parents, children, ancestors."""
    cfg = _service_config(**cfg_flags)
    if not cfg.lexicon_path:
        raise ConfigError("a lexicon is required (--lexicon or config lexicon_path)")
    lexicon = load_lexicon(cfg.lexicon_path)
    hier = (filter_hierarchy(lexicon, load_seed_list(cfg.seed_path))
            if cfg.seed_path else full_hierarchy(lexicon))
    syn = hier.synset(synset_id)
    click.echo(f"id:         {syn.id}")
    click.echo(f"lemmas:     {', '.join(syn.lemmas)}")
    click.echo(f"definition: {syn.definition}")
    click.echo(f"parents:    {', '.join(hier.parents(synset_id)) or '-'}")
    click.echo(f"children:   {', '.join(hier.children(synset_id)) or '-'}")
    click.echo(f"ancestors:  {', '.join(hier.ancestors(synset_id)) or '-'}")


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; returns the process exit code."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConvisError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
