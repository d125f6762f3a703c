#!/usr/bin/env python3
"""
Face Stylizer - one-shot, deformation-aware face stylization

Fine-tunes a pretrained face generator from a single real/style image pair,
then renders stylized faces with controllable geometric deformation.
"""
import argparse
from pathlib import Path
from typing import List, Optional
from src.config import StylizerSettings
from src.errors import StylizerError
from src.logger import console, logger, set_level
from src.toolkit import cli_evaluate, cli_stylize, cli_sweep, cli_train, cli_visualize_features
from src.toolkit.commands import DEFAULT_ALPHAS


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="face-stylizer", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Adapt the generator to one real/style pair")
    train.add_argument("--pair", nargs=2, metavar=("REAL", "STYLE"), type=Path, required=True)
    train.add_argument("--config", type=Path, default=Path("config.yaml"))
    train.add_argument("--out", type=Path, required=True, help="Root for run directories")
    train.add_argument("--name", help="Style name recorded in the bundle")

    def add_input(p):
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--image", type=Path, help="Photo to encode and stylize")
        source.add_argument("--seed", type=int, help="Seed of a sampled latent")
        p.add_argument("--truncation", type=float, default=1.0)

    stylize = sub.add_parser("stylize", help="Render one stylized image from a bundle")
    stylize.add_argument("--bundle", type=Path, required=True)
    add_input(stylize)
    stylize.add_argument("--alpha", type=float, default=1.0, help="Deformation strength")
    stylize.add_argument("--out", type=Path, required=True, help="Output PNG path")

    sweep = sub.add_parser("sweep", help="Render one image per deformation strength")
    sweep.add_argument("--bundle", type=Path, required=True)
    add_input(sweep)
    sweep.add_argument("--alphas", type=_floats, default=list(DEFAULT_ALPHAS))
    sweep.add_argument("--out", type=Path, required=True)

    evaluate = sub.add_parser("evaluate", help="LPIPS, dir-CC and dir-ID of a bundle")
    evaluate.add_argument("--bundle", type=Path, required=True)
    evaluate.add_argument("--n", type=int, dest="n_samples")
    evaluate.add_argument("--seeds", type=Path, help="File of integer seeds")
    evaluate.add_argument("--truncation", type=float, default=1.0)
    evaluate.add_argument("--out", type=Path, required=True)

    visualize = sub.add_parser("visualize", help="PCA maps of ViT tokens")
    visualize.add_argument("--images", type=Path, nargs="+", required=True)
    visualize.add_argument("--layers", type=_ints, default=[3, 6, 12])
    visualize.add_argument("--out", type=Path, required=True)
    visualize.add_argument("--backbone", choices=["dino", "stub"], default="dino")
    visualize.add_argument("--model-name", help="transformers ViT checkpoint id")
    visualize.add_argument("--size", type=int, default=224)

    return parser


def run(args: argparse.Namespace, settings: StylizerSettings):
    if args.command == "train":
        bundle = cli_train(args.pair[0], args.pair[1], args.config, args.out, name=args.name)
        console.print(f"\n[bold green]Bundle:[/bold green] {bundle}")

    elif args.command == "stylize":
        cli_stylize(args.bundle, args.out, args.image, args.seed, args.alpha, args.truncation, settings)

    elif args.command == "sweep":
        entries = cli_sweep(args.bundle, args.out, args.image, args.seed, args.alphas, args.truncation, settings)
        console.print("\n[bold green]Sweep:[/bold green]")
        for entry in entries:
            console.print(f"  alpha {entry.alpha:.2f}  displacement {entry.displacement_norm:.4e}  {entry.path}")

    elif args.command == "evaluate":
        report = cli_evaluate(args.bundle, args.out, args.n_samples, args.seeds, args.truncation, settings)
        console.print("\n[bold green]Report Summary:[/bold green]")
        console.print(f"  Samples: {report.n_samples}")
        console.print(f"  LPIPS:   {report.mean_lpips:.4f}")
        console.print(f"  dir-CC:  {report.mean_dir_cc:.4f}")
        console.print(f"  dir-ID:  {report.mean_dir_id:.4f}")

    elif args.command == "visualize":
        cli_visualize_features(args.images, args.layers, args.out, args.backbone, args.model_name, args.size)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    settings = StylizerSettings()
    set_level(settings.log_level)

    console.print("[bold cyan]Face Stylizer[/bold cyan]\n")

    try:
        run(args, settings)
        return 0

    except FileNotFoundError as e:
        logger.error(f"[red]{e}[/red]")
        return 2

    except StylizerError as e:
        logger.error(f"[red]{e}[/red]")
        return 1

    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        return 130

    except Exception as e:
        logger.exception(f"[red]An error occurred: {e}[/red]")
        return 1


if __name__ == "__main__":
    exit(main())
