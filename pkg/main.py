import argparse
import sys

from cli.commands import COMMANDS


def build_parser():
    parser = argparse.ArgumentParser(description='Stochastic spiking Equilibrium Propagation toolkit.')
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help='INI run configuration')
    parser.add_argument('--seed', type=int, help='override [run] seed')
    parser.add_argument('--out', help='override [run] out_dir')
    parser.add_argument('--epochs', type=int, help='override [train] epochs')
    parser.add_argument('--checkpoint', help='checkpoint to resume or evaluate')
    parser.add_argument('--threshold', type=float, help='gradcheck: minimum cosine similarity')
    parser.add_argument('--beta-sweep', action='store_true', help='gradcheck: also sweep [gradcheck] betas')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {'run.seed': args.seed, 'run.out_dir': args.out, 'train.epochs': args.epochs}
    command = COMMANDS[args.command]
    if args.command == 'gradcheck':
        return command(args.config, overrides, args.checkpoint, args.threshold, args.beta_sweep)
    return command(args.config, overrides, args.checkpoint)


if __name__ == '__main__':
    sys.exit(main())
