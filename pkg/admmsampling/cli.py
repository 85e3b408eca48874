import json
import logging
import os
import sys
from argparse import ArgumentParser, RawTextHelpFormatter

from admmsampling.checks import gradcheck, gpcheck, qpcheck
from admmsampling.experiment import ExperimentConfig, run_batch, compare

__all__ = ['main', 'build_config']

log = logging.getLogger(__name__)


def build_config(args):
    """
    defaults, overridden by the config file, overridden by the flags
    """
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, switch in [('method', 'method'), ('mode', 'mode'), ('seed', 'seed'),
                         ('steps', 'measurement_steps'), ('robots', 'num_robots'),
                         ('horizon', 'horizon'), ('epsilon', 'epsilon'),
                         ('noise_sd', 'noise_sd'), ('retrain_every', 'retrain_every'),
                         ('field_csv', 'field_csv'), ('threads', 'threads')]:
        value = getattr(args, flag)
        if value is not None:
            overrides[switch] = value
    if args.train_gp:
        overrides['train_gp'] = True
    if args.retrain_every:
        overrides['train_gp'] = True
    if args.penalised_convex:
        overrides['explicit_convex'] = False
    if overrides:
        cfg.set_switches(**overrides)
    return cfg


def _print_summary(summary):
    for group, q in sorted(summary['wall_ms'].items()):
        if q is not None:
            print("Wall ms %s: median %.1f [q1 %.1f, q3 %.1f]" % (group, q['median'], q['q1'], q['q3']))
    steps = summary['steps']
    if steps:
        last = max(steps)
        for name in ['alpv', 'rmse', 'mae']:
            q0, q1 = steps[min(steps)][name], steps[last][name]
            print("%s: step 0 median %.3f, step %d median %.3f" % (name.upper(), q0['median'],
                                                                 last, q1['median']))
    print("Runs: %d, failures: %d" % (summary['runs'], summary['failures']))


def main(argv=None):
    CommandHelp = """Available commands:
run:        seeded adaptive sampling episodes with one method and mode;
            writes metrics.csv, trace_<run>.json and field snapshots
            to --out

compare:    both methods in both modes on the same seeds, one output
            directory per method and mode

gradcheck:  gradient of the sampling metric against finite differences

gpcheck:    GP posterior against the dense posterior formulas

qpcheck:    QP solver against active set enumeration and the L1 prox
"""
    p = ArgumentParser(description="GP adaptive sampling with consensus ADMM",
                       formatter_class=RawTextHelpFormatter)
    p.add_argument('command', choices=('run', 'compare', 'gradcheck', 'gpcheck', 'qpcheck'),
                   help=CommandHelp)
    p.add_argument('--config', default=None,
                   help='JSON experiment configuration')
    p.add_argument('--method', choices=('scadmm', 'ladmm'), default=None,
                   help='consensus solver')
    p.add_argument('--mode', choices=('central', 'centralized', 'distributed'), default=None,
                   help='run the agents in the calling process or in worker processes')
    p.add_argument('--seed', type=int, default=None,
                   help='base seed, run r uses seed + r')
    p.add_argument('--runs', type=int, default=1,
                   help='number of seeded episodes')
    p.add_argument('--out', default=None,
                   help='output directory for the artifacts')
    p.add_argument('--steps', type=int, default=None,
                   help='number of measurement steps')
    p.add_argument('--robots', type=int, default=None,
                   help='number of robots')
    p.add_argument('--horizon', type=int, default=None,
                   help='control horizon H')
    p.add_argument('--epsilon', type=float, default=None,
                   help='safety margin of the movement regions in meters')
    p.add_argument('--noise-sd', dest='noise_sd', type=float, default=None,
                   help='measurement noise standard deviation')
    p.add_argument('--train-gp', dest='train_gp', action='store_true', default=False,
                   help='train the GP hyperparameters on the measurements')
    p.add_argument('--retrain-every', dest='retrain_every', type=int, default=None,
                   help='retrain the hyperparameters every K steps (implies --train-gp)')
    p.add_argument('--field-csv', dest='field_csv', default=None,
                   help='fit the ground truth to a CSV of x,y,value readings')
    p.add_argument('--threads', type=int, default=None,
                   help='worker processes in distributed mode')
    p.add_argument('--penalised-convex', dest='penalised_convex', action='store_true',
                   default=False, help='penalise the box and region rows in SC-ADMM')
    p.add_argument('--cases', type=int, default=None,
                   help='number of random instances for the check commands')
    p.add_argument('-v', '--verbose', action='store_true', default=False,
                   help='debug logging')
    args = p.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(name)s %(levelname)s %(message)s')

    if args.command == 'gradcheck':
        reports = [gradcheck(**({'cases': args.cases} if args.cases else {}))]
    elif args.command == 'gpcheck':
        reports = [gpcheck(**({'cases': args.cases} if args.cases else {}))]
    elif args.command == 'qpcheck':
        reports = list(qpcheck(**({'cases': args.cases} if args.cases else {})))
    else:
        try:
            cfg = build_config(args)
        except (ValueError, IOError) as e:
            print("Config error: %s" % e)
            return 2
        if args.out is not None and not os.path.isdir(args.out):
            os.makedirs(args.out)
        if args.out is not None:
            cfg.to_json(os.path.join(args.out, 'config.json'))
        print("Adaptive sampling (command=%s, method=%s, mode=%s, seed=%d, runs=%d)"
              % (args.command, cfg.method, cfg.mode, cfg.seed, args.runs))
        if args.command == 'run':
            records, summary = run_batch(cfg, args.runs, args.out)
        else:
            results, summary = compare(cfg, args.runs, args.out)
        _print_summary(summary)
        if args.out is not None:
            with open(os.path.join(args.out, 'summary.json'), 'w') as f:
                json.dump(summary, f, indent=1)
        return 1 if summary['failures'] else 0

    for report in reports:
        print(report)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
