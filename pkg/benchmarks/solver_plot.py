from pybench import Benchmark, parser


class SolverPlot(Benchmark):
    figsize = (6, 4)
    profileregions = ['solve']

    def plot_method_comparison(self, robots):
        groups = ['method', 'mode']
        for region in self.profileregions:
            self.plot(figsize=self.figsize, format='pdf', figname='SolverMethods_%s' % region,
                      xaxis='robots', xvals=robots, xticklabels=robots,
                      xlabel='Number of robots', groups=groups, regions=[region],
                      kinds='bar', title='Solve time: %s' % region, legend={'loc': 'best'})

    def plot_worker_scaling(self, workers):
        groups = ['method', 'robots']
        for region in self.profileregions:
            self.plot(figsize=self.figsize, format='pdf', figname='SolverWorkers_%s' % region,
                      xaxis='workers', xticklabels=workers, xlabel='Number of worker processes',
                      regions=[region], groups=groups, xmax=workers[-1], trendline='Perfect speedup',
                      kinds='loglog', title='Solve time: %s' % region, legend={'loc': 'best'})


if __name__ == '__main__':
    p = parser(description="Performance plotter for the consensus ADMM solvers.")
    p.add_argument('--method', type=str, nargs='+',
                   help='Solvers to compare')
    p.add_argument('--mode', type=str, nargs='+',
                   help='Execution modes to compare')
    p.add_argument('--robots', type=int, nargs='+',
                   help='Team sizes benchmarked')
    p.add_argument('--horizon', type=int, nargs='+',
                   help='Control horizons benchmarked')
    p.add_argument('--workers', type=int, nargs='+',
                   help='Worker process counts used in distributed mode')
    args = p.parse_args()
    method = args.method or ['scadmm', 'ladmm']
    mode = args.mode or ['centralized', 'distributed']
    robots = args.robots or [5]
    horizon = args.horizon or [10]
    workers = args.workers or [0]

    b = SolverPlot(benchmark='Solver-Performance',
                   resultsdir=args.resultsdir, plotdir=args.plotdir)
    b.combine_series([('method', method), ('mode', mode), ('robots', robots),
                      ('horizon', horizon), ('workers', workers)], filename='Solver')

    if len(workers) > 1:
        b.plot_worker_scaling(workers)
    else:
        b.plot_method_comparison(robots)
