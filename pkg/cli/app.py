"""
Phenotyper Command-Line Application
Batch interface for the phenotyping pipeline
"""

import sys
import logging
import argparse

from phenotyper import __version__
from phenotyper.core import AnalysisError, ConfigError
from utils.config import ProjectConfig
from . import pipeline

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PRECONDITION = 2


class PhenotyperApp:
    """Main command-line application"""

    def __init__(self, argv=None):
        """
        Initialize the application

        Args:
            argv (list, optional): Command-line arguments, sys.argv[1:] by default
        """
        self.argv = sys.argv[1:] if argv is None else list(argv)
        self.parser = self._build_parser()
        self.logger = logging.getLogger('CLI')

    def run(self):
        """
        Parse arguments and run the selected subcommand

        Returns:
            int: Process exit code
        """
        args = self.parser.parse_args(self.argv)
        self._setup_logging(args)

        try:
            config = ProjectConfig(args.config, overrides=self._overrides(args))
            return args.handler(config, args)

        except ConfigError as e:
            self.logger.error(str(e))
            return EXIT_FATAL
        except AnalysisError as e:
            self.logger.error(str(e))
            return EXIT_PRECONDITION

    def _build_parser(self):
        parser = argparse.ArgumentParser(
            prog='phenotyper',
            description='Extract time-series features and find those that distinguish labeled groups'
        )
        parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")

        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('-c', '--config', help='Configuration file (key = value per line)')
        common.add_argument('-i', '--input', dest='input_paths', action='append',
                            help='Series directory or long-format CSV (repeatable)')
        common.add_argument('--labels', dest='labels_path', help='labels.csv: series_id then a label or several factor columns')
        common.add_argument('--catalog', dest='catalog_path', help='Feature catalog JSON')
        common.add_argument('-o', '--output-dir', dest='output_dir', help='Directory for results')
        common.add_argument('--n-perm', type=int, help='Permutations per feature')
        common.add_argument('--k-folds', type=int, help='Cross-validation folds')
        common.add_argument('--seed', type=int, help='Random seed')
        common.add_argument('--regularization', type=float, help='L2 penalty of the classifier')
        common.add_argument('--top-k', type=int, help='Features in the correlation plot data')
        common.add_argument('-j', '--jobs', dest='n_jobs', type=int, help='Worker threads')
        common.add_argument('--normalize-within-folds', action='store_const', const=True,
                            help='Fit normalization on training folds only')
        common.add_argument('--pairwise', action='store_const', const=True,
                            help='Also rank features for every pair of classes')
        common.add_argument('--downsample-window', type=int,
                            help='Keep the maximum of every N points before feature extraction')
        common.add_argument('--sampling-rate', dest='sampling_rate_hz', type=float,
                            help='Sampling rate of the inputs in Hz')
        common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
        common.add_argument('-q', '--quiet', action='store_true', help='Warnings only, no progress bars')

        subparsers = parser.add_subparsers(dest='command', required=True)

        ingest = subparsers.add_parser('ingest-check', parents=[common],
                                       help='Read and validate the inputs without writing results')
        ingest.set_defaults(handler=self._ingest_check)

        compute = subparsers.add_parser('compute', parents=[common],
                                        help='Compute the feature matrix')
        compute.set_defaults(handler=self._compute)

        analyze = subparsers.add_parser('analyze', parents=[common],
                                        help='Filter, rank, classify and project the features')
        analyze.set_defaults(handler=self._analyze)

        report = subparsers.add_parser('report', parents=[common],
                                       help='Print a plain-text summary of the analysis')
        report.set_defaults(handler=self._report)

        return parser

    def _setup_logging(self, args):
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
        logging.getLogger().setLevel(level)

    def _overrides(self, args):
        keys = ('input_paths', 'labels_path', 'catalog_path', 'output_dir', 'n_perm', 'k_folds',
                'seed', 'regularization', 'top_k', 'n_jobs', 'normalize_within_folds', 'pairwise',
                'downsample_window', 'sampling_rate_hz')
        return {key: getattr(args, key) for key in keys}

    def _ingest_check(self, config, args):
        print(pipeline.cmd_ingest_check(config))
        return EXIT_OK

    def _compute(self, config, args):
        pipeline.cmd_compute(config, show_progress=not args.quiet)
        return EXIT_OK

    def _analyze(self, config, args):
        manifest = pipeline.cmd_analyze(config, show_progress=not args.quiet)
        if manifest.failures:
            for stage, error in manifest.failures.items():
                self.logger.error(f"{stage}: {error}")
            return EXIT_PRECONDITION
        return EXIT_OK

    def _report(self, config, args):
        print(pipeline.cmd_report(config), end='')
        return EXIT_OK
