"""Run the HTTP service: ``python -m govsub.service [--config FILE]``."""

import argparse
import logging
import sys

from .core import Service, load_config, recover
from .http import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m govsub.service")
    parser.add_argument("--config", help="JSON config file (GOVSUB_* environment variables override it)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    config = load_config(args.config)
    if not config.admin_token:
        print("admin_token is required (config file or GOVSUB_ADMIN_TOKEN)", file=sys.stderr)
        return 2
    if config.log_path:
        service, report = recover(config)
        logging.info("recovered %d records (truncated=%s)", report.records_applied, report.truncated)
    else:
        service = Service(config)
    serve(service)
    return 0


if __name__ == "__main__":
    sys.exit(main())
