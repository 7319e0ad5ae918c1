#!/usr/bin/env python3
"""Volley simulates the slot-vector computations of packed homomorphic
encryption (matrix products, convolutions, a small CNN) and trains
multiclass logistic regression with the quadratic gradient.
"""

import sys
if sys.version_info < (3, 8):
    sys.stderr.write("Volley requires Python 3.8+\n")
    sys.exit(1)

import logging
import os


def run():
    """Main entry point of Volley"""

    logging.basicConfig(
        level=logging.WARNING,
        format="[%(asctime)s] [%(threadName)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr)

    logger = logging.getLogger(__name__)

    try:
        import volley
    except ImportError:
        logger.critical("Python failed to find the volley modules.")
        logger.critical("Searched in the following directories:\n%s",
                        "\n".join(sys.path))
        logger.critical("Perhaps Volley is improperly installed?")
        sys.exit(1)

    try:
        import numpy
        import scipy
        import sklearn
    except ImportError as e:
        logger.critical("Volley requires numpy, scipy and scikit-learn: %s. "
                        "Aborting...", e)
        sys.exit(1)

    try:
        from volley.version import version
    except ImportError:
        logger.critical("An old or incomplete installation was "
                        "found in the following directory: %s",
                        os.path.dirname(volley.__file__))
        sys.exit(1)
    logger.debug("Volley %s", version)

    ## Load the command line interface:

    from volley import cli
    sys.exit(cli.main(sys.argv))


if __name__ == '__main__':
    run()
