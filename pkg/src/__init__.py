#
# `./src/__init__.py` makes the contents of `./src/` importable.
# The modules import each other by bare name, so they are loaded from the
# same path here and exist only once.
#

import os
import sys

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

from spinalg import *
from measurement import *
from tsvf import *
from protocol import *
from analysis import *
from cli import main
