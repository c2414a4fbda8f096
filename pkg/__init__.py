#
# `./__init__.py` makes this project importable as `weak_epr_py`. It makes
# objects defined in `./src/` available. See `./src/__init__.py`.
#

from .src import *
