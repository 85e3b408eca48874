from admmsampling.util import *  # NOQA
from admmsampling.gp import *  # NOQA
from admmsampling.vehicle import *  # NOQA
from admmsampling.geometry import *  # NOQA
from admmsampling.qp import *  # NOQA
from admmsampling.problem import *  # NOQA
from admmsampling.admm import *  # NOQA
from admmsampling.field import *  # NOQA
from admmsampling.experiment import *  # NOQA

__version__ = '0.1.0'
