from .common.const import *
