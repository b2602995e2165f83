"""
quasicause - 智能手机感知数据的准实验因果推断流水线
"""
__version__ = "1.0.0"
