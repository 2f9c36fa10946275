__title__ = "hinfplatoon"
__author__ = "Jerrie-Aries"
__version__ = "0.1.0"
__license__ = "AGPL"
