#!/usr/bin/env python3

from pyspiral import pyspiral

if __name__ == "__main__":
    pyspiral.main()
