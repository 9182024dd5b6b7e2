import os
import sys

# koren repozitara na sys.path, aby testy videli app, engine, utils, routes
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
