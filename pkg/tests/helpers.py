"""Shared test utilities."""
import os

from optswitch.problem import load_problem

SPECS = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "src", "optswitch", "specs"))

# acceptance lines collected during the run, echoed in the terminal summary
VERDICTS = []


def spec_path(name):
    return os.path.join(SPECS, name + ".json")


def load_spec(name):
    return load_problem(spec_path(name))


def verdict(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok
