"""``velest <subcommand> [flags]``: the estimator commands without manage.py.

Subcommands are spelled with hyphens and map onto the app's management
commands. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import os
import sys

SUBCOMMANDS = {
    "simulate": "Simulate a ground-truth dataset.",
    "ingest": "Build a dataset from recorded logs, one segment per log.",
    "pretrain": "Fit a model to one-step transitions.",
    "finetune": "Train a model through the filter.",
    "estimate": "Write filtered state estimates.",
    "evaluate": "Score estimates against ground truth.",
    "gradcheck": "Check rollout gradients against finite differences.",
    "ablate-mixed": "Cross prediction and update models.",
    "sweep-seqlen": "Compare training sequence lengths.",
    "prediction-error": "One-step prediction error per state.",
}


def usage(prog="velest"):
    width = max(len(name) for name in SUBCOMMANDS)
    lines = [f"usage: {prog} <subcommand> [flags]", "", "subcommands:"]
    lines += [f"  {name.ljust(width)}  {text}" for name, text in SUBCOMMANDS.items()]
    lines.append(f"\nRun '{prog} <subcommand> --help' for its flags.")
    return "\n".join(lines)


def dispatch(argv=None):
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(usage(), file=sys.stdout if argv else sys.stderr)
        return 0 if argv else 2
    name, rest = argv[0], argv[1:]
    if name not in SUBCOMMANDS:
        print(f"velest: unknown subcommand {name!r}\n\n{usage()}", file=sys.stderr)
        return 2

    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "velest.settings")
    import django
    from django.core.management import ManagementUtility

    django.setup()
    utility = ManagementUtility(["velest", name.replace("-", "_"), *rest])
    try:
        utility.execute()
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


def main():
    sys.exit(dispatch())
