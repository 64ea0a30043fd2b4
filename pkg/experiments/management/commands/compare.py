from experiments.management.commands.compare_runs import (
    Command as CompareRunsCommand,
)


class Command(CompareRunsCommand):
    help = "Alias of compare_runs: " + CompareRunsCommand.help
