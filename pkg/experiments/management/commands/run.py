from experiments.management.commands.run_experiment import (
    Command as RunExperimentCommand,
)


class Command(RunExperimentCommand):
    help = "Alias of run_experiment: " + RunExperimentCommand.help
