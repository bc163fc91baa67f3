"""Spatial latent Gaussian models with change of support."""
__version__ = "0.1.0"


def create_cli():
    import click

    from splinecos import commands

    @click.group(help="Fit, simulate and predict B-spline GMRF models with change of support.")
    @click.version_option(__version__, prog_name="splinecos")
    def cli():
        pass

    for command in commands.COMMANDS:
        cli.add_command(command)

    return cli


def main():
    cli = create_cli()
    cli(prog_name="splinecos")
