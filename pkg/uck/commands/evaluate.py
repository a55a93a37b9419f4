"""
eval: score a checkpoint on a dataset and write the report, its CSV row and a manifest.
"""

import logging
from pathlib import Path

import click

from uck.evaluation import evaluate, export_csv, phi_reference_comparison, reference_comparison, reports_frame
from uck.kernel import ablation_name, load_checkpoint
from uck.manifest import RunManifest
from uck.tasks import read_dataset
from uck.utils import write_json

logger = logging.getLogger(__name__)


def _fmt(value):
    return 'n/a' if value is None else f'{value:.3f}'


def echo_report(report, ablation):
    """Print the headline metrics and, where published, the reference values."""
    click.echo(f'{report.task}: n={report.n} accuracy={_fmt(report.accuracy)} '
               f'acc_pos={_fmt(report.acc_pos)} acc_neg={_fmt(report.acc_neg)} balance={_fmt(report.balance)}')
    click.echo(f'  confusion tp={report.tp} tn={report.tn} fp={report.fp} fn={report.fn} ties={report.ties}; '
               f'mean active rules {report.mean_active_rules:.2f}')
    phi = report.phi
    if phi.feasible and phi.infeasible:
        click.echo(f'  Phi feasible {phi.feasible.Phi_mean:+.3f}+/-{phi.feasible.Phi_std:.3f}, '
                   f'infeasible {phi.infeasible.Phi_mean:+.3f}+/-{phi.infeasible.Phi_std:.3f}, '
                   f'separation {phi.Phi_separation:+.3f} (p={phi.Phi_p_value})')
        click.echo(f'  sum(phi) separation {phi.sum_phi_separation:+.3f} (p={phi.sum_phi_p_value})')
    if report.collapsed:
        click.echo('  WARNING: class collapse (balance below 0.5)')
    comparison = reference_comparison(report, ablation)
    if comparison:
        click.echo('  published: ' + ', '.join(f'{key} {ref:.3f}' for key, (_, ref) in comparison.items()))
    phi_reference = phi_reference_comparison(report)
    if phi_reference:
        feasible, infeasible = phi_reference['feasible'][1], phi_reference['infeasible'][1]
        click.echo(f'  published Phi: feasible {feasible[0]:+.1f}+/-{feasible[1]:.1f}, '
                   f'infeasible {infeasible[0]:+.1f}+/-{infeasible[1]:.1f}, '
                   f'separation {phi_reference["separation"][1]:+.1f}')


@click.command('eval')
@click.option('--checkpoint', 'checkpoint_path', required=True, help='Checkpoint written by train.')
@click.option('--data', 'data_path', required=True, help='Dataset to evaluate on.')
@click.option('--report', 'report_path', required=True, type=click.Path(dir_okay=False), help='Report JSON to write.')
@click.option('--split', default='test', show_default=True, help='Split label stored in the report.')
@click.pass_context
def eval_cmd(ctx, checkpoint_path, data_path, report_path, split):
    """Evaluate a checkpoint on a dataset."""
    model, header = load_checkpoint(checkpoint_path)
    spec, dataset = read_dataset(data_path)
    report_path = Path(report_path)
    csv_path = report_path.with_suffix('.csv')

    manifest = RunManifest(
        command='eval',
        args=['eval', '--checkpoint', str(checkpoint_path), '--data', str(data_path),
              '--report', str(report_path), '--split', split],
        config={'model': model.config.to_dict(), 'task': spec.to_dict()},
        seeds=[spec.seed],
        outputs={'report': str(report_path), 'csv': str(csv_path)},
    ).add_input(checkpoint_path).add_input(data_path)
    manifest.write(report_path.with_name(report_path.stem + '.manifest.json'))

    provenance = {
        'checkpoint': str(checkpoint_path),
        'dataset': str(data_path),
        'split': split,
        'model_seed': model.config.seed,
        'dataset_seed': spec.seed,
        'size': spec.size,
    }
    report = evaluate(model, dataset, provenance)
    write_json(report_path, report.to_dict())
    export_csv(reports_frame([report]), csv_path)
    echo_report(report, header.get('metadata', {}).get('ablation') or ablation_name(model.config))
