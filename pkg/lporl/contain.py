"""Container classes and utilities for persisting traces, datasets and summaries."""

import csv
import json
import os
from dataclasses import fields

import numpy as np
import tabulate

from .exceptions import ValidationError
from .helper import SanitationUtils
from .log import PKG_LOGGER
from .pd_discounted import TraceRow
from .sampling import Dataset, TransitionBatch


def dump_json(data, dump_path):
    with open(dump_path, 'w') as dump_file:
        json.dump(SanitationUtils.to_jsonable(data), dump_file, indent=1, sort_keys=True)
        dump_file.write('\n')


def load_json(load_path):
    with open(load_path) as load_file:
        return json.load(load_file)


class RecordGroup(object):
    names = []

    @classmethod
    def dump_items_csv(cls, items, dump_path, names=None, flatten_attr=None):
        if names is None:
            names = cls.names
        try:
            dump_file = open(dump_path, 'w', newline='')
        except IOError as exc:
            PKG_LOGGER.error("file %s could not be opened: %r", dump_path, exc)
            raise
        with dump_file:
            writer = csv.DictWriter(dump_file, names, extrasaction='ignore')
            writer.writeheader()
            for item in items:
                if flatten_attr:
                    item = getattr(item, flatten_attr)()
                writer.writerow({
                    key: SanitationUtils.to_cell(value) for key, value in item.items()
                })
        PKG_LOGGER.debug("wrote %s", dump_path)

    @classmethod
    def load_items_csv(cls, load_path):
        with open(load_path, newline='') as load_file:
            return list(csv.DictReader(load_file))

    @classmethod
    def dump_items_table(cls, items, names=None, flatten_attr=None):
        if names is None:
            names = cls.names
        rows = []
        for item in items:
            if flatten_attr:
                item = getattr(item, flatten_attr)()
            rows.append([item.get(name) for name in names])
        return tabulate.tabulate(rows, headers=names, floatfmt='.6g')


class TraceGroup(RecordGroup):
    names = [field.name for field in fields(TraceRow)]

    @classmethod
    def dump_trace_csv(cls, trace, dump_path):
        cls.dump_items_csv(trace, dump_path, flatten_attr='flatten')

    @classmethod
    def dump_trace_table(cls, trace):
        names = [name for name in cls.names
                 if any(getattr(row, name) is not None for row in trace)]
        return cls.dump_items_table(trace, names, flatten_attr='flatten')


class DatasetGroup(RecordGroup):
    """Dataset as CSV, one record per row, plus a JSON sidecar with its provenance."""
    names = ['x0', 'x', 'a', 'r', 'x_next']

    @classmethod
    def sidecar_path(cls, csv_path):
        return os.path.splitext(csv_path)[0] + '.json'

    @classmethod
    def dump_dataset(cls, dataset, dump_path):
        records = dataset.records
        rows = (
            {'x0': x0 if x0 >= 0 else None, 'x': x, 'a': a, 'r': r, 'x_next': x_next}
            for x0, x, a, r, x_next in zip(
                records.x0.tolist(), records.x.tolist(), records.a.tolist(),
                records.r.tolist(), records.x_next.tolist())
        )
        cls.dump_items_csv(rows, dump_path)
        dump_json(dataset.sidecar(), cls.sidecar_path(dump_path))

    @classmethod
    def load_dataset(cls, load_path, mdp=None):
        sidecar = load_json(cls.sidecar_path(load_path))
        if mdp is not None and sidecar.get('mdp_hash') not in (None, mdp.digest()):
            raise ValidationError("dataset %s was drawn from MDP %s, not %s" % (
                load_path, sidecar.get('mdp_hash'), mdp.digest()))
        rows = cls.load_items_csv(load_path)
        if len(rows) != sidecar.get('n', len(rows)):
            raise ValidationError("dataset %s has %d rows, sidecar says %s" % (
                load_path, len(rows), sidecar.get('n')))
        records = TransitionBatch(
            x0=np.array([int(row['x0']) if row['x0'] else -1 for row in rows], dtype=np.int64),
            x=np.array([int(row['x']) for row in rows], dtype=np.int64),
            a=np.array([int(row['a']) for row in rows], dtype=np.int64),
            r=np.array([float(row['r']) for row in rows], dtype=float),
            x_next=np.array([int(row['x_next']) for row in rows], dtype=np.int64),
        )
        return Dataset(
            records=records,
            setting=sidecar['setting'],
            seed=sidecar['seed'],
            source=sidecar.get('source'),
            behavior_spec=sidecar.get('behavior'),
            mdp_digest=sidecar.get('mdp_hash'),
        )


class SweepGroup(RecordGroup):
    names = [
        'point', 'num_samples', 'behavior_epsilon', 'c', 'seed',
        'suboptimality', 'mixture_return', 'optimal_return', 'gap', 'coverage_ratio',
        'samples_used', 'T', 'K', 'subopt_median', 'subopt_iqr',
    ]

    @classmethod
    def dump_sweep_csv(cls, rows, dump_path):
        cls.dump_items_csv(rows, dump_path)

    @classmethod
    def dump_sweep_table(cls, rows):
        names = ['point', 'num_samples', 'behavior_epsilon', 'c', 'seed',
                 'suboptimality', 'subopt_median', 'subopt_iqr']
        return cls.dump_items_table(rows, names)


class SummaryGroup(RecordGroup):
    names = ['setting', 'seed', 'suboptimality', 'mixture_return', 'optimal_return',
             'output_return', 'gap', 'samples_used']

    @classmethod
    def flatten_summary(cls, summary):
        flattened = {name: summary.get(name) for name in cls.names}
        flattened['gap'] = (summary.get('gap_report') or {}).get('gap')
        return flattened

    @classmethod
    def dump_summaries_table(cls, summaries):
        return cls.dump_items_table([cls.flatten_summary(summary) for summary in summaries])


def dump_key_values_table(pairs, headers=('quantity', 'value')):
    return tabulate.tabulate(list(pairs), headers=list(headers), floatfmt='.6g')
