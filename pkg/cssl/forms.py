"""
Every configuration document of the package (covariance manifests, solver
settings, hyper-parameters, generator settings and experiment plans) is
validated by a Django form.

Documents are nested JSON objects, so the forms nest as well:

* ``ConfigForm`` is the base class. It behaves like ``django.forms.Form``
  but also accepts composite fields.
* ``SectionField`` nests one form (a JSON object) and ``SectionListField``
  nests a formset (a JSON array of objects).

Here is an example::

    from django import forms
    from cssl.fields import SectionField, SectionListField
    from cssl.forms import ConfigForm, MethodForm, SolverConfigForm

    class SweepForm(ConfigForm):
        alpha = forms.FloatField()
        solver = SectionField(SolverConfigForm)
        methods = SectionListField(MethodForm)

    form = SweepForm.from_document({
        'alpha': 0.3,
        'solver': {'max_iter': 200},
        'methods': [{'name': 'cssl', 'p': 'inf'}],
    })
    if form.is_valid():
        document = form.cleaned_document()

``form.is_valid()`` propagates to the nested forms and formsets, and their
errors show up under the section name in ``form.errors``.
"""
import copy
import math
from collections import OrderedDict

import numpy as np
from django import forms
from django.core.exceptions import ValidationError
from django.forms.forms import DeclarativeFieldsMetaclass
from django.forms.utils import ErrorDict, ErrorList

from .bench import ExperimentPlan, MethodSpec
from .core import Hyperparams
from .fields import (
    CompositeField, ExtendedFloatField, FloatListField, IntegerListField,
    NormOrderField, PathListField, SectionField, SectionListField)
from .solver import SolverConfig
from .synthetic import GenConfig


class DeclarativeSectionsMetaclass(type):
    """
    Collects the ``CompositeField`` attributes of a form class and of its
    bases into ``base_composite_fields``, in declaration order. Setting an
    inherited section to ``None`` removes it.
    """

    def __new__(mcs, name, bases, attrs):
        own = sorted(
            ((key, value) for key, value in attrs.items()
             if isinstance(value, CompositeField)),
            key=lambda item: item[1].creation_counter)
        for key, _ in own:
            del attrs[key]
        attrs['declared_composite_fields'] = OrderedDict(own)
        new_class = super(DeclarativeSectionsMetaclass, mcs).__new__(
            mcs, name, bases, attrs)

        collected = OrderedDict()
        for base in reversed(new_class.__mro__):
            collected.update(base.__dict__.get('declared_composite_fields',
                                               {}))
            for attr, value in base.__dict__.items():
                if value is None:
                    collected.pop(attr, None)
        new_class.base_composite_fields = collected
        return new_class


class ConfigFormMetaclass(
        DeclarativeSectionsMetaclass,
        DeclarativeFieldsMetaclass):
    """
    Metaclass for :class:`~cssl.forms.ConfigForm`.
    """


def _encode(value):
    if isinstance(value, float) and math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return value


class ConfigFormMixin(object):
    """
    The base class for all config forms. It does not inherit from any other
    classes, so it can be mixed into any form class together with
    ``ConfigFormMetaclass``.
    """

    def __init__(self, *args, **kwargs):
        super(ConfigFormMixin, self).__init__(*args, **kwargs)
        self._init_composite_fields()

    @classmethod
    def flatten(cls, document, prefix=None, data=None):
        """
        Flatten a nested document into prefixed form data. Missing keys
        take the field's ``initial`` value. Unknown keys are an error.
        """
        data = {} if data is None else data
        unknown = sorted(set(document) - set(cls.base_fields) -
                         set(cls.base_composite_fields))
        if unknown:
            raise ValidationError(
                'Unknown key(s) {0}{1}.'.format(
                    ', '.join(repr(key) for key in unknown),
                    ' in {0!r}'.format(prefix) if prefix else ''),
                code='unknown')
        for name, field in cls.base_fields.items():
            value = document.get(name, field.initial)
            if value is None:
                continue
            key = '{0}-{1}'.format(prefix, name) if prefix else name
            data[key] = _encode(value)
        for name, field in cls.base_composite_fields.items():
            field.flatten(prefix, name, document.get(name), data)
        return data

    @classmethod
    def from_document(cls, document, prefix=None, **kwargs):
        """
        Return a bound form for a nested document.
        """
        if not isinstance(document, dict):
            raise ValidationError('A configuration document must be a JSON '
                                  'object.', code='document')
        return cls(data=cls.flatten(document, prefix), prefix=prefix,
                   **kwargs)

    def _init_composite_fields(self):
        # Every instance nests its own copies of the class-wide sections.
        self.composite_fields = copy.deepcopy(self.base_composite_fields)
        self.forms = OrderedDict()
        self.formsets = OrderedDict()
        for name, field in self.composite_fields.items():
            if isinstance(field, SectionListField):
                self.formsets[name] = field.get_formset(self, name)
            else:
                self.forms[name] = field.get_form(self, name)

    def full_clean(self):
        """
        Clean the form and every nested form and formset. A section with
        errors shows up in ``self.errors`` under its name: an ``ErrorDict``
        for a section, an ``ErrorList`` for a list.
        """
        super(ConfigFormMixin, self).full_clean()
        for name, section in self.forms.items():
            section.full_clean()
            if section._errors:
                self._errors[name] = ErrorDict(section._errors)
        for name, formset in self.formsets.items():
            formset.full_clean()
            errors = list(formset.non_form_errors())
            errors.extend(error for error in formset.errors if error)
            if errors:
                self._errors[name] = ErrorList(errors)

    def cleaned_document(self):
        """
        Rebuild the nested document from the cleaned values.
        """
        document = dict(self.cleaned_data)
        for name, form in self.forms.items():
            document[name] = form.cleaned_document()
        for name, formset in self.formsets.items():
            document[name] = [form.cleaned_document()
                              for form in formset.forms]
        return document

    def error_messages(self, path=''):
        """
        Flat list of ``"path.to.field: message"`` strings.
        """
        messages = []
        for name, errors in self.errors.items():
            if name in self.composite_fields:
                continue
            label = path + name if name != '__all__' else path.rstrip('.')
            for error in errors:
                messages.append('{0}: {1}'.format(label or 'document', error))
        for name, form in self.forms.items():
            messages.extend(form.error_messages('{0}{1}.'.format(path, name)))
        for name, formset in self.formsets.items():
            for error in formset.non_form_errors():
                messages.append('{0}{1}: {2}'.format(path, name, error))
            for index, form in enumerate(formset.forms):
                messages.extend(form.error_messages(
                    '{0}{1}[{2}].'.format(path, name, index)))
        return messages

    def raise_for_errors(self):
        """
        Raise a ``ValidationError`` listing every error unless the form is
        valid.
        """
        if not self.is_valid():
            raise ValidationError(self.error_messages(), code='invalid')


class ConfigForm(ConfigFormMixin, forms.Form,
                 metaclass=ConfigFormMetaclass):
    """
    The base class for config forms. It behaves like a normal Django form
    but also takes :class:`~cssl.fields.SectionField` and
    :class:`~cssl.fields.SectionListField`.
    """


class SolverConfigForm(ConfigForm):
    eps_gap = forms.FloatField(required=False, min_value=0)
    eps_pdgap = forms.FloatField(initial=1e-5, min_value=0)
    max_iter = forms.IntegerField(initial=1000, min_value=1)
    beta0 = forms.FloatField(initial=1.0, min_value=0)
    beta_min = forms.FloatField(initial=1e-4, min_value=0)
    beta_max = forms.FloatField(initial=1e4, min_value=0)
    adapt_beta = forms.BooleanField(required=False, initial=True)
    workers = forms.IntegerField(required=False, min_value=1)

    def clean(self):
        cleaned_data = super(SolverConfigForm, self).clean()
        if not self.errors:
            self._config(cleaned_data, 1)
        return cleaned_data

    def _config(self, data, workers):
        return SolverConfig(
            eps_gap=data.get('eps_gap'),
            eps_pdgap=data['eps_pdgap'],
            max_iter=data['max_iter'],
            beta0=data['beta0'],
            beta_bounds=(data['beta_min'], data['beta_max']),
            adapt_beta=data['adapt_beta'],
            workers=data.get('workers') or workers)

    def to_config(self, workers=1):
        """
        The typed :class:`~cssl.solver.SolverConfig`. ``workers`` applies
        when the document leaves it open.
        """
        return self._config(self.cleaned_data, workers)


class HyperparamsForm(ConfigForm):
    rho = ExtendedFloatField(min_value=0)
    gamma = ExtendedFloatField(min_value=0)
    p = NormOrderField(initial=2)
    penalize_diagonal = forms.BooleanField(required=False, initial=True)

    def clean(self):
        cleaned_data = super(HyperparamsForm, self).clean()
        if not self.errors and cleaned_data.get('rho') is not None and \
                cleaned_data.get('gamma') is not None:
            self.to_hyperparams()
        return cleaned_data

    def to_hyperparams(self):
        data = self.cleaned_data
        return Hyperparams(data['rho'], data['gamma'], data['p'],
                           data['penalize_diagonal'])


class FitForm(HyperparamsForm):
    """
    Settings of one fit: a manifest plus either explicit ``rho`` and
    ``gamma`` or an ``alpha`` for the scale-line heuristic.
    """

    manifest = forms.CharField()
    rho = ExtendedFloatField(required=False, min_value=0)
    gamma = ExtendedFloatField(required=False, min_value=0)
    alpha = forms.FloatField(required=False, min_value=0)
    heuristic = forms.BooleanField(required=False, initial=False)
    solver = SectionField(SolverConfigForm)

    def clean(self):
        cleaned_data = super(FitForm, self).clean()
        explicit = cleaned_data.get('rho') is not None and \
            cleaned_data.get('gamma') is not None
        if cleaned_data.get('heuristic'):
            if not cleaned_data.get('alpha'):
                raise ValidationError('The heuristic needs a positive alpha.',
                                      code='alpha')
        elif not explicit:
            raise ValidationError(
                'Give both rho and gamma, or alpha together with heuristic.',
                code='hyperparams')
        return cleaned_data


class ManifestForm(ConfigForm):
    """
    A covariance set on disk: either covariance matrices or datasets, with
    optional weights and sample counts. Paths are relative to the manifest.
    """

    matrices = PathListField(required=False)
    datasets = PathListField(required=False)
    weights = FloatListField(required=False)
    n_points = IntegerListField(required=False)
    diag_load = forms.FloatField(initial=0.0, min_value=0)
    center = forms.BooleanField(required=False, initial=False)
    zero_mean = forms.BooleanField(required=False, initial=False)

    def clean(self):
        cleaned_data = super(ManifestForm, self).clean()
        matrices = cleaned_data.get('matrices')
        datasets = cleaned_data.get('datasets')
        if bool(matrices) == bool(datasets):
            raise ValidationError(
                'List exactly one of matrices or datasets.', code='source')
        count = len(matrices or datasets)
        for name in ('weights', 'n_points'):
            values = cleaned_data.get(name)
            if values is not None and len(values) != count:
                self.add_error(name, 'Expected {0} values, got {1}.'.format(
                    count, len(values)))
        return cleaned_data


class GenConfigForm(ConfigForm):
    d = forms.IntegerField(min_value=1)
    N = forms.IntegerField(min_value=1)
    a = forms.IntegerField(required=False, min_value=1)
    b = forms.IntegerField(initial=2, min_value=1)
    target_density = forms.FloatField(initial=0.15)
    eig_floor = forms.FloatField(initial=0.05)
    seed = forms.IntegerField(initial=0, min_value=0)
    n_per_dataset = forms.IntegerField(required=False, min_value=0)

    def clean(self):
        cleaned_data = super(GenConfigForm, self).clean()
        if not self.errors:
            self.to_config()
        return cleaned_data

    def to_config(self):
        return GenConfig(**self.cleaned_data)


class MethodForm(ConfigForm):
    name = forms.ChoiceField(choices=[
        ('cssl', 'CSSL'),
        ('cssl_pooled', 'CSSL with gamma = inf'),
        ('sics', 'SICS'),
        ('msics', 'MSICS'),
    ])
    p = NormOrderField(initial=2)
    eps0 = forms.FloatField(required=False)

    def clean(self):
        cleaned_data = super(MethodForm, self).clean()
        if not self.errors:
            self.to_method()
        return cleaned_data

    def to_method(self):
        return MethodSpec(**self.cleaned_data)


class PlanForm(ConfigForm):
    """
    Fields shared by both experiment plans. ``alpha_grid`` may be given
    explicitly or as ``alpha_min``, ``alpha_max`` and ``alpha_count`` for a
    log-spaced grid.
    """

    dims = IntegerListField()
    runs = forms.IntegerField(initial=30, min_value=1)
    alpha_grid = FloatListField(required=False)
    density_target = forms.FloatField(initial=0.15)
    seed = forms.IntegerField(initial=0, min_value=0)
    samples_factor = forms.IntegerField(initial=5, min_value=1)
    eig_floor = forms.FloatField(initial=0.05)
    b = forms.IntegerField(initial=2, min_value=1)
    zero_tol = forms.FloatField(initial=1e-6, min_value=0)
    density_tol = forms.FloatField(initial=1e-8, min_value=0)
    workers = forms.IntegerField(required=False, min_value=1)
    methods = SectionListField(MethodForm, min_num=1)
    solver = SectionField(SolverConfigForm)

    def clean(self):
        cleaned_data = super(PlanForm, self).clean()
        if not cleaned_data.get('alpha_grid') and not self.errors:
            if cleaned_data['alpha_min'] <= 0 or \
                    cleaned_data['alpha_max'] < cleaned_data['alpha_min']:
                raise ValidationError(
                    'The alpha range needs 0 < alpha_min <= alpha_max.',
                    code='alpha_grid')
        return cleaned_data

    def alpha_values(self):
        data = self.cleaned_data
        if data.get('alpha_grid'):
            return sorted(data['alpha_grid'])
        grid = np.logspace(math.log10(data['alpha_min']),
                           math.log10(data['alpha_max']), data['alpha_count'])
        return [float(alpha) for alpha in grid]

    def plan_options(self):
        return {}

    def to_plan(self, workers=1):
        data = self.cleaned_data
        options = {
            name: data[name] for name in (
                'runs', 'density_target', 'seed', 'samples_factor',
                'eig_floor', 'b', 'zero_tol', 'density_tol')
        }
        options.update(self.plan_options())
        return ExperimentPlan(
            dims=tuple(data['dims']),
            alpha_grid=tuple(self.alpha_values()),
            methods=tuple(form.to_method()
                          for form in self.formsets['methods'].forms),
            experiment=data['experiment'],
            workers=data.get('workers') or workers,
            solver=self.forms['solver'].to_config(),
            **options)


class StructurePlanForm(PlanForm):
    experiment = forms.ChoiceField(choices=[('structure', 'structure')],
                                   initial='structure')
    N = forms.IntegerField(initial=5, min_value=2)
    alpha_min = forms.FloatField(initial=1e-2, min_value=0)
    alpha_max = forms.FloatField(initial=1.0, min_value=0)
    alpha_count = forms.IntegerField(initial=41, min_value=1)
    diag_load = forms.FloatField(initial=0.0, min_value=0)
    early_stop = forms.BooleanField(required=False, initial=True)

    def plan_options(self):
        data = self.cleaned_data
        return {'N': data['N'], 'diag_load': data['diag_load'],
                'early_stop': data['early_stop']}


class AnomalyPlanForm(PlanForm):
    experiment = forms.ChoiceField(choices=[('anomaly', 'anomaly')],
                                   initial='anomaly')
    n_normal = forms.IntegerField(initial=4, min_value=1)
    n_faulty = forms.IntegerField(initial=1, min_value=1)
    inject_fault = forms.BooleanField(required=False, initial=True)
    alpha_min = forms.FloatField(initial=10 ** -1.5, min_value=0)
    alpha_max = forms.FloatField(initial=10 ** -0.5, min_value=0)
    alpha_count = forms.IntegerField(initial=11, min_value=1)
    diag_load = forms.FloatField(initial=1e-3, min_value=0)

    def plan_options(self):
        data = self.cleaned_data
        return {
            'N': data['n_normal'] + data['n_faulty'],
            'n_normal': data['n_normal'],
            'n_faulty': data['n_faulty'],
            'inject_fault': data['inject_fault'],
            'diag_load': data['diag_load'],
            'early_stop': False,
        }


PLAN_FORMS = {
    'structure': StructurePlanForm,
    'anomaly': AnomalyPlanForm,
}


def plan_form(document):
    """
    Return the bound plan form matching the document's ``experiment``.
    """
    experiment = document.get('experiment', 'structure') \
        if isinstance(document, dict) else None
    if experiment not in PLAN_FORMS:
        raise ValidationError(
            'experiment must be one of {0}.'.format(', '.join(PLAN_FORMS)),
            code='experiment')
    return PLAN_FORMS[experiment].from_document(document)


class HeuristicForm(ConfigForm):
    manifest = forms.CharField()
    alpha = forms.FloatField(required=False, min_value=0)
    p = NormOrderField(initial=2)


class ExtractForm(ConfigForm):
    """
    Common edge extraction from a fit directory. Without ``eps0`` the exact
    rule on ``theta.csv`` and ``omega_i.csv`` is used, with it the
    threshold rule on ``lambda_i.csv``.
    """

    input = forms.CharField()
    eps0 = forms.FloatField(required=False)
    zero_tol = forms.FloatField(required=False, min_value=0)
    nonzero_tol = forms.FloatField(required=False, min_value=0)

    def clean_eps0(self):
        eps0 = self.cleaned_data.get('eps0')
        if eps0 is not None and not 0 < eps0 < 1:
            raise ValidationError('eps0 must lie in (0, 1).', code='eps0')
        return eps0


class EvaluateForm(ExtractForm):
    """
    Compare estimated precisions (``lambda_i.csv``) with the true ones
    (``precision_i.csv``). Common edges are detected below ``eps``, or
    below the ``eps0`` quantile of the entry variations.
    """

    input = None
    estimates = forms.CharField()
    truth = forms.CharField()
    eps = forms.FloatField(required=False, min_value=0)
    nonzero_tol = None


class AnomalyForm(ConfigForm):
    normal = PathListField()
    faulty = PathListField()
    labels = IntegerListField(required=False)
