import itertools
import math

from django import forms
from django.core.exceptions import ValidationError
from django.forms.formsets import formset_factory

from .core import parse_norm_order

_counter = itertools.count()


class CompositeField(object):
    """
    A form attribute that stands for a nested form or formset rather than a
    single value. Subclasses set ``prefix_name`` and build the nested object
    in ``get_form()`` or ``get_formset()``.

    ``kwargs`` is passed on to the nested form or formset.
    """

    prefix_name = 'composite'

    def __init__(self, kwargs=None):
        self.extra_kwargs = dict(kwargs or {})
        # Declaration order of the composite fields on a form.
        self.creation_counter = next(_counter)

    def prefix_for(self, form_prefix, name):
        head = '{0}-'.format(form_prefix) if form_prefix else ''
        return '{0}{1}-{2}'.format(head, self.prefix_name, name)

    def get_prefix(self, form, name):
        """
        Prefix of the nested keys, e.g. ``section-solver``.
        """
        return self.prefix_for(form.prefix, name)

    def get_kwargs(self, form, name):
        kwargs = {'prefix': self.get_prefix(form, name)}
        kwargs.update(self.extra_kwargs)
        return kwargs

    @staticmethod
    def bound_data(form):
        return form.data if form.is_bound else None


class SectionField(CompositeField):
    """
    Nests one config form inside another. In a document the section is a
    JSON object::

        class FitForm(ConfigForm):
            alpha = forms.FloatField()
            solver = SectionField(SolverConfigForm)

        FitForm.from_document({'alpha': 0.3, 'solver': {'max_iter': 50}})

    The keys of the nested form carry the prefix ``section-solver``. A
    missing section is validated from the nested form's defaults.
    """

    prefix_name = 'section'

    def __init__(self, form_class, kwargs=None):
        super(SectionField, self).__init__(kwargs)
        self.form_class = form_class

    def get_form_class(self, form, name):
        return self.form_class

    def get_form(self, form, name):
        form_class = self.get_form_class(form, name)
        return form_class(data=self.bound_data(form),
                          **self.get_kwargs(form, name))

    def flatten(self, form_prefix, name, value, data):
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ValidationError(
                'Section {0!r} must be an object.'.format(name),
                code='section')
        self.form_class.flatten(value, self.prefix_for(form_prefix, name),
                                data)


class SectionListField(CompositeField):
    """
    Nests a list of config forms. In a document the list is a JSON array of
    objects. The formset is built with ``formset_factory`` from
    ``form_class`` unless ``formset_class`` is given; ``min_num`` entries
    are required.
    """

    prefix_name = 'list'

    def __init__(self, form_class, formset_class=None, kwargs=None,
                 min_num=0):
        super(SectionListField, self).__init__(kwargs)
        self.form_class = form_class
        self.formset_class = formset_class
        self.min_num = min_num

    def get_formset_class(self, form, name):
        if self.formset_class is not None:
            return self.formset_class
        return formset_factory(self.form_class, extra=0,
                               min_num=self.min_num, validate_min=True)

    def get_formset(self, form, name):
        formset_class = self.get_formset_class(form, name)
        return formset_class(self.bound_data(form),
                             **self.get_kwargs(form, name))

    def flatten(self, form_prefix, name, value, data):
        if value is None:
            value = []
        if not isinstance(value, (list, tuple)):
            raise ValidationError(
                'List {0!r} must be an array of objects.'.format(name),
                code='list')
        prefix = self.prefix_for(form_prefix, name)
        data['{0}-TOTAL_FORMS'.format(prefix)] = str(len(value))
        data['{0}-INITIAL_FORMS'.format(prefix)] = str(len(value))
        for index, item in enumerate(value):
            if not isinstance(item, dict):
                raise ValidationError(
                    'Entry {0} of {1!r} must be an object.'.format(
                        index, name), code='list')
            self.form_class.flatten(item, '{0}-{1}'.format(prefix, index),
                                    data)


class ExtendedFloatField(forms.FloatField):
    """
    A ``FloatField`` that also accepts ``inf`` (spelled as a number or as the
    string ``"inf"``). ``nan`` stays invalid.
    """

    def validate(self, value):
        if value is not None and math.isnan(value):
            raise ValidationError(self.error_messages['invalid'],
                                  code='invalid')
        forms.Field.validate(self, value)


class NormOrderField(forms.Field):
    """
    A norm order out of 1, 2 and ``inf``.
    """

    def to_python(self, value):
        if value in self.empty_values:
            return None
        return parse_norm_order(value)


class _ListField(forms.Field):
    item_type = str

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if isinstance(value, str):
            value = [item.strip() for item in value.split(',')
                     if item.strip()]
        if not isinstance(value, (list, tuple)):
            raise ValidationError('Enter a list of values.', code='invalid')
        try:
            return [self.item_type(item) for item in value]
        except (TypeError, ValueError):
            raise ValidationError(
                'Enter a list of {0} values.'.format(self.item_type.__name__),
                code='invalid')


class FloatListField(_ListField):
    item_type = float


class IntegerListField(_ListField):
    item_type = int


class PathListField(_ListField):
    item_type = str
