from django import forms
from django.utils.translation import gettext_lazy as _

from core.binary_forms import FormError, HomogeneousForm
from core.corpus import function_names

P_CHOICES = {'1': 1.0, '2': 2.0, 'inf': float('inf')}


class HomogeneousFormField(forms.CharField):
    """Form token "m:a_0,...,a_m"."""

    def to_python(self, value):
        value = super().to_python(value)
        if value in self.empty_values:
            return None
        try:
            return HomogeneousForm.parse(value)
        except FormError as e:
            raise forms.ValidationError(_('Invalid form token: %(error)s'), params={'error': e})


class ExponentField(forms.CharField):
    """p in {1, 2, inf}."""

    def to_python(self, value):
        value = super().to_python(value)
        if value in self.empty_values:
            return None
        key = value.strip().lower()
        if key in ('infinity', 'max'):
            key = 'inf'
        try:
            key = {1.0: '1', 2.0: '2'}.get(float(key), key)
        except ValueError:
            pass
        if key not in P_CHOICES:
            raise forms.ValidationError(_('p must be one of 1, 2, inf; got %(value)s'), params={'value': value})
        return P_CHOICES[key]


class NumberListField(forms.CharField):
    """Comma-separated numbers."""

    def __init__(self, *args, number=float, increasing=False, positive=True, **kwargs):
        self.number = number
        self.increasing = increasing
        self.positive = positive
        super().__init__(*args, **kwargs)

    def to_python(self, value):
        value = super().to_python(value)
        if value in self.empty_values:
            return []
        try:
            numbers = [self.number(part) for part in value.split(',') if part.strip()]
        except ValueError:
            raise forms.ValidationError(_('Expected comma-separated numbers, got %(value)s'), params={'value': value})
        if not numbers:
            raise forms.ValidationError(_('At least one value is required'))
        if self.positive and min(numbers) <= 0:
            raise forms.ValidationError(_('All values must be positive'))
        if self.increasing and any(b <= a for a, b in zip(numbers, numbers[1:])):
            raise forms.ValidationError(_('Values must be strictly increasing'))
        return numbers


class CorpusChoiceField(forms.ChoiceField):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault('choices', [(name, name) for name in function_names()])
        super().__init__(*args, **kwargs)


class ShapeEvalForm(forms.Form):
    METHOD_CHOICES = (
        ('oracle', 'Oracle'),
        ('closed', 'Closed form'),
        ('ellipse', 'Maximal ellipse'),
        ('invariant', 'Invariant equivalent'),
    )

    form = HomogeneousFormField()
    p = ExponentField(required=False, initial='2')
    method = forms.ChoiceField(choices=METHOD_CHOICES, required=False, initial='oracle')
    cap = forms.FloatField(required=False, min_value=1e-9)

    def clean(self):
        cleaned_data = super().clean()
        pi = cleaned_data.get('form')
        method = cleaned_data.get('method') or 'oracle'
        cleaned_data['method'] = method
        if cleaned_data.get('p') is None:
            cleaned_data['p'] = 2.0
        if pi is not None:
            if method == 'closed' and pi.degree not in (2, 3):
                self.add_error('method', _('Closed forms exist only for m = 2 and m = 3'))
            if method in ('oracle', 'closed') and pi.degree < 2:
                self.add_error('form', _('Shape functions need m >= 2'))
        return cleaned_data


class ShapeSigmaForm(forms.Form):
    m = forms.TypedChoiceField(choices=((2, '2'), (3, '3')), coerce=int)
    p = ExponentField()
    cap = forms.FloatField(required=False, min_value=1e-9)


class MetricEvalForm(forms.Form):
    form = HomogeneousFormField()
    alpha = forms.FloatField(required=False)

    def clean_form(self):
        pi = self.cleaned_data['form']
        if pi.degree not in (2, 3):
            raise forms.ValidationError(_('Metrics are available for m = 2 and m = 3'))
        if pi.is_zero():
            raise forms.ValidationError(_('The zero form has no metric'))
        return pi

    def clean_alpha(self):
        alpha = self.cleaned_data.get('alpha')
        if alpha is not None and alpha <= 0:
            raise forms.ValidationError(_('alpha must be positive'))
        return alpha


class MetricFieldForm(forms.Form):
    fn = CorpusChoiceField()
    domain = forms.CharField(required=False)
    m = forms.TypedChoiceField(choices=((2, '2'), (3, '3')), coerce=int)
    p = ExponentField()
    nu = forms.FloatField()
    grid = forms.IntegerField(min_value=2, initial=64, required=False)
    alpha_floor = forms.FloatField(required=False)
    out = forms.CharField()

    def clean_nu(self):
        nu = self.cleaned_data['nu']
        if nu <= 0:
            raise forms.ValidationError(_('nu must be positive'))
        return nu


class MeshAdaptForm(forms.Form):
    fn = CorpusChoiceField()
    m = forms.IntegerField(min_value=2)
    p = ExponentField()
    N = forms.IntegerField(min_value=20)
    cap = forms.FloatField(required=False, min_value=1e-9)
    out = forms.CharField()

    def clean_p(self):
        p = self.cleaned_data['p']
        if p == float('inf'):
            raise forms.ValidationError(_('Adapted meshes require p < inf'))
        return p


class MeshUniformForm(forms.Form):
    n = forms.IntegerField(min_value=1)
    domain = forms.CharField(required=False)
    out = forms.CharField()


class StudyForm(forms.Form):
    STRATEGY_CHOICES = (
        ('adapted', 'Adapted'),
        ('uniform', 'Uniform'),
    )

    fn = CorpusChoiceField()
    m = forms.IntegerField(min_value=2)
    p = ExponentField()
    strategy = forms.ChoiceField(choices=STRATEGY_CHOICES)
    N = NumberListField(number=int, increasing=True)
    out = forms.CharField()


class LevelsetForm(forms.Form):
    form = HomogeneousFormField()
    alphas = NumberListField(required=False)
    out = forms.CharField()

    def clean_form(self):
        pi = self.cleaned_data['form']
        if pi.is_zero():
            raise forms.ValidationError(_('The zero form has no level set'))
        return pi


def form_errors(form: forms.Form) -> str:
    """Flatten form errors into one line for CommandError."""
    parts = []
    for name, errors in form.errors.items():
        label = 'input' if name == '__all__' else f'--{name}'
        parts.append(f"{label}: {' '.join(errors)}")
    return '; '.join(parts)
