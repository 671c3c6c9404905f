import pytest

from volseg.config import ENV_VAR, format_config, load_config, parse_config, to_bool
from volseg.exceptions import SpecError


def test_parse_config():
    text = '# defaults\n\nthreshold = 55\nMin-Component=50\nmorph=open:1.25,close:2\n'

    assert parse_config(text) == {'threshold': '55',
                                  'min_component': '50',
                                  'morph': 'open:1.25,close:2'}


def test_parse_config_rejects_malformed_line():
    with pytest.raises(SpecError, match='line|expected'):
        parse_config('threshold 55\n', source='site.cfg')


def test_format_then_parse():
    values = {'threshold': 'otsu', 'voi_box': 'false'}

    assert parse_config(format_config(values)) == values


def test_load_config_precedence(tmp_path, monkeypatch):
    (tmp_path / 'site.cfg').write_text('threshold=40\nthreads=2\n')
    (tmp_path / 'run.cfg').write_text('threshold=60\n')
    monkeypatch.setenv(ENV_VAR, str(tmp_path / 'site.cfg'))

    assert load_config() == {'threshold': '40', 'threads': '2'}
    assert load_config(tmp_path / 'run.cfg') == {'threshold': '60', 'threads': '2'}


def test_load_config_missing_file(tmp_path, monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)

    assert load_config() == {}
    with pytest.raises(SpecError):
        load_config(tmp_path / 'absent.cfg')


@pytest.mark.parametrize('text, expected', [('true', True), ('On', True), ('1', True),
                                            ('no', False), ('FALSE', False), (False, False)])
def test_to_bool(text, expected):
    assert to_bool(text) is expected


def test_to_bool_rejects_other_values():
    with pytest.raises(SpecError):
        to_bool('maybe')
