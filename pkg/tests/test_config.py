import pytest

from app.config import (
    DEFAULT_CONFIG, apply_overrides, build_experiment_config, get_config_for_logging, load_config,
    save_config
)
from app.errors import ConfigurationError
from app.models.data import PartitionKind
from app.models.selection import SelectionKind
from main import main


def test_missing_file_gives_defaults(tmp_path):
    config = load_config(tmp_path / 'absent.yaml')
    assert config == DEFAULT_CONFIG
    config['dataset']['kind'] = 'synthetic'
    assert DEFAULT_CONFIG['dataset']['kind'] == 'digits'


def test_yaml_is_merged_over_defaults(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("seed: 7\ntraining:\n  lr: 0.2\n", encoding='utf-8')
    config = load_config(path)
    assert config['seed'] == 7
    assert config['training'] == {'lr': 0.2, 'epochs': DEFAULT_CONFIG['training']['epochs']}
    assert config['model'] == DEFAULT_CONFIG['model']


def test_empty_yaml_gives_defaults(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("", encoding='utf-8')
    assert load_config(path) == DEFAULT_CONFIG


def test_malformed_yaml_is_rejected(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("training: [lr: 0.1\n", encoding='utf-8')
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_non_mapping_yaml_is_rejected(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("- 1\n- 2\n", encoding='utf-8')
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_save_and_load(tmp_path):
    path = tmp_path / 'nested' / 'config.yaml'
    config = apply_overrides(DEFAULT_CONFIG, {'seed': 3, 'sls.chunk_size': 9})
    assert save_config(config, path)
    assert load_config(path) == config


def test_save_failure_returns_false(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x', encoding='utf-8')
    assert not save_config(DEFAULT_CONFIG, blocker / 'config.yaml')


def test_string_overrides_are_yaml_values():
    config = apply_overrides(DEFAULT_CONFIG, [
        'training.lr=0.1', 'algorithm=fedavg', 'privacy.known_total=null', 'baseline.shuffle=false'
    ])
    assert config['training']['lr'] == 0.1
    assert config['algorithm'] == 'fedavg'
    assert config['privacy']['known_total'] is None
    assert config['baseline']['shuffle'] is False
    assert DEFAULT_CONFIG['training']['lr'] == 0.05


def test_overrides_create_missing_sections():
    config = apply_overrides({}, {'a.b.c': 1})
    assert config == {'a': {'b': {'c': 1}}}


def test_override_without_equals_sign():
    with pytest.raises(ConfigurationError):
        apply_overrides(DEFAULT_CONFIG, ['training.lr'])


def test_secret_is_masked_for_logging():
    masked = get_config_for_logging(DEFAULT_CONFIG)
    assert masked['privacy']['key_seed'] == 'feds' + '*' * 7 + '-key'
    assert DEFAULT_CONFIG['privacy']['key_seed'] == 'fedsls-demo-key'

    short = get_config_for_logging(apply_overrides(DEFAULT_CONFIG, {'privacy.key_seed': 'abc'}))
    assert short['privacy']['key_seed'] == '***'


def test_default_experiment_config():
    config = build_experiment_config(DEFAULT_CONFIG)
    assert config.algorithm == 'sls-batch'
    assert config.partition.kind == PartitionKind.IID
    assert config.partition.seed == config.seed
    assert config.policy == SelectionKind.UNIFORM
    assert config.baseline.lr == config.lr
    assert config.baseline.algorithm == 'fedavg'
    assert config.key_seed == 'fedsls-demo-key'


def test_baseline_algorithm_is_taken_from_run():
    config = build_experiment_config(apply_overrides(DEFAULT_CONFIG, {'algorithm': 'fedprox'}))
    assert config.baseline.algorithm == 'fedprox'


@pytest.mark.parametrize('overrides, key', [
    ({'algorithm': 'fedsgd'}, 'algorithm'),
    ({'dataset.kind': 'mnist'}, 'dataset.kind'),
    ({'dataset.kind': 'idx'}, 'dataset.path'),
    ({'dataset.num_classes': 12}, 'dataset.num_classes'),
    ({'partition.kind': 'random'}, 'partition.kind'),
    ({'partition.kind': 'classes_per_client'}, 'partition.classes_per_client'),
    ({'model.kind': 'resnet'}, 'model.kind'),
    ({'model.norm': 'batch', 'algorithm': 'sls-single'}, 'model.norm'),
    ({'training.lr': -0.1}, 'training.lr'),
    ({'training.lr': 'fast'}, 'training.lr'),
    ({'training.epochs': 0}, 'training.epochs'),
    ({'sls.chunk_size': 0}, 'sls.chunk_size'),
    ({'model.norm': 'batch', 'algorithm': 'sls-batch', 'sls.batch_size': 1}, 'sls.batch_size'),
    ({'sls.policy': 'greedy'}, 'sls.policy'),
    ({'sls.frequency_mode': 'uniform'}, 'sls.frequency'),
    ({'sls.frequency_mode': 'capped_proportional'}, 'sls.cap'),
    ({'sls.hybrid_batch_epochs': 11}, 'sls.hybrid_batch_epochs'),
    ({'privacy.backend': 'paillier'}, 'privacy.backend'),
    ({'test_fraction': 1.0}, 'test_fraction'),
])
def test_invalid_settings_name_their_key(overrides, key):
    with pytest.raises(ConfigurationError) as info:
        build_experiment_config(apply_overrides(DEFAULT_CONFIG, overrides))
    assert key in str(info.value)


def test_cli_reports_configuration_errors(tmp_path, capsys):
    code = main(['run', '--config', str(tmp_path / 'absent.yaml'), '--algo', 'bogus',
                 '--out-dir', str(tmp_path)])
    assert code == 2
    assert 'ConfigurationError' in capsys.readouterr().err


def test_cli_report_on_empty_directory(tmp_path, capsys):
    assert main(['report', str(tmp_path)]) == 0
    assert 'metrics.csv' in capsys.readouterr().out
