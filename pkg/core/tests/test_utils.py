import os

import pytest

from core.utils import ConfigError, RunConfig, load_config, read_csv_table, worker_count, write_csv_table


class TestRunConfig:
    def test_defaults_from_settings(self, settings):
        settings.SHAPE_CAP = 32.0
        settings.ANISOSHAPE_THREADS = 3
        config = RunConfig.from_settings()
        assert config.shape_cap == 32.0
        assert config.threads == 3

    def test_file_overrides(self, tmp_path):
        path = tmp_path / 'run.env'
        path.write_text("SHAPE_GRID=12,12,8\nLATTICE_SAMPLES=32\nANISOSHAPE_THREADS=2\nSTUDY_SEED=0x10\n")
        config = load_config(str(path))
        assert config.shape_grid == (12, 12, 8)
        assert config.lattice_samples == 32
        assert config.threads == 2
        assert config.study_seed == 16
        assert 'LATTICE_SAMPLES' not in os.environ

    def test_unknown_key(self, tmp_path):
        path = tmp_path / 'run.env'
        path.write_text("SHAPE_RADIUS=3\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_file(str(tmp_path / 'absent.env'))

    @pytest.mark.parametrize("values", [{'shape_cap': '-1'}, {'threads': '0'}, {'shape_grid': '8,8'},
                                        {'lattice_samples': 'many'}, {'macro_tiles': '0'}])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(values)

    def test_worker_count_floor(self, settings):
        settings.ANISOSHAPE_THREADS = 0
        assert worker_count() == 1


class TestCsvTable:
    def test_layout(self, tmp_path):
        path = tmp_path / 'table.csv'
        count = write_csv_table(str(path), ['a', 'b'], [[1, '0.5'], [2, 'nan']], comments=['k=v w=1', 'note'])
        assert count == 2
        assert path.read_text().splitlines() == ['# k=v w=1', '# note', 'a,b', '1,0.5', '2,nan']

    def test_read_back(self, tmp_path):
        path = tmp_path / 'table.csv'
        write_csv_table(str(path), ['x', 'y'], iter([['1', 'text, with comma']]), comments=['seed=3'])
        comments, columns, records = read_csv_table(str(path))
        assert comments == ['seed=3']
        assert columns == ['x', 'y']
        assert records == [['1', 'text, with comma']]

    def test_no_comments(self, tmp_path):
        path = tmp_path / 'table.csv'
        write_csv_table(str(path), ['x'], [])
        assert read_csv_table(str(path)) == ([], ['x'], [])
