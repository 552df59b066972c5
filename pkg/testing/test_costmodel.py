import pytest

from modules.costmodel import (
    CostEntry, CostTable, apply_overrides, cost_for, default_tables, energy_savings, load_cost_table,
    save_cost_table, speedup,
)
from modules.numeric import BASELINE, FixedFormat, FloatFormat, parse_format
from utils.errors import CostTableError, DomainError


@pytest.fixture(scope="module")
def tables():
    return default_tables()


def _two_point_table(kind='float'):
    return CostTable(kind, [CostEntry(8, 0.5, 0.25, 0.5), CostEntry(32, 1.0, 1.0, 1.0)])


# ============================================================
# DEFAULT TABLES
# ============================================================

@pytest.mark.parametrize('literal, expected_speedup, expected_energy', [
    ('float:m7e6', 7.2, 3.4),
    ('float:m8e6', 5.7, 3.0),
])
def test_default_float_anchors(tables, literal, expected_speedup, expected_energy):
    speed, energy = cost_for(parse_format(literal), tables)
    assert speed == pytest.approx(expected_speedup, abs=0.05)
    assert energy == pytest.approx(expected_energy, abs=0.05)


def test_baseline_costs_nothing(tables):
    assert cost_for(BASELINE, tables) == (1.0, 1.0)
    assert speedup(BASELINE, tables.float) == 1.0
    assert energy_savings(BASELINE, tables.fixed) == 1.0


def test_full_width_matches_baseline(tables):
    assert speedup(FloatFormat(23, 8), tables.float) == pytest.approx(1.0)
    assert energy_savings(FloatFormat(23, 8), tables.float) == pytest.approx(1.0)
    assert speedup(FixedFormat(16, 15), tables.fixed) == pytest.approx(1.0)


def test_default_table_ranges(tables):
    assert tables.float.entries[0].total_bits == 12
    assert tables.float.entries[-1].total_bits == 32
    assert tables.fixed.entries[0].total_bits == 2
    assert tables.fixed.entries[-1].total_bits == 32


def test_fixed_ratios_scale_with_width(tables):
    assert tables.fixed.ratios(8) == pytest.approx((0.25, 0.25, 0.25))
    assert cost_for(FixedFormat(4, 3), tables) == pytest.approx((16.0, 4.0))


@pytest.mark.parametrize('kind', ['float', 'fixed'])
def test_narrower_is_never_slower(tables, kind):
    table = tables.for_kind(kind)
    low = int(table.widths[0])
    speeds, energies = [], []
    for width in range(low, 33):
        delay, area, energy = table.ratios(width)
        assert delay > 0 and area > 0 and energy > 0
        speeds.append(1.0 / (delay * area))
        energies.append(1.0 / energy)
    assert all(a >= b for a, b in zip(speeds, speeds[1:]))
    assert all(a >= b for a, b in zip(energies, energies[1:]))


def test_kind_mismatch(tables):
    with pytest.raises(DomainError):
        speedup(FloatFormat(7, 6), tables.fixed)
    with pytest.raises(DomainError):
        energy_savings(FixedFormat(8, 8), tables.float)


# ============================================================
# INTERPOLATION
# ============================================================

def test_two_point_table_exact_and_interpolated():
    table = _two_point_table()
    assert speedup(FloatFormat(2, 5), table) == pytest.approx(8.0)
    assert energy_savings(FloatFormat(2, 5), table) == pytest.approx(2.0)
    # width 20: delay 0.75, area 0.625
    assert speedup(FloatFormat(10, 9), table) == pytest.approx(1.0 / (0.75 * 0.625))


def test_queries_outside_table_clamp():
    table = _two_point_table()
    assert speedup(FloatFormat(1, 2), table) == pytest.approx(8.0)
    assert table.ratios(40) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize('entries, match', [
    ([CostEntry(8, 0.5, 0.5, 0.5)], 'two entries'),
    ([CostEntry(16, 0.5, 0.5, 0.5), CostEntry(8, 0.2, 0.2, 0.2)], 'increasing'),
    ([CostEntry(8, 0.5, 0.5, 0.5), CostEntry(8, 0.6, 0.6, 0.6)], 'increasing'),
    ([CostEntry(8, 0.0, 0.5, 0.5), CostEntry(32, 1.0, 1.0, 1.0)], 'nonpositive'),
    ([CostEntry(8, 0.5, 0.5, 0.5), CostEntry(32, 1.0, 2.0, 1.0)], 'baseline width'),
])
def test_invalid_tables(entries, match):
    with pytest.raises(CostTableError, match=match):
        CostTable('float', entries)


def test_invalid_kind():
    with pytest.raises(CostTableError, match='kind'):
        CostTable('posit', [CostEntry(8, 0.5, 0.5, 0.5), CostEntry(32, 1, 1, 1)])


# ============================================================
# TABLE FILES
# ============================================================

def test_table_file_round_trip(tmp_path, tables):
    save_cost_table(tables.float, tmp_path / 'float.txt')
    loaded = load_cost_table(tmp_path / 'float.txt')
    assert loaded.kind == 'float'
    assert loaded.entries == tables.float.entries


def test_table_file_with_comments(tmp_path):
    (tmp_path / 'fixed.txt').write_text(
        "# measured on the bench\n"
        "kind: fixed\n"
        "\n"
        "8  0.5 0.25 0.5   # narrow\n"
        "32 1   1    1\n"
    )
    table = load_cost_table(tmp_path / 'fixed.txt')
    assert table.kind == 'fixed'
    assert table.source == str(tmp_path / 'fixed.txt')
    assert speedup(FixedFormat(4, 3), table) == pytest.approx(8.0)


@pytest.mark.parametrize('text, match', [
    ("8 0.5 0.5 0.5\n32 1 1 1\n", 'header'),
    ("# only a comment\n", "missing 'kind:'"),
    ("kind: float\n8 0.5 fast 0.5\n32 1 1 1\n", 'four numbers'),
    ("kind: float\n8.5 0.5 0.5 0.5\n32 1 1 1\n", 'integers'),
    ("kind: float\n32 1 1 1\n8 0.5 0.5 0.5\n", 'increasing'),
    ("kind: float\n", 'two entries'),
    ("kind: posit\n8 0.5 0.5 0.5\n32 1 1 1\n", 'kind'),
    ("kind: float\n8 0.5 0.5 0.5\n32 0.5 0.5 0.5\n", 'baseline width'),
    ("kind: fixed\n8 0.5 0.5 0.5\n32 1 1 0.9\n", 'baseline width'),
])
def test_malformed_table_files(tmp_path, text, match):
    (tmp_path / 'table.txt').write_text(text)
    with pytest.raises(CostTableError, match=match):
        load_cost_table(tmp_path / 'table.txt')


def test_missing_table_file(tmp_path):
    with pytest.raises(CostTableError, match='not found'):
        load_cost_table(tmp_path / 'absent.txt')


def test_overrides_slot_by_kind(tmp_path, tables):
    (tmp_path / 'fixed.txt').write_text("kind: fixed\n8 0.5 0.25 0.5\n32 1 1 1\n")
    replaced = apply_overrides(tables, [tmp_path / 'fixed.txt'])
    assert replaced.float is tables.float
    assert cost_for(FixedFormat(4, 3), replaced) == pytest.approx((8.0, 2.0))
    assert apply_overrides(tables, []) == tables
