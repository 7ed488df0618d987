import csv
from vtubes import report
from vtubes.base import TubeFlag, tabulate, grammar_list, canonical_json
from vtubes.evaluate import LocBin, MotResult

def test_tabulate_aligns_columns():
    lines = tabulate([['a', 'bbb'], ['cc', 'd']], ' | ', [True, False])
    assert lines == ['a  | bbb', 'cc |   d']

def test_flag_codestring():
    code = TubeFlag.EGO_FALLBACK.value | TubeFlag.BUDGET_EXHAUSTED.value
    assert TubeFlag.codestring(code) == 'EGO_FALLBACK|BUDGET_EXHAUSTED'
    assert TubeFlag.from_codestring('EGO_FALLBACK|BUDGET_EXHAUSTED') == code
    assert TubeFlag.codestring(0) == ''

def test_grammar_list():
    assert grammar_list(['a']) == 'a'
    assert grammar_list(['a', 'b', 'c']) == 'a, b and c'

def test_canonical_json_sorts_keys():
    assert canonical_json({ 'b': 1, 'a': (2, 3) }) == '{"a": [2, 3], "b": 1}'

def test_tables():
    mot = MotResult(9, 1, 0, 0, 10, [])
    lines = report.mot_table({ 'selected': mot })
    assert len(lines) == 2 and '0.9000' in lines[1]
    lines = report.loc_table([LocBin(0.0, 10.0, 4, 0.5, None)])
    assert lines[1].split() == ['0-10', '4', '0.500', '-']

def test_recall_csv(tmp_path):
    path = str(tmp_path / 'recall.csv')
    report.write_recall_csv(path, { 'a': [(1, 0.5), (2, 1.0)],
        'b': [(1, 0.25), (2, 0.75)] })
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows == [['k', 'a', 'b'], ['1', '0.5', '0.25'], ['2', '1.0', '0.75']]
