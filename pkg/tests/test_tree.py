import pytest

from jvcs.domain import NA, Action
from jvcs.tree import IncompleteTree, attach, check_complete, iter_paths, leaf, path_probabilities, strategy_value


def tiny_optimal(tiny):
    root = leaf(tiny, tiny.initial_state())
    passed, failed = attach(tiny, root, Action("VA", 0))
    va_turn = attach(tiny, failed, NA)[0]
    attach(tiny, va_turn, NA)
    return root


class TestTree:
    def test_tiny_value(self, tiny):
        assert strategy_value(tiny, tiny_optimal(tiny)) == pytest.approx(15000.0, abs=1e-9)

    def test_paths(self, tiny):
        root = tiny_optimal(tiny)
        paths = list(iter_paths(root))
        assert len(paths) == 2
        assert path_probabilities(root) == pytest.approx([0.795, 0.205])
        assert [len(p.steps) for p in paths] == [1, 3]

    def test_shape(self, tiny):
        root = tiny_optimal(tiny)
        assert root.size() == 5 and root.depth() == 4

    def test_incomplete(self, tiny):
        root = leaf(tiny, tiny.initial_state())
        attach(tiny, root, Action("VA", 0))
        with pytest.raises(IncompleteTree):
            check_complete(tiny, root)
        with pytest.raises(IncompleteTree):
            strategy_value(tiny, root)

    def test_leaf_marks_terminal(self, tiny):
        root = leaf(tiny, tiny.initial_state())
        passed, _ = attach(tiny, root, Action("VA", 0))
        assert root.terminal is None and passed.terminal == "ThresholdMet"
